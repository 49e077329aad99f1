"""Full reranking model: parameter construction, forward pass, loss.

Ablated components are absent from the parameter inventory, not merely
skipped: their contribution to the scoring input is a zero block of the same
width, so output shapes never change across variants.
"""

from __future__ import annotations

import math
import zlib

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import TrainConfig
from .embedding import EmbeddingTable, PageBatch, embed_history, embed_page
from .errors import ConfigError
from .hds_attn import (AggregationParams, DualSideParams, candidate_self_attention,
                       dual_side_attention, item_level_aggregation,
                       list_level_aggregation, list_level_self_attention)
from .layout import PageLayout, manhattan_distance_matrix
from .scoring import (DenseNetParams, MMoEParams, SingleMlpParams, bce_loss,
                      dense_network, mmoe_score, single_mlp_score)
from .ss_attn import SSAttnParams, spatial_scaled_attention


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    limit = math.sqrt(6.0 / (shape[-2] + shape[-1]))
    return rng.uniform(-limit, limit, size=shape)


def _vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    limit = 1.0 / math.sqrt(dim)
    return rng.uniform(-limit, limit, size=(dim, 1))


class ParModel:
    """Holds every trainable tensor and runs the page-scoring forward pass.

    Each parameter is initialized from a stream derived from (seed, name), so
    parameters shared between ablation variants start from identical values
    and variant comparisons are paired.
    """

    def __init__(self, config: TrainConfig, layout: PageLayout, seed: int):
        if layout.n != config.n or layout.m != config.m:
            raise ConfigError(f"layout ({layout.n}x{layout.m}) does not match "
                              f"config ({config.n}x{config.m})")
        self.config = config
        self.layout = layout
        self.seed = int(seed)
        self.distances = manhattan_distance_matrix(layout)
        self._params: dict[str, Tensor] = {}
        c = config

        self.item_table = EmbeddingTable(c.vocab_size, c.d_x, self._stream("emb.item"))
        self.category_table = EmbeddingTable(c.n_categories, c.d_x,
                                             self._stream("emb.category"))
        self._register("emb.item", self.item_table.weights)
        self._register("emb.category", self.category_table.weights)
        if c.d_h == c.d_x:
            self.hist_item_table = self.item_table
            self.hist_category_table = self.category_table
        else:
            self.hist_item_table = EmbeddingTable(c.vocab_size, c.d_h,
                                                  self._stream("emb.item_hist"))
            self.hist_category_table = EmbeddingTable(c.n_categories, c.d_h,
                                                      self._stream("emb.category_hist"))
            self._register("emb.item_hist", self.hist_item_table.weights)
            self._register("emb.category_hist", self.hist_category_table.weights)

        self.dual: DualSideParams | None = None
        self.agg: AggregationParams | None = None
        if not c.hdsa:
            if not c.dsa:
                self.dual = DualSideParams(
                    w_a=self._glorot("hds.w_a", (c.n, c.d_h, c.d_x)),
                    w_x=self._glorot("hds.w_x", (c.n, c.d_x, c.m)),
                    w_h=self._glorot("hds.w_h", (c.n, c.d_h, c.m)),
                )
            self.agg = AggregationParams(
                w_l=self._glorot("hds.w_l", (c.d_l, c.d_l)),
                b_l=self._zeros("hds.b_l", (c.d_l,)),
                q_item=self._query("hds.q_item", c.d_l),
                w_p=self._glorot("hds.w_p", (c.d_l, c.d_l)),
                b_p=self._zeros("hds.b_p", (c.d_l,)),
                q_list=self._query("hds.q_list", c.d_l),
            )

        self.ss: SSAttnParams | None = None
        if not c.ssa:
            steep = None if c.scale else self._zeros("ss.v", (c.heads,))
            self.ss = SSAttnParams(
                w_q=self._glorot("ss.w_q", (c.heads, c.d_x, c.d_a)),
                w_k=self._glorot("ss.w_k", (c.heads, c.d_x, c.d_a)),
                w_v=self._glorot("ss.w_v", (c.heads, c.d_x, c.d_a)),
                v=steep,
                w_o=self._glorot("ss.w_o", (c.heads * c.d_a, c.d_o)),
                sigma=c.sigma,
            )

        self.dense: DenseNetParams | None = None
        if not c.dn:
            dims = (c.d_x,) + c.dense_hidden + (c.d_r,)
            self.dense = DenseNetParams(
                weights=[self._glorot(f"dense.w{i}", (dims[i], dims[i + 1]))
                         for i in range(len(dims) - 1)],
                biases=[self._zeros(f"dense.b{i}", (dims[i + 1],))
                        for i in range(len(dims) - 1)],
            )

        d_z = c.d_l + c.d_r + c.d_o
        self.moe: MMoEParams | None = None
        self.head: SingleMlpParams | None = None
        if not c.mmoe:
            e_dims = (d_z,) + c.expert_hidden
            t_dims = (c.expert_hidden[-1],) + c.tower_hidden + (1,)
            self.moe = MMoEParams(
                expert_weights=[self._glorot(f"moe.expert_w{i}",
                                             (c.experts, e_dims[i], e_dims[i + 1]))
                                for i in range(len(e_dims) - 1)],
                expert_biases=[self._zeros(f"moe.expert_b{i}", (c.experts, e_dims[i + 1]))
                               for i in range(len(e_dims) - 1)],
                gate_w=self._glorot("moe.gate_w", (c.n, d_z, c.experts)),
                gate_b=self._zeros("moe.gate_b", (c.n, c.experts)),
                tower_weights=[self._glorot(f"moe.tower_w{i}",
                                            (c.n, t_dims[i], t_dims[i + 1]))
                               for i in range(len(t_dims) - 1)],
                tower_biases=[self._zeros(f"moe.tower_b{i}", (c.n, t_dims[i + 1]))
                              for i in range(len(t_dims) - 1)],
            )
        else:
            h_dims = (d_z,) + c.expert_hidden + (1,)
            self.head = SingleMlpParams(
                weights=[self._glorot(f"head.w{i}", (h_dims[i], h_dims[i + 1]))
                         for i in range(len(h_dims) - 1)],
                biases=[self._zeros(f"head.b{i}", (h_dims[i + 1],))
                        for i in range(len(h_dims) - 1)],
            )

    # -- parameter bookkeeping ------------------------------------------

    def _stream(self, name: str) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence([self.seed, zlib.crc32(name.encode())]))

    def _register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name '{name}'")
        self._params[name] = tensor
        return tensor

    def _new(self, name: str, values: np.ndarray) -> Tensor:
        return self._register(name, Tensor(values, requires_grad=True))

    def _glorot(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._new(name, _glorot(self._stream(name), shape))

    def _zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._new(name, np.zeros(shape))

    def _query(self, name: str, dim: int) -> Tensor:
        return self._new(name, _vector(self._stream(name), dim))

    @property
    def params(self) -> dict[str, Tensor]:
        return self._params

    def param_names(self) -> list[str]:
        return list(self._params)

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    # -- forward ----------------------------------------------------------

    def forward(self, batch: PageBatch) -> Tensor:
        """Score every slot: (b, n, m) in (0, 1)."""
        c = self.config
        b, n, m = batch.items.shape
        if (n, m) != (c.n, c.m):
            raise ConfigError(f"batch shaped {n}x{m} but model built for {c.n}x{c.m}")

        x_emb = embed_page(batch, self.item_table, self.category_table)

        if c.hdsa:
            page_vec = Tensor(np.zeros((b, c.d_l)))
        else:
            if c.dsa:
                x_t, h_t = candidate_self_attention(x_emb, batch.mask)
                if c.d_h != c.d_x:
                    h_t = Tensor(np.zeros((b, n, m, c.d_h)))
            else:
                h_emb = embed_history(batch, self.hist_item_table, self.hist_category_table)
                x_t, h_t = dual_side_attention(x_emb, h_emb, self.dual,
                                               batch.mask, batch.history_mask)
            pooled = item_level_aggregation(x_t, h_t, self.agg, batch.mask)
            page_vec = list_level_aggregation(list_level_self_attention(pooled), self.agg)

        if c.ssa:
            influence = Tensor(np.zeros((b, n, m, c.d_o)))
        else:
            flat = ag.reshape(x_emb, (b, n * m, c.d_x))
            out = spatial_scaled_attention(flat, self.distances, self.ss,
                                           batch.mask.reshape(b, n * m),
                                           distance_scaling=not c.scale)
            influence = ag.reshape(out, (b, n, m, c.d_o))

        if c.dn:
            dense_feat = Tensor(np.zeros((b, n, m, c.d_r)))
        else:
            dense_feat = dense_network(x_emb, self.dense)

        if c.mmoe:
            return single_mlp_score(page_vec, dense_feat, influence, self.head)
        return mmoe_score(page_vec, dense_feat, influence, self.moe)

    def loss(self, batch: PageBatch) -> tuple[Tensor, Tensor]:
        """Masked mean binary cross-entropy and the slot scores."""
        scores = self.forward(batch)
        return bce_loss(scores, batch.clicks, batch.mask), scores

    def predict(self, batch: PageBatch) -> np.ndarray:
        return self.forward(batch).values
