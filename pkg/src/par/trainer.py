"""Training loop, checkpointing, evaluation pipeline, and gradient audit.

Everything is deterministic given (seed, config, dataset): parameter init,
shuffle order, and click sampling all come from seeds derived off the config
seed, and batch reductions run in a fixed order.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import AdamState, GradCheckReport, adam_step, finite_diff_check
from .config import TrainConfig, config_from_dict
from .data_oracle import (Catalog, ClickOracle, PageRecord, atomic_write_text,
                          page_display_grids, pages_to_batch)
from .embedding import PageBatch
from .errors import ConfigError, ContractError
from .metrics import MetricReport, compute_report
from .model import ParModel
from .scoring import rerank

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PARCKPT1"

# seed-stream tags
_SHUFFLE, _CLICKS, _GRADCHECK = 0x102, 0x103, 0x104


def _rng(seed: int, tag: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag, *extra]))


# -- checkpoints ----------------------------------------------------------------


@dataclass
class Checkpoint:
    """Named-tensor container with config snapshot and training history."""

    config: TrainConfig
    epoch: int
    loss_history: list[float]
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        header = {
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "loss_history": self.loss_history,
            "tensors": [{"name": name, "shape": list(arr.shape)}
                        for name, arr in self.tensors.items()],
        }
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes()
                           for arr in self.tensors.values())
        return CHECKPOINT_MAGIC + struct.pack("<I", len(head)) + head + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:8] != CHECKPOINT_MAGIC:
            raise ContractError("not a checkpoint file (bad magic)")
        (head_len,) = struct.unpack("<I", blob[8:12])
        header = json.loads(blob[12:12 + head_len].decode())
        offset = 12 + head_len
        tensors: dict[str, np.ndarray] = {}
        for meta in header["tensors"]:
            count = int(np.prod(meta["shape"])) if meta["shape"] else 1
            raw = blob[offset:offset + 8 * count]
            tensors[meta["name"]] = np.frombuffer(raw, dtype="<f8").reshape(meta["shape"]).copy()
            offset += 8 * count
        return cls(config=config_from_dict(header["config"]), epoch=header["epoch"],
                   loss_history=list(header["loss_history"]), tensors=tensors)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def build_model(self) -> ParModel:
        model = ParModel(self.config, self.config.build_layout(), self.config.seed)
        if set(model.param_names()) != set(self.tensors):
            raise ContractError("checkpoint tensors do not match the model's parameters")
        for name, tensor in model.params.items():
            stored = self.tensors[name]
            if stored.shape != tensor.shape:
                raise ContractError(f"checkpoint tensor '{name}' has shape {stored.shape}, "
                                    f"model expects {tensor.shape}")
            tensor.values = stored.copy()
        return model


def _snapshot(model: ParModel, config: TrainConfig, epoch: int,
              loss_history: list[float]) -> Checkpoint:
    return Checkpoint(config=config, epoch=epoch, loss_history=list(loss_history),
                      tensors={name: p.values.copy() for name, p in model.params.items()})


# -- training --------------------------------------------------------------------


def _validate_dataset(config: TrainConfig, pages: list[PageRecord], catalog: Catalog) -> None:
    layout = config.build_layout()
    if catalog.vocab_size != config.vocab_size or catalog.themes != config.themes:
        raise ConfigError(f"catalog ({catalog.themes} themes x {catalog.items_per_theme}) "
                          f"does not match config ({config.themes} x {config.items_per_theme})")
    if not pages:
        raise ConfigError("empty page set")
    for page in pages[:1]:
        if len(page.lists) != layout.n:
            raise ConfigError(f"pages have {len(page.lists)} lists, config expects {layout.n}")
        for i, lst in enumerate(page.lists):
            if len(lst.items) != layout.lengths[i]:
                raise ConfigError(f"list {i} has {len(lst.items)} items, layout expects "
                                  f"{layout.lengths[i]}")
            if not lst.clicks:
                raise ConfigError("pages carry no click labels; run labeling first")


def train(config: TrainConfig, pages: list[PageRecord], catalog: Catalog) -> Checkpoint:
    """Fit the model on labeled pages; deterministic for a given seed."""
    _validate_dataset(config, pages, catalog)
    layout = config.build_layout()
    model = ParModel(config, layout, config.seed)
    data = pages_to_batch(pages, catalog, layout, config.t)
    shuffle = _rng(config.seed, _SHUFFLE)
    state = AdamState(lr=config.learning_rate, l2=config.l2)
    names = model.param_names()

    loss_history: list[float] = []
    for epoch in range(config.epochs):
        order = shuffle.permutation(data.size)
        total, weight = 0.0, 0
        for start in range(0, data.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            sub = data.select(idx)
            model.zero_grads()
            loss, _ = model.loss(sub)
            ag.backward(loss)
            adam_step([model.params[k] for k in names],
                      [model.params[k].grad for k in names], state)
            total += float(loss.values) * len(idx)
            weight += len(idx)
        loss_history.append(total / weight)
        log.info("epoch %d/%d: mean loss %.6f", epoch + 1, config.epochs, loss_history[-1])
    return _snapshot(model, config, config.epochs, loss_history)


# -- evaluation -------------------------------------------------------------------


def _score_pages(model: ParModel, batch: PageBatch, chunk: int = 128) -> np.ndarray:
    scores = []
    with ag.no_grad():
        for start in range(0, batch.size, chunk):
            sub = batch.select(np.arange(start, min(start + chunk, batch.size)))
            scores.append(model.predict(sub))
    return np.concatenate(scores, axis=0)


def _relevance_rows(rel_grid: np.ndarray, clicks_grid: np.ndarray, mask: np.ndarray,
                    source: str) -> list[list[int]]:
    grid = rel_grid if source == "labels" else clicks_grid
    rows = []
    for i in range(grid.shape[0]):
        real = mask[i] > 0
        rows.append([int(x) for x in grid[i][real]])
    return rows


def evaluate(checkpoint: Checkpoint, pages: list[PageRecord], catalog: Catalog,
             eval_seed: int | None = None, relevance_source: str = "labels"
             ) -> dict[str, MetricReport]:
    """Score, rerank, re-query the oracle, and compute metrics.

    Returns one report for the untouched initial order (INIT) and one for the
    checkpoint's variant. Clicks are resampled with streams derived from
    eval_seed, so INIT and the model face identical click noise protocols.
    """
    config = checkpoint.config
    _validate_dataset(config, pages, catalog)
    if relevance_source not in ("labels", "clicks"):
        raise ConfigError(f"relevance_source must be labels|clicks, got {relevance_source}")
    seed = config.eval_seed if eval_seed is None else eval_seed
    layout = config.build_layout()
    oracle = ClickOracle(catalog, layout, config.eta1, config.eta2)
    model = checkpoint.build_model()
    scores = _score_pages(model, pages_to_batch(pages, catalog, layout, config.t))

    init_clicks, init_probs, init_rel = [], [], []
    new_clicks, new_probs, new_rel = [], [], []
    for p, page in enumerate(pages):
        items, rel, mask = page_display_grids(page, layout)
        clicks_grid = np.zeros_like(rel)
        for i, lst in enumerate(page.lists):
            clicks_grid[i, :layout.lengths[i]] = lst.clicks

        probs0 = oracle.click_prob(items, rel, mask)
        drawn0 = oracle.sample_clicks(probs0, _rng(seed, _CLICKS, 0, p))
        init_probs.append(probs0)
        init_clicks.append(drawn0)
        init_rel.append(_relevance_rows(rel, clicks_grid, mask, relevance_source))

        perms = rerank(scores[p], mask)
        items2 = np.take_along_axis(items, perms, axis=1)
        rel2 = np.take_along_axis(rel, perms, axis=1)
        clicks2 = np.take_along_axis(clicks_grid, perms, axis=1)
        probs1 = oracle.click_prob(items2, rel2, mask)
        drawn1 = oracle.sample_clicks(probs1, _rng(seed, _CLICKS, 1, p))
        new_probs.append(probs1)
        new_clicks.append(drawn1)
        new_rel.append(_relevance_rows(rel2, clicks2, mask, relevance_source))

    roles = layout.roles
    return {
        "INIT": compute_report(init_clicks, init_probs, init_rel, roles, config.seed),
        config.variant_name(): compute_report(new_clicks, new_probs, new_rel, roles,
                                              config.seed),
    }


# -- gradient audit ----------------------------------------------------------------


def tiny_gradcheck_config(**overrides) -> TrainConfig:
    """The small shape used for whole-model gradient verification."""
    base = dict(
        n=2, m=3, t=2, d_x=4, d_h=4, d_a=3, d_o=4, d_r=4,
        heads=2, experts=2, expert_hidden=(4, 4), tower_hidden=(3,),
        dense_hidden=(4,), themes=3, items_per_theme=4, true_dim=4,
        user_themes=2, batch_size=2, epochs=1, train_pages=4, test_pages=2,
    )
    base.update(overrides)
    return TrainConfig(**base)


def _gradcheck_batch(config: TrainConfig, rng: np.random.Generator) -> PageBatch:
    b, n, m, t = 2, config.n, config.m, config.t
    items = rng.integers(1, config.vocab_size, size=(b, n, m))
    cats = rng.integers(1, config.n_categories, size=(b, n, m))
    history = rng.integers(1, config.vocab_size, size=(b, t))
    hcats = rng.integers(1, config.n_categories, size=(b, t))
    clicks = (rng.uniform(size=(b, n, m)) < 0.4).astype(float)
    mask = np.ones((b, n, m))
    hmask = np.ones((b, t))
    # exercise the padding paths
    mask[:, -1, -1] = 0.0
    items[:, -1, -1] = 0
    cats[:, -1, -1] = 0
    clicks[:, -1, -1] = 0.0
    hmask[:, -1] = 0.0
    history[:, -1] = 0
    hcats[:, -1] = 0
    return PageBatch(items, cats, history, hcats, clicks, mask, hmask)


def gradcheck(config: TrainConfig | None = None, h: float = 3e-4,
              tol_rel: float = 1e-4) -> GradCheckReport:
    """Verify analytic gradients of the entire loss against central differences.

    Runs at a well-spread random parameter point: at the timid training init
    many gradient components sit below the finite-difference noise floor
    eps*|loss|/h and relu preactivations sit within h of the kink, so no step
    size is informative there. h=3e-4 balances that noise floor against
    truncation error for this composed loss; per-op checks use h=1e-5.
    """
    config = config or tiny_gradcheck_config()
    limits = {"n": 2, "m": 3, "t": 2, "d_x": 4, "d_h": 4, "d_a": 4, "d_o": 4,
              "d_r": 4, "experts": 2}
    for name, cap in limits.items():
        if getattr(config, name) > cap:
            raise ConfigError(f"gradcheck needs a tiny config: {name} <= {cap}, "
                              f"got {getattr(config, name)}")
    model = ParModel(config, config.build_layout(), config.seed)
    spread = _rng(config.seed, _GRADCHECK, 1)
    for p in model.params.values():
        p.values = spread.uniform(-0.6, 0.6, size=p.shape)
    batch = _gradcheck_batch(config, _rng(config.seed, _GRADCHECK, 2))

    def loss_fn():
        loss, _ = model.loss(batch)
        return loss

    return finite_diff_check(loss_fn, model.params, h=h, tol_rel=tol_rel)
