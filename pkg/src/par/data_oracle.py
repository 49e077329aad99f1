"""Synthetic multi-list pages, pointwise initial rankers, and the click oracle.

The synthetic world: items live in theme pools and carry fixed unit "true"
embeddings; each user has a latent preference vector. A list's relevant items
are the pool items the user's latent prefers most; history is drawn from the
user's preferred items across their themes, so preference is recoverable from
ids alone. The oracle click probability of a displayed item is

    relevance * 1 / (position^eta1 * list^eta2) * dissimilarity,

with 1-based position/list indices and dissimilarity measured against the
items currently displayed at Manhattan distance 1. True embeddings are not
visible to the reranking model; it must learn from ids and clicks.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import AdamState, Tensor, adam_step
from .config import TrainConfig
from .embedding import PageBatch
from .errors import DataError
from .layout import PageLayout, manhattan_distance_matrix


def worker_count() -> int:
    """Worker cap from PAR_THREADS; defaults to 1 for strict determinism."""
    raw = os.environ.get("PAR_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see partials."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# -- catalog and users --------------------------------------------------------


@dataclass
class Catalog:
    """Fixed item universe: theme membership, embeddings, quality factors.

    An item's appeal to a user is latent-affinity plus a weighted mix of two
    intrinsic quality factors; lists can weight the factors differently
    (users reward different attributes in different page sections). Initial
    rankers are fit to the affinity part only, so the quality factors are the
    signal a reranker can recover from click feedback.
    """

    themes: int
    items_per_theme: int
    true_dim: int
    seed: int
    item_theme: np.ndarray  # (vocab,) int; 0 for the padding id
    true_emb: np.ndarray    # (vocab, true_dim); row 0 zero, others unit norm
    quality: np.ndarray     # (vocab, 2) float; row 0 zero
    theme_mix: float = 0.0

    QUALITY_SCALE = 0.25    # matches the std of unit-vector affinities in 16d

    @classmethod
    def build(cls, themes: int, items_per_theme: int, true_dim: int, seed: int,
              theme_mix: float = 0.0) -> "Catalog":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xCA7A]))
        vocab = themes * items_per_theme + 1
        emb = rng.standard_normal((vocab, true_dim))
        if theme_mix > 0.0:
            centers = rng.standard_normal((themes + 1, true_dim))
            centers /= np.linalg.norm(centers, axis=1, keepdims=True)
            theme_of = np.zeros(vocab, dtype=np.int64)
            theme_of[1:] = np.arange(vocab - 1) // items_per_theme + 1
            emb = theme_mix * centers[theme_of] + (1.0 - theme_mix) * emb
        emb /= np.linalg.norm(emb, axis=1, keepdims=True)
        emb[0] = 0.0
        quality = cls.QUALITY_SCALE * rng.standard_normal((vocab, 2))
        quality[0] = 0.0
        item_theme = np.zeros(vocab, dtype=np.int64)
        item_theme[1:] = np.arange(vocab - 1) // items_per_theme + 1
        return cls(themes, items_per_theme, true_dim, seed, item_theme, emb, quality,
                   theme_mix)

    def appeal(self, latent: np.ndarray, items: np.ndarray,
               quality_weights=(1.0, 1.0)) -> np.ndarray:
        """User appeal of items: affinity plus the weighted quality factors."""
        return (self.true_emb[items] @ latent
                + self.quality[items] @ np.asarray(quality_weights, dtype=np.float64))

    @property
    def vocab_size(self) -> int:
        return self.themes * self.items_per_theme + 1

    def theme_pool(self, theme: int) -> np.ndarray:
        if not 1 <= theme <= self.themes:
            raise DataError(f"theme {theme} outside 1..{self.themes}")
        start = (theme - 1) * self.items_per_theme + 1
        return np.arange(start, start + self.items_per_theme, dtype=np.int64)

    def to_json(self) -> str:
        payload = {
            "themes": self.themes,
            "items_per_theme": self.items_per_theme,
            "true_dim": self.true_dim,
            "seed": self.seed,
            "item_theme": self.item_theme.tolist(),
            "true_emb": [[float(x) for x in row] for row in self.true_emb],
            "quality": [[float(x) for x in row] for row in self.quality],
            "theme_mix": self.theme_mix,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Catalog":
        data = json.loads(text)
        return cls(data["themes"], data["items_per_theme"], data["true_dim"],
                   data["seed"], np.asarray(data["item_theme"], dtype=np.int64),
                   np.asarray(data["true_emb"], dtype=np.float64),
                   np.asarray(data["quality"], dtype=np.float64),
                   float(data.get("theme_mix", 0.0)))


@dataclass
class UserProfile:
    user_id: int
    latent: np.ndarray          # (true_dim,) unit vector
    themes: np.ndarray          # interacted theme ids
    history: np.ndarray         # (t,) item ids, most recent first


def make_user(catalog: Catalog, user_id: int, user_themes: int, t: int,
              master_seed: int) -> UserProfile:
    """Build one user from a seed derived from (master_seed, user_id)."""
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, 0x05E4, user_id]))
    latent = rng.standard_normal(catalog.true_dim)
    latent /= np.linalg.norm(latent)
    themes = rng.choice(np.arange(1, catalog.themes + 1),
                        size=min(user_themes, catalog.themes), replace=False)
    # history draws lean on the user's top preferences within random themes
    top_k = 5
    history = np.empty(t, dtype=np.int64)
    for s in range(t):
        pool = catalog.theme_pool(int(rng.choice(themes)))
        appeal = catalog.appeal(latent, pool)
        top = pool[np.argsort(-appeal, kind="stable")[:top_k]]
        history[s] = rng.choice(top)
    return UserProfile(user_id, latent, themes, history)


# -- page records -------------------------------------------------------------


@dataclass
class ListRecord:
    theme: int
    items: list[int]          # generated (pre-ranking) order
    rel: list[int]            # aligned with `items`
    init_order: list[int]     # display position k shows items[init_order[k]]
    clicks: list[int] = field(default_factory=list)   # per display position
    probs: list[float] = field(default_factory=list)  # per display position

    def displayed_items(self) -> list[int]:
        return [self.items[k] for k in self.init_order]

    def displayed_rel(self) -> list[int]:
        return [self.rel[k] for k in self.init_order]


@dataclass
class PageRecord:
    user_id: int
    history: list[int]
    lists: list[ListRecord]


def list_quality_weights(n: int, top: float, bottom: float) -> np.ndarray:
    """(n, 2) quality-factor weights per list.

    The first factor matters most in the first list and fades to `bottom` by
    the last; the second factor mirrors it. With top == bottom every list
    weighs both factors identically (no list-specific behavior).
    """
    if n == 1:
        return np.array([[top, bottom]])
    first = np.linspace(top, bottom, n)
    return np.stack([first, first[::-1]], axis=1)


def generate_page(catalog: Catalog, user: UserProfile, layout: PageLayout,
                  pos_per_list: int, master_seed: int,
                  quality_weights: np.ndarray | None = None) -> PageRecord:
    """One page for one user: n distinct themes, lists of layout lengths.

    A list's relevant items are the user's top picks among the displayed
    candidates; how much intrinsic quality sways the pick varies by list
    position (users act differently deeper in the page).
    """
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, 0x9A6E, user.user_id]))
    n = layout.n
    if quality_weights is None:
        quality_weights = np.ones((n, 2))
    chosen = list(rng.permutation(user.themes)[:n])
    if len(chosen) < n:
        others = [th for th in range(1, catalog.themes + 1) if th not in chosen]
        chosen += list(rng.permutation(others)[:n - len(chosen)])
    if len(chosen) < n:
        raise DataError(f"catalog has {catalog.themes} themes, page needs {n}")

    lists = []
    for i, theme in enumerate(chosen):
        length = layout.lengths[i]
        pool = catalog.theme_pool(int(theme))
        if len(pool) < length:
            raise DataError(f"theme {theme} pool has {len(pool)} items, list needs {length}")
        # draw the displayed candidates first; the user's top picks among what
        # is shown are the relevant ones
        items = rng.choice(pool, size=length, replace=False)
        appeal = catalog.appeal(user.latent, items, quality_weights=quality_weights[i])
        threshold = np.sort(appeal)[::-1][pos_per_list - 1]
        rel = (appeal >= threshold).astype(np.int64)
        if rel.sum() > pos_per_list:  # appeal ties, keep exactly pos_per_list
            extra = np.where(appeal == threshold)[0]
            rel[extra[rel.sum() - pos_per_list:]] = 0
        lists.append(ListRecord(
            theme=int(theme),
            items=[int(x) for x in items],
            rel=[int(x) for x in rel],
            init_order=list(range(length)),
        ))
    return PageRecord(user.user_id, [int(x) for x in user.history], lists)


def generate_pages(catalog: Catalog, users: list[UserProfile], layout: PageLayout,
                   pos_per_list: int, master_seed: int,
                   quality_weights: np.ndarray | None = None) -> list[PageRecord]:
    """One page per user; per-user derived seeds keep any worker split exact."""
    workers = worker_count()
    build = lambda u: generate_page(catalog, u, layout, pos_per_list, master_seed,
                                    quality_weights)
    if workers == 1:
        return [build(u) for u in users]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(build, users))


# -- initial rankers ----------------------------------------------------------


class InitialRanker:
    """One hidden layer over [user latent, item true embedding]."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        limit = np.sqrt(6.0 / (in_dim + hidden))
        self.w0 = Tensor(rng.uniform(-limit, limit, (in_dim, hidden)), requires_grad=True)
        self.b0 = Tensor(np.zeros(hidden), requires_grad=True)
        limit = np.sqrt(6.0 / (hidden + 1))
        self.w1 = Tensor(rng.uniform(-limit, limit, (hidden, 1)), requires_grad=True)
        self.b1 = Tensor(np.zeros(1), requires_grad=True)

    @property
    def params(self) -> list[Tensor]:
        return [self.w0, self.b0, self.w1, self.b1]

    def scores(self, features: np.ndarray) -> np.ndarray:
        hidden = np.maximum(features @ self.w0.values + self.b0.values, 0.0)
        return (hidden @ self.w1.values + self.b1.values).reshape(-1)

    def train(self, features: np.ndarray, targets: np.ndarray, epochs: int,
              lr: float, rng: np.random.Generator, batch_size: int = 256) -> None:
        state = AdamState(lr=lr)
        count = features.shape[0]
        for _ in range(epochs):
            order = rng.permutation(count)
            for start in range(0, count, batch_size):
                idx = order[start:start + batch_size]
                x = Tensor(features[idx])
                y = Tensor(targets[idx].reshape(-1, 1))
                hidden = ag.relu(ag.matmul(x, self.w0) + self.b0)
                pred = ag.matmul(hidden, self.w1) + self.b1
                err = pred - y
                loss = (err * err).sum() / len(idx)
                for p in self.params:
                    p.grad = None
                loss.backward()
                adam_step(self.params, [p.grad for p in self.params], state)


def train_initial_rankers(pages: list[PageRecord], users: dict[int, UserProfile],
                          catalog: Catalog, config: TrainConfig,
                          master_seed: int) -> list[InitialRanker]:
    """One pointwise ranker per list position, fit to noisy affinity targets."""
    rankers = []
    n = len(pages[0].lists) if pages else 0
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([master_seed, 0x4A4E, i]))
        feats, targets = [], []
        for page in pages:
            latent = users[page.user_id].latent
            for item in page.lists[i].items:
                emb = catalog.true_emb[item]
                feats.append(np.concatenate([latent, emb]))
                targets.append(latent @ emb + config.label_noise * rng.standard_normal())
        feats = np.asarray(feats)
        targets = np.asarray(targets)
        ranker = InitialRanker(2 * catalog.true_dim, config.ranker_hidden, rng)
        ranker.train(feats, targets, config.ranker_epochs, config.ranker_lr, rng)
        rankers.append(ranker)
    return rankers


def initial_rank(pages: list[PageRecord], rankers: list[InitialRanker],
                 users: dict[int, UserProfile], catalog: Catalog) -> None:
    """Set every list's display order to its ranker's descending scores."""
    for page in pages:
        latent = users[page.user_id].latent
        for i, lst in enumerate(page.lists):
            feats = np.stack([np.concatenate([latent, catalog.true_emb[item]])
                              for item in lst.items])
            scores = rankers[i].scores(feats)
            lst.init_order = [int(k) for k in np.argsort(-scores, kind="stable")]


# -- oracle click model --------------------------------------------------------


class ClickOracle:
    """Ground-truth click probabilities for items displayed on a layout.

    Dissimilarity is measured against the items within `neighbor_radius`
    Manhattan steps (excluding the slot itself).
    """

    def __init__(self, catalog: Catalog, layout: PageLayout,
                 eta1: float = 0.4, eta2: float = 0.5, neighbor_radius: int = 1):
        self.catalog = catalog
        self.layout = layout
        self.eta1 = eta1
        self.eta2 = eta2
        self.neighbor_radius = neighbor_radius
        n, m = layout.n, layout.m
        distances = manhattan_distance_matrix(layout)
        real = np.zeros(n * m, dtype=bool)
        for i in range(n):
            real[i * m:i * m + layout.lengths[i]] = True
        within = (distances >= 1) & (distances <= neighbor_radius)
        self._neighbors = [np.where(within[p] & real)[0] if real[p] else
                           np.empty(0, dtype=np.int64) for p in range(n * m)]
        pos = np.arange(1, m + 1, dtype=np.float64)
        lst = np.arange(1, n + 1, dtype=np.float64)
        self._decay = (pos[None, :] ** -eta1) * (lst[:, None] ** -eta2)

    def position_decay(self, position: int, list_index: int) -> float:
        """Decay for 1-based (position-in-list, list) indices."""
        return float(position ** -self.eta1 * list_index ** -self.eta2)

    def click_prob(self, items: np.ndarray, rel: np.ndarray,
                   mask: np.ndarray) -> np.ndarray:
        """Oracle probabilities for a displayed (n, m) item grid."""
        n, m = self.layout.n, self.layout.m
        emb = self.catalog.true_emb
        flat_items = items.reshape(-1)
        dissim = np.ones(n * m)
        for p in range(n * m):
            if mask.reshape(-1)[p] == 0:
                continue
            nbrs = self._neighbors[p]
            if nbrs.size == 0:
                continue  # isolated slot: neutral dissimilarity
            mean = emb[flat_items[nbrs]].mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm < 1e-12:
                continue
            own = emb[flat_items[p]]
            cos = float(own @ mean) / (norm * max(np.linalg.norm(own), 1e-12))
            dissim[p] = min(max(1.0 - cos, 0.0), 1.0)
        probs = rel * self._decay * dissim.reshape(n, m)
        return np.clip(probs * mask, 0.0, 1.0)

    def sample_clicks(self, probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Independent Bernoulli draws per slot."""
        return (rng.uniform(size=probs.shape) < probs).astype(np.int64)


def label_pages(pages: list[PageRecord], oracle: ClickOracle, master_seed: int) -> None:
    """Fill oracle probabilities and sampled clicks for the displayed order."""
    layout = oracle.layout
    for idx, page in enumerate(pages):
        rng = np.random.default_rng(np.random.SeedSequence([master_seed, 0xC11C, idx]))
        items, rel, mask = page_display_grids(page, layout)
        probs = oracle.click_prob(items, rel, mask)
        clicks = oracle.sample_clicks(probs, rng)
        for i, lst in enumerate(page.lists):
            length = layout.lengths[i]
            lst.probs = [float(x) for x in probs[i, :length]]
            lst.clicks = [int(x) for x in clicks[i, :length]]


def page_display_grids(page: PageRecord, layout: PageLayout
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(items, rel, mask) grids of the page as currently displayed."""
    n, m = layout.n, layout.m
    items = np.zeros((n, m), dtype=np.int64)
    rel = np.zeros((n, m), dtype=np.float64)
    mask = np.zeros((n, m), dtype=np.float64)
    for i, lst in enumerate(page.lists):
        length = layout.lengths[i]
        items[i, :length] = lst.displayed_items()
        rel[i, :length] = lst.displayed_rel()
        mask[i, :length] = 1.0
    return items, rel, mask


# -- serialization -------------------------------------------------------------


def pages_to_jsonl(pages: list[PageRecord]) -> str:
    lines = []
    for page in pages:
        payload = {
            "user": page.user_id,
            "history": page.history,
            "lists": [{
                "theme": lst.theme,
                "items": lst.items,
                "rel": lst.rel,
                "init_order": lst.init_order,
                "clicks": lst.clicks,
                "probs": lst.probs,
            } for lst in page.lists],
        }
        lines.append(json.dumps(payload, sort_keys=True))
    return "\n".join(lines) + "\n"


def pages_from_jsonl(text: str) -> list[PageRecord]:
    pages = []
    for line in text.splitlines():
        if not line.strip():
            continue
        data = json.loads(line)
        pages.append(PageRecord(
            user_id=data["user"],
            history=data["history"],
            lists=[ListRecord(theme=l["theme"], items=l["items"], rel=l["rel"],
                              init_order=l["init_order"], clicks=l["clicks"],
                              probs=l["probs"]) for l in data["lists"]],
        ))
    return pages


def write_pages(pages: list[PageRecord], path: str | Path) -> None:
    atomic_write_text(path, pages_to_jsonl(pages))


def load_pages(path: str | Path) -> list[PageRecord]:
    return pages_from_jsonl(Path(path).read_text())


def write_catalog(catalog: Catalog, path: str | Path) -> None:
    atomic_write_text(path, catalog.to_json())


def load_catalog(path: str | Path) -> Catalog:
    return Catalog.from_json(Path(path).read_text())


# -- dataset assembly ----------------------------------------------------------


def build_dataset(config: TrainConfig) -> tuple[Catalog, list[PageRecord], list[PageRecord]]:
    """Generate catalog, train/test pages, initial rankings, and click labels."""
    layout = config.build_layout()
    seed = config.seed
    catalog = Catalog.build(config.themes, config.items_per_theme, config.true_dim, seed,
                            theme_mix=config.theme_mix)
    total = config.train_pages + config.test_pages
    users = [make_user(catalog, uid, config.user_themes, config.t, seed)
             for uid in range(1, total + 1)]
    weights = list_quality_weights(layout.n, config.quality_weight_top,
                                   config.quality_weight_bottom)
    pages = generate_pages(catalog, users, layout, config.pos_per_list, seed, weights)
    train, test = pages[:config.train_pages], pages[config.train_pages:]

    user_map = {u.user_id: u for u in users}
    rankers = train_initial_rankers(train, user_map, catalog, config, seed)
    initial_rank(pages, rankers, user_map, catalog)

    oracle = ClickOracle(catalog, layout, config.eta1, config.eta2)
    label_pages(train, oracle, seed)
    label_pages(test, oracle, seed + 1)
    return catalog, train, test


def pages_to_batch(pages: list[PageRecord], catalog: Catalog, layout: PageLayout,
                   t: int) -> PageBatch:
    """Assemble displayed pages into padded model inputs."""
    b, n, m = len(pages), layout.n, layout.m
    items = np.zeros((b, n, m), dtype=np.int64)
    clicks = np.zeros((b, n, m), dtype=np.float64)
    mask = np.zeros((b, n, m), dtype=np.float64)
    history = np.zeros((b, t), dtype=np.int64)
    hmask = np.zeros((b, t), dtype=np.float64)
    for k, page in enumerate(pages):
        for i, lst in enumerate(page.lists):
            length = layout.lengths[i]
            items[k, i, :length] = lst.displayed_items()
            clicks[k, i, :length] = lst.clicks
            mask[k, i, :length] = 1.0
        hist = page.history[:t]
        history[k, :len(hist)] = hist
        hmask[k, :len(hist)] = 1.0
    categories = catalog.item_theme[items]
    hist_categories = catalog.item_theme[history]
    return PageBatch(items, categories, history, hist_categories, clicks, mask, hmask)
