"""Run configuration: typed keys, flat `key = value` config files.

Unknown keys are errors so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .layout import PRESETS, PageLayout, fshape_preset, stacked_preset


@dataclass
class TrainConfig:
    # optimization
    learning_rate: float = 2e-4
    l2: float = 2e-4
    batch_size: int = 128
    epochs: int = 5
    seed: int = 0

    # page shape
    layout: str = "stacked"
    n: int = 4
    m: int = 10
    t: int = 20
    v_len: int = 4          # fshape: vertical list length
    h_count: int = 4        # fshape: number of horizontal lists
    h_len: int = 10         # fshape: horizontal list length

    # model dims
    d_x: int = 16
    d_h: int = 16
    d_a: int = 16
    d_o: int = 32
    d_r: int = 16
    heads: int = 2
    sigma: float = 0.1
    experts: int = 4
    expert_hidden: tuple[int, ...] = (200, 80)
    tower_hidden: tuple[int, ...] = (80,)
    dense_hidden: tuple[int, ...] = (32,)

    # ablation flags
    dsa: bool = False
    hdsa: bool = False
    scale: bool = False
    ssa: bool = False
    dn: bool = False
    mmoe: bool = False

    # synthetic data
    train_pages: int = 2000
    test_pages: int = 500
    themes: int = 8
    items_per_theme: int = 50
    true_dim: int = 16
    pos_per_list: int = 3
    user_themes: int = 5
    eta1: float = 0.4
    eta2: float = 0.5
    label_noise: float = 0.1
    ranker_hidden: int = 32
    ranker_epochs: int = 1
    ranker_lr: float = 0.01
    eval_seed: int = 90210
    ablate_seeds: int = 5
    theme_mix: float = 0.0          # 0 = isotropic items, ->1 = tight theme clusters
    quality_weight_top: float = 1.0    # quality emphasis in the first list
    quality_weight_bottom: float = 1.0  # and in the last list (linear in between)

    def __post_init__(self):
        positive = ["learning_rate", "batch_size", "n", "m", "t",
                    "d_x", "d_h", "d_a", "d_o", "d_r", "heads", "sigma", "experts",
                    "train_pages", "test_pages", "themes", "items_per_theme",
                    "true_dim", "pos_per_list", "user_themes", "ranker_hidden",
                    "ablate_seeds"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.theme_mix < 1.0:
            raise ConfigError(f"theme_mix must be in [0, 1), got {self.theme_mix}")
        for name in ["l2", "eta1", "eta2", "label_noise", "ranker_lr", "epochs"]:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.layout not in PRESETS:
            raise ConfigError(f"unknown layout '{self.layout}' (choose from {sorted(PRESETS)})")
        if not self.expert_hidden or not self.tower_hidden:
            raise ConfigError("expert_hidden and tower_hidden must be non-empty")
        if self.pos_per_list > self.m:
            raise ConfigError("pos_per_list cannot exceed the list length m")
        if self.themes < self.n:
            raise ConfigError(f"need at least n={self.n} themes, got {self.themes}")

    @property
    def d_l(self) -> int:
        return self.d_x + self.d_h

    @property
    def vocab_size(self) -> int:
        return self.themes * self.items_per_theme + 1  # + padding id 0

    @property
    def n_categories(self) -> int:
        return self.themes + 1  # + padding category 0

    def variant_name(self) -> str:
        parts = [label for flag, label in
                 [("dsa", "DSA"), ("hdsa", "HDSA"), ("scale", "scale"),
                  ("ssa", "SSA"), ("dn", "DN"), ("mmoe", "MMoE")]
                 if getattr(self, flag)]
        return "PAR" if not parts else "PAR-" + "+".join(parts)

    def build_layout(self) -> PageLayout:
        if self.layout == "stacked":
            lay = stacked_preset(self.n, self.m)
        else:
            lay = fshape_preset(self.v_len, self.h_count, self.h_len)
        if lay.n != self.n or lay.m != self.m:
            raise ConfigError(
                f"layout '{self.layout}' yields n={lay.n}, m={lay.m} but config says "
                f"n={self.n}, m={self.m}")
        return lay

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            out[f.name] = list(val) if isinstance(val, tuple) else val
        return out


ABLATION_FLAGS = ("dsa", "hdsa", "scale", "ssa", "dn", "mmoe")

VARIANTS: dict[str, dict[str, bool]] = {
    "PAR": {},
    "PAR-DSA": {"dsa": True},
    "PAR-HDSA": {"hdsa": True},
    "PAR-scale": {"scale": True},
    "PAR-SSA": {"ssa": True},
    "PAR-DN": {"dn": True},
    "PAR-MMoE": {"mmoe": True},
}


def with_variant(config: TrainConfig, variant: str) -> TrainConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant '{variant}' (choose from {list(VARIANTS)})")
    flags = {flag: False for flag in ABLATION_FLAGS}
    flags.update(VARIANTS[variant])
    return dataclasses.replace(config, **flags)


def _parse_value(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        # tuple of ints, comma separated
        return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"cannot parse value '{raw}' for key '{key}'") from None


def parse_config_text(text: str) -> TrainConfig:
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{stripped}'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown config key '{key}'")
        default = getattr(TrainConfig, key, None)
        kind = type(default) if default is not None else fields[key].type
        values[key] = _parse_value(key, raw, kind)
    return TrainConfig(**values)


def load_config(path: str | Path) -> TrainConfig:
    return parse_config_text(Path(path).read_text())


def config_from_dict(data: dict) -> TrainConfig:
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    coerced = dict(data)
    for key in ("expert_hidden", "tower_hidden", "dense_hidden"):
        if key in coerced and isinstance(coerced[key], list):
            coerced[key] = tuple(coerced[key])
    return TrainConfig(**coerced)
