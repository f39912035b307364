"""Experiment configuration: one flat JSON object, strictly validated.

Unknown keys are rejected by name so typos fail loudly instead of silently
running with defaults.  The environment variable PRUNE_SEED_OVERRIDE, when
set, replaces the configured seed at load time.

Per-layer pruning targets come from one of three places, checked in order:
explicit `layer_ratios`, the proportional `ratio_weights` + `keep_budget`
rule, or the uniform `target_sparsity`.  The proportional rule assigns each
layer a keep fraction k * weight_l, with a single k chosen so the
FLOP-weighted mean keep fraction hits the budget; fractions that would
exceed 1 are clamped and k is re-solved over the rest.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

_DEFAULT_LAYERS = [
    {"kind": "conv", "out_channels": 8, "kernel": 3},
    {"kind": "relu"},
    {"kind": "maxpool", "kernel": 2},
    {"kind": "conv", "out_channels": 16, "kernel": 3},
    {"kind": "relu"},
    {"kind": "dense", "out_features": 4},
]


@dataclass
class ExperimentConfig:
    name: str = "run"
    seed: int = 0
    mode: str = "increg"
    group_type: str = "row"
    input_shape: tuple[int, int, int] = (1, 8, 8)
    layers: list = field(default_factory=lambda: [dict(d) for d in _DEFAULT_LAYERS])
    prune_layers: list | None = None
    data: str = "synthetic"
    data_path: str | None = None
    n_per_class: int = 100
    n_test_per_class: int = 50
    n_classes: int = 4
    noise: float = 0.6
    data_seed: int | None = None
    target_sparsity: float = 0.5
    layer_ratios: dict | None = None
    ratio_weights: dict | None = None
    keep_budget: float | None = None
    penalty_cap: float | None = None
    lamb_const: float = 1.0
    prune_threshold: float = 1e-6
    update_interval: int = 1
    lr: float = 0.05
    weight_decay: float = 5e-4
    batch_size: int = 32
    max_prune_iterations: int = 5000
    retrain_iterations: int = 500
    retrain_lr: float | None = None
    retrain_lr_decay: float = 1.0
    retrain_lr_step: int = 0
    center_channels: bool = False
    out_dir: str = "run_out"

    def resolved_penalty_cap(self) -> float:
        """Escalation step size; defaults to half the plain weight decay."""
        if self.penalty_cap is not None:
            return float(self.penalty_cap)
        if self.weight_decay <= 0:
            raise ConfigError(
                "penalty_cap must be given explicitly when weight_decay is 0"
            )
        return 0.5 * self.weight_decay

    def resolved_data_seed(self) -> int:
        return self.seed if self.data_seed is None else int(self.data_seed)


_FIELD_TYPES = {
    "name": str,
    "seed": int,
    "mode": str,
    "group_type": str,
    "input_shape": list,
    "layers": list,
    "prune_layers": list,
    "data": str,
    "data_path": str,
    "n_per_class": int,
    "n_test_per_class": int,
    "n_classes": int,
    "noise": (int, float),
    "data_seed": int,
    "target_sparsity": (int, float),
    "layer_ratios": dict,
    "ratio_weights": dict,
    "keep_budget": (int, float),
    "penalty_cap": (int, float),
    "lamb_const": (int, float),
    "prune_threshold": (int, float),
    "update_interval": int,
    "lr": (int, float),
    "weight_decay": (int, float),
    "batch_size": int,
    "max_prune_iterations": int,
    "retrain_iterations": int,
    "retrain_lr": (int, float),
    "retrain_lr_decay": (int, float),
    "retrain_lr_step": int,
    "center_channels": bool,
    "out_dir": str,
}

_NULLABLE = {"prune_layers", "data_path", "data_seed", "layer_ratios",
             "ratio_weights", "keep_budget", "penalty_cap", "retrain_lr"}


def config_from_dict(raw: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for key, value in raw.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key: {key!r}")
        if value is None:
            if key in _NULLABLE:
                continue
            raise ConfigError(f"config key {key!r} must not be null")
        expected = _FIELD_TYPES[key]
        bad_type = (
            not isinstance(value, bool) if expected is bool
            else not isinstance(value, expected) or isinstance(value, bool)
        )
        if bad_type:
            raise ConfigError(
                f"config key {key!r}: expected {getattr(expected, '__name__', expected)}, "
                f"got {type(value).__name__}"
            )
        setattr(cfg, key, value)
    cfg.input_shape = tuple(int(d) for d in cfg.input_shape)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.mode not in ("increg", "constant", "oneshot"):
        raise ConfigError(f"mode: expected increg, constant, or oneshot, got {cfg.mode!r}")
    if cfg.group_type not in ("row", "column"):
        raise ConfigError(f"group_type: expected row or column, got {cfg.group_type!r}")
    if not 0.0 <= cfg.target_sparsity < 1.0:
        raise ConfigError(f"target_sparsity: must be in [0, 1), got {cfg.target_sparsity}")
    if cfg.layer_ratios is not None and cfg.ratio_weights is not None:
        raise ConfigError("give layer_ratios or ratio_weights, not both")
    if cfg.ratio_weights is not None:
        if cfg.keep_budget is None:
            raise ConfigError("ratio_weights needs keep_budget")
        if not 0.0 < cfg.keep_budget <= 1.0:
            raise ConfigError(f"keep_budget: must be in (0, 1], got {cfg.keep_budget}")
        for name, w in cfg.ratio_weights.items():
            if not isinstance(w, (int, float)) or w <= 0:
                raise ConfigError(f"ratio_weights[{name!r}]: must be a positive number")
    if cfg.layer_ratios is not None:
        for name, r in cfg.layer_ratios.items():
            if not isinstance(r, (int, float)) or not 0.0 <= r < 1.0:
                raise ConfigError(f"layer_ratios[{name!r}]: must be in [0, 1)")
    if cfg.data not in ("synthetic", "records"):
        raise ConfigError(f"data: expected synthetic or records, got {cfg.data!r}")
    if cfg.data == "records" and not cfg.data_path:
        raise ConfigError("data=records needs data_path")
    for key in ("lr", "batch_size", "max_prune_iterations", "update_interval",
                "retrain_lr_decay"):
        if getattr(cfg, key) <= 0:
            raise ConfigError(f"{key}: must be positive")
    if cfg.retrain_lr is not None and cfg.retrain_lr <= 0:
        raise ConfigError("retrain_lr: must be positive when given")
    if cfg.retrain_lr_step < 0:
        raise ConfigError("retrain_lr_step: must be >= 0 (0 disables step decay)")
    if cfg.retrain_iterations < 0 or cfg.weight_decay < 0 or cfg.prune_threshold <= 0:
        raise ConfigError("retrain_iterations/weight_decay must be >= 0, prune_threshold > 0")


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    cfg = config_from_dict(raw)
    override = os.environ.get("PRUNE_SEED_OVERRIDE")
    if override is not None:
        try:
            cfg.seed = int(override)
        except ValueError:
            raise ConfigError(f"PRUNE_SEED_OVERRIDE must be an integer, got {override!r}")
    return cfg


def allocate_keep_fractions(
    flops: dict[str, float], weights: dict[str, float], budget: float
) -> dict[str, float]:
    """Keep fractions proportional to per-layer weights, FLOP-mean == budget.

    Solves sum(f_l * min(k*w_l, 1)) == budget * sum(f_l) for k, clamping
    layers that saturate at keeping everything.
    """
    names = sorted(weights)
    missing = [n for n in names if n not in flops]
    if missing:
        raise ConfigError(f"ratio_weights names unknown layers: {missing}")
    f = np.array([flops[n] for n in names], dtype=np.float64)
    p = np.array([weights[n] for n in names], dtype=np.float64)
    clamped = np.zeros(len(names), dtype=bool)
    k = 0.0
    for _ in range(len(names) + 1):
        free = ~clamped
        if not free.any():
            break
        remaining = budget * f.sum() - f[clamped].sum()
        if remaining <= 0:
            raise ConfigError("keep_budget is too small for the clamped layers")
        k = remaining / (f[free] * p[free]).sum()
        newly = free & (k * p > 1.0)
        if not newly.any():
            break
        clamped |= newly
    rho = np.where(clamped, 1.0, np.minimum(k * p, 1.0))
    return {n: float(r) for n, r in zip(names, rho)}


def resolve_ratios(cfg: ExperimentConfig, flops: dict[str, float],
                   default_prunable: list[str]) -> dict[str, float]:
    """Final per-layer pruning fractions (fraction removed, not kept)."""
    if cfg.layer_ratios is not None:
        unknown = [n for n in cfg.layer_ratios if n not in flops]
        if unknown:
            raise ConfigError(f"layer_ratios names unknown layers: {unknown}")
        return {n: float(r) for n, r in cfg.layer_ratios.items() if r > 0}
    if cfg.ratio_weights is not None:
        keep = allocate_keep_fractions(flops, cfg.ratio_weights, cfg.keep_budget)
        return {n: 1.0 - rho for n, rho in keep.items() if rho < 1.0}
    targets = cfg.prune_layers if cfg.prune_layers is not None else default_prunable
    unknown = [n for n in targets if n not in flops]
    if unknown:
        raise ConfigError(f"prune_layers names unknown layers: {unknown}")
    if cfg.target_sparsity == 0.0:
        return {}
    return {n: float(cfg.target_sparsity) for n in targets}
