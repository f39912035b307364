"""Regularization schedules that drive groups of weights to zero.

Three schedules share one life cycle.  A layer starts in the ACTIVE phase;
each training iteration the schedule is ticked with the current weights, may
adjust per-group decay factors, zeroes any group whose mean absolute weight
falls below the prune threshold (a pruned filter's bias goes with it), and
moves the layer to REACHED once the pruned count meets its target.  Once
REACHED nothing in the layer changes again; pruned groups stay pinned at
zero through masks, and finalizing for retraining drops every factor to 0.

The escalating schedule raises each group's factor by an amount that depends
on the group's average rank when groups are ordered by L1 norm: chronically
weak groups accumulate decay without bound until they die, strong groups get
their factor pushed back to zero.  Pruned groups keep their (now inert)
factor and keep occupying ranks at the bottom of the order, so the rank
geometry of the survivors never shifts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractViolation, StateError
from .groups import (
    GroupType,
    group_l1_norms,
    keep_to_weight_mask,
    partition,
    rank_ascending,
    sparsity,
    zero_pruned,
)

PRUNE_THRESHOLD = 1e-6

ACTIVE = "active"
REACHED = "reached"


def prune_target(ratio: float, n_groups: int) -> int:
    """Number of groups to remove: ratio * G rounded half away from zero."""
    return int(np.floor(ratio * n_groups + 0.5))


def delta_lambda(rank, penalty_cap: float, ratio: float, n_groups: int):
    """Per-tick decay increment as a function of average rank.

    Piecewise linear through (0, +cap), (ratio*G, 0), (G-1, -cap), clamped to
    [-cap, +cap].  When ratio*G already meets or exceeds G-1 the descending
    segment has nowhere to live and every rank beyond the center gets -cap.

    The second-segment denominator is computed as (G-1) - ratio*G, which
    equals G*(1-ratio) - 1 in exact arithmetic but shares its rounding with
    the numerator, so the endpoint values come out exact in floats.
    """
    if penalty_cap <= 0:
        raise ConfigError(f"penalty cap must be positive, got {penalty_cap}")
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"pruning ratio must be in (0, 1), got {ratio}")
    if n_groups < 2:
        raise ConfigError(f"need at least two groups, got {n_groups}")
    r = np.asarray(rank, dtype=np.float64)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    center = ratio * n_groups
    denom = (n_groups - 1.0) - center
    rising = penalty_cap * (1.0 - r / center)
    if denom <= 0.0:
        falling = np.full_like(r, -penalty_cap)
    else:
        falling = -penalty_cap * ((r - center) / denom)
    out = np.clip(np.where(r <= center, rising, falling), -penalty_cap, penalty_cap)
    return float(out[0]) if scalar else out


@dataclass
class SchedulerEvent:
    iteration: int
    kind: str
    layer: str | None = None
    data: dict = field(default_factory=dict)


class LayerSchedule:
    """Per-layer pruning state shared by all schedule flavors."""

    def __init__(self, name: str, weights: np.ndarray, gtype: GroupType, ratio: float,
                 threshold: float = PRUNE_THRESHOLD):
        if not 0.0 < ratio < 1.0:
            raise ConfigError(f"layer {name}: scheduled ratio must be in (0, 1), got {ratio}")
        self.name = name
        self.gtype = gtype
        self.part = partition(weights, gtype)
        if self.part.n_groups < 2:
            raise ConfigError(f"layer {name}: cannot schedule a {self.part.n_groups}-group layer")
        self.ratio = float(ratio)
        self.threshold = threshold
        g = self.part.n_groups
        self.keep = np.ones(g, dtype=bool)
        self.lamb = np.zeros(g, dtype=np.float64)
        self.pruned_at = np.full(g, -1, dtype=np.int64)
        self.target_count = prune_target(self.ratio, g)
        self.phase = ACTIVE

    @property
    def pruned_count(self) -> int:
        return int(self.part.n_groups - self.keep.sum())

    def sparsity(self) -> float:
        return sparsity(self.keep)

    def lambda_digest(self) -> str:
        return hashlib.blake2b(
            np.ascontiguousarray(self.lamb).tobytes(), digest_size=8
        ).hexdigest()

    def tick(self, weights: np.ndarray, bias: np.ndarray | None,
             iteration: int) -> list[SchedulerEvent]:
        if self.phase == REACHED:
            return []
        norms = group_l1_norms(weights, self.gtype)
        self._update_lambda(norms)
        events = self._prune_pass(weights, bias, norms, iteration)
        if self.pruned_count >= self.target_count:
            self.phase = REACHED
            events.append(SchedulerEvent(iteration, "reached", self.name, {
                "pruned": self.pruned_count,
                "target": self.target_count,
                "groups": int(self.part.n_groups),
                "lambda_hash": self.lambda_digest(),
            }))
        return events

    def _prune_pass(self, weights, bias, norms, iteration) -> list[SchedulerEvent]:
        mean_abs = norms / self.part.group_size
        newly = (mean_abs < self.threshold) & self.keep
        if not newly.any():
            return []
        self.keep[newly] = False
        self.pruned_at[newly] = iteration
        zero_pruned(weights, self.keep, self.gtype)
        if bias is not None and self.gtype is GroupType.ROW:
            bias[~self.keep] = 0
        return [SchedulerEvent(iteration, "prune", self.name, {
            "groups": [int(i) for i in np.flatnonzero(newly)],
            "pruned_total": self.pruned_count,
            "lambda_hash": self.lambda_digest(),
        })]

    def _update_lambda(self, norms: np.ndarray) -> None:
        raise NotImplementedError

    def decay(self) -> np.ndarray | None:
        """Per-group decay factors to apply this step, or None when inactive."""
        if self.phase == REACHED or not self.lamb.any():
            return None
        return self.lamb


class EscalatingSchedule(LayerSchedule):
    """Rank-driven factors: lamb_g <- max(lamb_g + delta(avg rank_g), 0).

    Pruned groups keep observing ranks (their zero norms sit at the bottom)
    but their factors are frozen at the value they died with.
    """

    def __init__(self, name, weights, gtype, ratio, penalty_cap: float,
                 threshold: float = PRUNE_THRESHOLD):
        super().__init__(name, weights, gtype, ratio, threshold)
        if penalty_cap <= 0:
            raise ConfigError(f"penalty cap must be positive, got {penalty_cap}")
        self.penalty_cap = float(penalty_cap)
        self.rank_sum = np.zeros(self.part.n_groups, dtype=np.float64)
        self.n_ticks = 0

    def observe_ranking(self, ranks: np.ndarray) -> np.ndarray:
        """Fold one per-iteration ranking into the running average."""
        g = self.part.n_groups
        if len(ranks) != g or not np.array_equal(np.sort(ranks), np.arange(g)):
            raise ContractViolation(
                f"layer {self.name}: ranking must be a permutation of 0..{g - 1}"
            )
        self.rank_sum += ranks
        self.n_ticks += 1
        return self.rank_sum / self.n_ticks

    def _update_lambda(self, norms):
        avg_rank = self.observe_ranking(rank_ascending(norms))
        delta = delta_lambda(avg_rank, self.penalty_cap, self.ratio, self.part.n_groups)
        self.lamb = np.where(
            self.keep, np.maximum(self.lamb + delta, 0.0), self.lamb
        )


class ConstantSchedule(LayerSchedule):
    """One fixed factor on every surviving group; same prune/stop rules."""

    def __init__(self, name, weights, gtype, ratio, lamb_const: float,
                 threshold: float = PRUNE_THRESHOLD):
        super().__init__(name, weights, gtype, ratio, threshold)
        if lamb_const < 0:
            raise ConfigError(f"constant factor must be nonnegative, got {lamb_const}")
        self.lamb[:] = lamb_const

    def _update_lambda(self, norms):
        pass


class OneshotSchedule(LayerSchedule):
    """Remove the weakest groups at the first tick; no decay at all."""

    def _update_lambda(self, norms):
        pass

    def tick(self, weights, bias, iteration):
        if self.phase == REACHED:
            return []
        norms = group_l1_norms(weights, self.gtype)
        order = np.argsort(norms, kind="stable")
        victims = order[: self.target_count]
        self.keep[victims] = False
        self.pruned_at[victims] = iteration
        zero_pruned(weights, self.keep, self.gtype)
        if bias is not None and self.gtype is GroupType.ROW:
            bias[~self.keep] = 0
        self.phase = REACHED
        return [
            SchedulerEvent(iteration, "prune", self.name, {
                "groups": sorted(int(i) for i in victims),
                "pruned_total": self.pruned_count,
                "lambda_hash": self.lambda_digest(),
            }),
            SchedulerEvent(iteration, "reached", self.name, {
                "pruned": self.pruned_count,
                "target": self.target_count,
                "groups": int(self.part.n_groups),
                "lambda_hash": self.lambda_digest(),
            }),
        ]


class PruningScheduler:
    """Coordinates per-layer schedules across a network.

    `ratios` maps layer name -> fraction of groups to remove.  Layers not in
    the map are untouched.  `mode` selects the schedule flavor; flavor
    parameters arrive via `penalty_cap` (increg) or `lamb_const` (constant).
    Layers tick in name order so the merged event log has a stable ordering.
    """

    def __init__(self, network, ratios: dict[str, float], gtype: GroupType, mode: str,
                 penalty_cap: float | None = None, lamb_const: float | None = None,
                 threshold: float = PRUNE_THRESHOLD):
        if mode not in ("increg", "constant", "oneshot"):
            raise ConfigError(
                f"unknown schedule mode {mode!r}; pick from constant, increg, oneshot"
            )
        self.mode = mode
        self.gtype = gtype
        self.layers: dict[str, LayerSchedule] = {}
        by_name = {l.name: l for l in network.param_layers()}
        for name in sorted(ratios):
            if name not in by_name:
                raise ConfigError(f"ratio given for unknown layer {name!r}")
            w = by_name[name].params()["weights"]
            if mode == "increg":
                if penalty_cap is None:
                    raise ConfigError("increg schedule needs a penalty cap")
                sched = EscalatingSchedule(name, w, gtype, ratios[name], penalty_cap, threshold)
            elif mode == "constant":
                if lamb_const is None:
                    raise ConfigError("constant schedule needs a factor")
                sched = ConstantSchedule(name, w, gtype, ratios[name], lamb_const, threshold)
            else:
                sched = OneshotSchedule(name, w, gtype, ratios[name], threshold)
            self.layers[name] = sched
        self._weights = {n: by_name[n].params()["weights"] for n in self.layers}
        self._bias = {n: by_name[n].params().get("bias") for n in self.layers}
        self._announced_all = False
        self._finalized = False

    # -- per-iteration protocol (tick after backward, before the SGD step) --

    def tick(self, iteration: int) -> list[SchedulerEvent]:
        if self._finalized:
            raise StateError("scheduler already finalized for retraining")
        events: list[SchedulerEvent] = []
        for name, sched in self.layers.items():
            events.extend(sched.tick(self._weights[name], self._bias[name], iteration))
        if self.all_reached and not self._announced_all:
            self._announced_all = True
            events.append(SchedulerEvent(iteration, "all_reached", None, {
                "layers": sorted(self.layers),
                "lambda_hash": self.lambda_digest(),
            }))
        return events

    def extra_decay(self) -> dict[str, np.ndarray]:
        from .groups import expand_per_group

        out = {}
        for name, sched in self.layers.items():
            lamb = sched.decay()
            if lamb is not None:
                out[name] = expand_per_group(lamb, sched.gtype, self._weights[name])
        return out

    def masks(self) -> dict[str, np.ndarray]:
        out = {}
        for name, sched in self.layers.items():
            if not sched.keep.all():
                out[name] = keep_to_weight_mask(sched.keep, sched.gtype, self._weights[name])
        return out

    def bias_masks(self) -> dict[str, np.ndarray]:
        """Per-unit keep flags for biases; row groups own their bias."""
        out = {}
        for name, sched in self.layers.items():
            if sched.gtype is GroupType.ROW and not sched.keep.all():
                out[name] = sched.keep.copy()
        return out

    # -- reporting -----------------------------------------------------------

    @property
    def all_reached(self) -> bool:
        return all(s.phase == REACHED for s in self.layers.values())

    def sparsities(self) -> dict[str, float]:
        return {name: s.sparsity() for name, s in self.layers.items()}

    def lambda_stats(self) -> dict[str, tuple[float, float, float]]:
        """Per-layer (min, mean, max) over that layer's factors."""
        return {
            name: (float(s.lamb.min()), float(s.lamb.mean()), float(s.lamb.max()))
            for name, s in self.layers.items()
        }

    def lambda_digest(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for name in sorted(self.layers):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.layers[name].lamb).tobytes())
        return h.hexdigest()

    def keep_map(self) -> dict[str, np.ndarray]:
        return {name: s.keep.copy() for name, s in self.layers.items()}

    def finalize_for_retraining(self) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
        """Freeze pruning, drop every factor to zero, return (weight, bias) masks."""
        unfinished = sorted(n for n, s in self.layers.items() if s.phase != REACHED)
        if unfinished:
            raise StateError(
                f"cannot retrain: layers still pruning: {', '.join(unfinished)}"
            )
        masks, bias_masks = self.masks(), self.bias_masks()
        for sched in self.layers.values():
            sched.lamb[:] = 0.0
        self._finalized = True
        return masks, bias_masks
