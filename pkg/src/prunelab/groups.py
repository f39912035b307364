"""Weight groups: the structured units that get regularized and removed.

A layer's weights are viewed as a 2-D matrix (filters x unrolled patch
entries for conv, outputs x inputs for dense).  A group is either one row of
that matrix (a whole filter / output neuron) or one column (one unrolled
input position across all filters).  All ranking, regularization, and
pruning operates on these groups.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeError


class GroupType(str, Enum):
    ROW = "row"
    COLUMN = "column"


@dataclass(frozen=True)
class GroupPartition:
    gtype: GroupType
    n_groups: int
    group_size: int


def weight_matrix(weights: np.ndarray) -> np.ndarray:
    """2-D view of a weight tensor; mutating the view mutates the layer."""
    if weights.ndim == 2:
        return weights
    if weights.ndim == 4:
        return weights.reshape(weights.shape[0], -1)
    raise ShapeError(f"cannot interpret weight tensor of ndim {weights.ndim} as groups")


def partition(weights: np.ndarray, gtype: GroupType) -> GroupPartition:
    w2d = weight_matrix(weights)
    if gtype is GroupType.ROW:
        return GroupPartition(gtype, w2d.shape[0], w2d.shape[1])
    return GroupPartition(gtype, w2d.shape[1], w2d.shape[0])


def group_l1_norms(weights: np.ndarray, gtype: GroupType) -> np.ndarray:
    w2d = weight_matrix(weights)
    axis = 1 if gtype is GroupType.ROW else 0
    return np.abs(w2d, dtype=np.float64).sum(axis=axis)


def group_mean_abs(weights: np.ndarray, gtype: GroupType) -> np.ndarray:
    part = partition(weights, gtype)
    return group_l1_norms(weights, gtype) / part.group_size


def rank_ascending(norms: np.ndarray) -> np.ndarray:
    """Rank 0 = smallest norm; ties broken by ascending group index."""
    order = np.argsort(norms, kind="stable")
    ranks = np.empty(len(norms), dtype=np.int64)
    ranks[order] = np.arange(len(norms))
    return ranks


def expand_per_group(values: np.ndarray, gtype: GroupType, weights: np.ndarray) -> np.ndarray:
    """Broadcast one value per group to the full weight-tensor shape."""
    w2d = weight_matrix(weights)
    part = partition(weights, gtype)
    if len(values) != part.n_groups:
        raise ShapeError(f"{len(values)} values for {part.n_groups} groups")
    if gtype is GroupType.ROW:
        full = np.broadcast_to(values[:, None], w2d.shape)
    else:
        full = np.broadcast_to(values[None, :], w2d.shape)
    return np.ascontiguousarray(full, dtype=weights.dtype).reshape(weights.shape)


def keep_to_weight_mask(keep: np.ndarray, gtype: GroupType, weights: np.ndarray) -> np.ndarray:
    return expand_per_group(keep.astype(weights.dtype), gtype, weights).astype(bool)


def zero_pruned(weights: np.ndarray, keep: np.ndarray, gtype: GroupType) -> None:
    """Force pruned groups to exact zero, in place.  Idempotent."""
    w2d = weight_matrix(weights)
    if gtype is GroupType.ROW:
        w2d[~keep, :] = 0
    else:
        w2d[:, ~keep] = 0


def sparsity(keep: np.ndarray) -> float:
    """Fraction of groups pruned."""
    return float(1.0 - keep.mean())
