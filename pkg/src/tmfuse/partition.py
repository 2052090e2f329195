"""Splitting a feature along its channel axis into (possibly overlapping) subsets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor


class PartitionError(ValueError):
    """The requested subset size and overlap do not tile the feature exactly."""


@dataclass(frozen=True)
class PartitionPlan:
    n: int
    l: int  # noqa: E741
    overlap_fraction: float
    overlap_dims: int
    stride: int
    j: int
    starts: tuple[int, ...]

    def index(self) -> np.ndarray:
        """``(J, L)`` channel indices, one row per subset."""
        return np.asarray(self.starts, dtype=np.intp)[:, None] + np.arange(self.l, dtype=np.intp)

    def describe(self) -> str:
        starts = ",".join(str(s) for s in self.starts)
        return f"J={self.j}\tstride={self.stride}\tstarts={starts}"


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def plan_partition(n: int, l: int, overlap_fraction: float = 0.0) -> PartitionPlan:  # noqa: E741
    """Plan ``J`` subsets of ``l`` channels over an ``n``-channel feature.

    Adjacent subsets share ``round(overlap_fraction * l)`` channels (round half
    up); the last subset must end exactly at channel ``n``.

    >>> plan_partition(80, 20, 0.5).j
    7
    """
    if not 1 <= l <= n:
        raise PartitionError(f"need 1 <= L <= N, got N={n} L={l}")
    if not 0.0 <= overlap_fraction < 1.0:
        raise PartitionError(f"overlap fraction must lie in [0, 1), got {overlap_fraction}")
    overlap_dims = _round_half_up(overlap_fraction * l)
    stride = l - overlap_dims
    if stride < 1:
        raise PartitionError(f"overlap {overlap_fraction} leaves stride {stride} for L={l}")
    if (n - l) % stride:
        raise PartitionError(
            f"subsets do not tile the feature: (N - L) = {n - l} is not a multiple of "
            f"stride {stride} (N={n}, L={l}, stride={stride})"
        )
    j = (n - l) // stride + 1
    return PartitionPlan(n, l, float(overlap_fraction), overlap_dims, stride, j,
                         tuple(range(0, n - l + 1, stride)))


def split(f, plan: PartitionPlan) -> list[np.ndarray]:
    """Return the ``J`` channel slices of an ``N x T`` feature (copies)."""
    data = f.data if isinstance(f, Tensor) else np.asarray(f)
    if data.ndim != 2:
        raise ShapeError(f"split expects an N x T matrix, got shape {data.shape}")
    if data.shape[0] != plan.n:
        raise ShapeError(f"feature has {data.shape[0]} channels, plan expects N={plan.n}")
    return [data[s : s + plan.l].copy() for s in plan.starts]


def concat_subsets(subsets) -> np.ndarray:
    """Stack equally-shaped ``C x T`` subsets along channels in order."""
    subsets = [np.asarray(s.data if isinstance(s, Tensor) else s) for s in subsets]
    if not subsets:
        raise ShapeError("concat_subsets needs at least one subset")
    shape = subsets[0].shape
    for i, s in enumerate(subsets):
        if s.ndim != 2 or s.shape != shape:
            raise ShapeError(f"subset {i} has shape {s.shape}, expected {shape}")
    return np.concatenate(subsets, axis=0)
