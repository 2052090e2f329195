"""Transformation module: partition a feature, then fuse cross-subset context back in.

For each subset ``F_i`` (``L x T``) of an ``N x T`` feature::

    G_i = init(F_i)                         # pointwise L -> Q
    P_i = moving_avg_pool(G_i)              # shape preserving
    V   = interact(mean_i P_i)              # pointwise Q -> Q, shared by all subsets
    U_i = fuse([G_i ; V])                   # pointwise 2Q -> L
    Z_i = znorm_frames(U_i)
    F'_i = Z_i + F_i

The three pointwise layers are shared by every subset, so the parameter count
does not depend on how many subsets there are.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import ops
from .partition import PartitionPlan
from .tensor import ConfigError, ShapeError, Tape, Tensor, as_tensor


@dataclass(frozen=True)
class TmParams:
    init: ops.ConvParams
    interact: ops.ConvParams
    fuse: ops.ConvParams
    pool_window: int = 3

    def __post_init__(self):
        l, q = self.init.in_channels, self.init.out_channels  # noqa: E741
        ok = (
            self.init.kernel_size == 1
            and self.interact.weight.shape == (q, q, 1)
            and self.fuse.weight.shape == (l, 2 * q, 1)
        )
        if not ok:
            raise ConfigError(
                "TM layers must be init L->Q, interact Q->Q, fuse 2Q->L with kernel 1; got "
                f"{self.init.weight.shape}, {self.interact.weight.shape}, {self.fuse.weight.shape}"
            )
        if self.pool_window < 1 or self.pool_window % 2 == 0:
            raise ConfigError(f"pool_window must be odd and positive, got {self.pool_window}")

    @property
    def l(self) -> int:  # noqa: E743
        return self.init.in_channels

    @property
    def q(self) -> int:
        return self.init.out_channels

    @property
    def num_params(self) -> int:
        return self.init.num_params + self.interact.num_params + self.fuse.num_params

    def tensors(self) -> list[Tensor]:
        return self.init.tensors() + self.interact.tensors() + self.fuse.tensors()


@dataclass
class TmIntermediate:
    """Every stage output, lane axis first: ``G, P, U, Z, out`` are ``(J, C, T)``; ``V`` is ``(Q, T)``."""

    F: Tensor
    G: Tensor
    P: Tensor
    V: Tensor
    U: Tensor
    Z: Tensor
    out: Tensor


def tm_init(l: int, q: int | None = None, pool_window: int = 3, seed: int = 0,  # noqa: E741
            rng: np.random.Generator | None = None) -> TmParams:
    """Deterministically initialised TM weights; ``q`` defaults to ``2 * l``."""
    q = 2 * l if q is None else q
    if l < 1 or q < 1:
        raise ConfigError(f"TM dims must be positive, got L={l} Q={q}")
    if pool_window < 1 or pool_window % 2 == 0:
        raise ConfigError(f"pool_window must be odd and positive, got {pool_window}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    return TmParams(
        init=ops.init_conv(q, l, rng=rng),
        interact=ops.init_conv(q, q, rng=rng),
        fuse=ops.init_conv(l, 2 * q, rng=rng),
        pool_window=pool_window,
    )


def _stack(items) -> Tensor:
    if isinstance(items, Tensor):
        return items
    if isinstance(items, np.ndarray):
        return Tensor(items)
    arrays = [np.asarray(p.data if isinstance(p, Tensor) else p) for p in items]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"subsets disagree in shape: {sorted(shapes)}")
    return Tensor(np.stack(arrays))


def interact(pooled, params: TmParams) -> Tensor:
    """Interacted vector: pointwise conv of the mean over subsets (lane axis ``-3``)."""
    p = _stack(pooled)
    if p.data.ndim < 3 or p.shape[-2] != params.q:
        raise ShapeError(f"interact expects (..., J, {params.q}, T), got {p.shape}")
    return ops.pointwise_conv(ops.lane_mean(p), params.interact)


def fuse(g, v, params: TmParams) -> Tensor:
    """``fuse_conv([G_i ; V])``; ``V`` broadcasts over any lane axis of ``G``."""
    g, v = as_tensor(g), as_tensor(v)
    if g.shape[-2] != params.q or v.shape[-2] != params.q:
        raise ShapeError(f"fuse expects {params.q}-channel G and V, got {g.shape} and {v.shape}")
    return ops.pointwise_conv(ops.concat_channels(g, v), params.fuse)


def tm_apply(x, plan: PartitionPlan, params: TmParams) -> TmIntermediate:
    """Run the module on ``(..., N, T)``; lanes appear as a new axis before channels."""
    x = as_tensor(x)
    if plan.l != params.l:
        raise ShapeError(f"plan subset dim L={plan.l} does not match TM input L={params.l}")
    if x.data.ndim < 2 or x.shape[-2] != plan.n:
        raise ShapeError(f"TM input must have N={plan.n} channels, got shape {x.shape}")
    f = ops.gather_channels(x, plan.index())
    g = ops.pointwise_conv(f, params.init)
    p = ops.moving_avg_pool(g, params.pool_window)
    v = ops.pointwise_conv(ops.lane_mean(p), params.interact)
    u = ops.pointwise_conv(ops.concat_channels(g, ops.as_lane(v)), params.fuse)
    z = ops.znorm_frames(u)
    out = ops.add(z, f)
    return TmIntermediate(F=f, G=g, P=p, V=v, U=u, Z=z, out=out)


def tm_forward(f, plan: PartitionPlan, params: TmParams, tape: Tape | None = None):
    """Transform an ``N x T`` feature into ``J`` matrices of ``L x T``.

    Returns ``(outputs, intermediates)`` where ``outputs`` is a list of
    ``Tensor``. Pass ``tape`` to record the computation for :func:`backward`.
    """
    f = as_tensor(f)
    if f.data.ndim != 2:
        raise ShapeError(f"tm_forward expects an N x T matrix, got shape {f.shape}")
    ctx = tape if tape is not None else contextlib.nullcontext()
    with ctx:
        inter = tm_apply(f, plan, params)
        outs = [ops.take_lane(inter.out, i) for i in range(plan.j)]
    return outs, inter
