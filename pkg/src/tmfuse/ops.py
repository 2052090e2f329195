"""Differentiable operations on ``(..., channels, frames)`` tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import ConfigError, ShapeError, Tensor, UsageError, as_tensor, parameter, record

EPS = 1e-8
# smaller guard for the per-frame z-score so frames with std >= 1e-3 still come out at
# unit std to within 1e-6 (1e-8 would leave a 1e-5 shortfall there)
ZNORM_EPS = 1e-10


@dataclass(frozen=True)
class ConvParams:
    """Weights ``(out, in, kernel)`` and bias ``(out,)`` of a 1-D convolution."""

    weight: Tensor
    bias: Tensor
    dilation: int = 1

    def __post_init__(self):
        w, b = self.weight.shape, self.bias.shape
        if len(w) != 3 or b != (w[0],):
            raise ShapeError(f"weight {w} and bias {b} do not form a conv layer")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")
        if not (np.all(np.isfinite(self.weight.data)) and np.all(np.isfinite(self.bias.data))):
            raise ValueError("conv parameters must be finite")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    @property
    def num_params(self) -> int:
        return self.weight.data.size + self.bias.data.size

    def tensors(self) -> list[Tensor]:
        return [self.weight, self.bias]


def init_conv(out_channels: int, in_channels: int, kernel_size: int = 1, dilation: int = 1,
              rng: np.random.Generator | None = None, dtype=None) -> ConvParams:
    """Uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` with ``fan_in = in * kernel``."""
    if min(out_channels, in_channels, kernel_size, dilation) < 1:
        raise ConfigError(
            f"conv dims must be positive: out={out_channels} in={in_channels} "
            f"kernel={kernel_size} dilation={dilation}"
        )
    rng = rng if rng is not None else np.random.default_rng(0)
    bound = 1.0 / np.sqrt(in_channels * kernel_size)
    w = rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel_size))
    b = rng.uniform(-bound, bound, size=out_channels)
    if dtype is not None:
        w, b = w.astype(dtype), b.astype(dtype)
    return ConvParams(parameter(w), parameter(b), dilation)


def conv_from_arrays(weight, bias, dilation: int = 1) -> ConvParams:
    weight = np.asarray(weight, dtype=float)
    if weight.ndim == 2:
        weight = weight[:, :, None]
    return ConvParams(parameter(weight), parameter(np.asarray(bias, dtype=float)), dilation)


def _check_channels(x: Tensor, expected: int, what: str):
    if x.data.ndim < 2:
        raise ShapeError(f"{what}: expected (..., channels, frames), got shape {x.shape}")
    if x.shape[-2] != expected:
        raise ShapeError(f"{what}: input has {x.shape[-2]} channels, layer expects {expected}")


def _flat3(a: np.ndarray) -> np.ndarray:
    return a.reshape((-1,) + a.shape[-2:])


# ---------------------------------------------------------------------------
# convolutions and pooling
# ---------------------------------------------------------------------------


def _pw_forward(x, w, b):
    return np.matmul(w[:, :, 0], x) + b[:, None]


def pointwise_conv(x, p: ConvParams) -> Tensor:
    """Kernel-size-1 convolution: ``out[q, t] = b[q] + sum_c W[q, c] x[c, t]``."""
    x = as_tensor(x)
    if p.kernel_size != 1:
        raise ConfigError(f"pointwise_conv needs kernel_size 1, got {p.kernel_size}")
    _check_channels(x, p.in_channels, "pointwise_conv")
    xd, w = x.data, p.weight.data
    out = _pw_forward(xd, w, p.bias.data)

    def vjp(g):
        gx = np.matmul(w[:, :, 0].T, g)
        xb = np.broadcast_to(xd, g.shape[:-2] + xd.shape[-2:])
        gw = np.einsum("bot,bct->oc", _flat3(g), _flat3(xb))[:, :, None]
        gb = g.reshape(-1, g.shape[-2], g.shape[-1]).sum(axis=(0, 2))
        return gx, gw, gb

    return record("pointwise_conv", (x, p.weight, p.bias), out, _pw_forward, vjp)


def _dc_forward(x, w, b, dilation):
    lead = x.shape[:-2]
    y = kernels.conv1d_forward(_flat3(x), w, dilation)
    return y.reshape(lead + y.shape[-2:]) + b[:, None]


def dilated_conv1d(x, p: ConvParams) -> Tensor:
    """Same-length dilated cross-correlation with symmetric zero padding plus bias."""
    x = as_tensor(x)
    if p.kernel_size % 2 == 0:
        raise ConfigError(f"dilated_conv1d needs an odd kernel_size, got {p.kernel_size}")
    _check_channels(x, p.in_channels, "dilated_conv1d")
    xd, w, d = x.data, p.weight.data, p.dilation
    out = _dc_forward(xd, w, p.bias.data, d)

    def vjp(g):
        gx, gw = kernels.conv1d_backward(_flat3(xd), w, _flat3(g), d)
        gb = g.reshape(-1, g.shape[-2], g.shape[-1]).sum(axis=(0, 2))
        return gx.reshape(xd.shape), gw, gb

    return record("dilated_conv1d", (x, p.weight, p.bias), out,
                  lambda x_, w_, b_: _dc_forward(x_, w_, b_, d), vjp)


def conv1d(x, p: ConvParams) -> Tensor:
    """Route kernel-size-1 layers to :func:`pointwise_conv`, the rest to :func:`dilated_conv1d`."""
    if p.kernel_size == 1:
        return pointwise_conv(x, p)
    return dilated_conv1d(x, p)


def _check_window(window: int):
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"pool window must be odd and positive, got {window}")


def _map_forward(x, window):
    return kernels.moving_average(_flat3(x), window).reshape(x.shape)


def moving_avg_pool(x, window: int) -> Tensor:
    """Temporal moving average with edge replication; output shape equals input shape."""
    x = as_tensor(x)
    _check_window(window)
    if window == 1:
        return x
    out = _map_forward(x.data, window)

    def vjp(g):
        return (kernels.moving_average_backward(_flat3(g), window).reshape(g.shape),)

    return record("moving_avg_pool", (x,), out, lambda x_: _map_forward(x_, window), vjp)


# ---------------------------------------------------------------------------
# normalisation and statistics
# ---------------------------------------------------------------------------


def _znorm_forward(x):
    mu = x.mean(axis=-2, keepdims=True)
    d = x - mu
    sigma = np.sqrt((d * d).mean(axis=-2, keepdims=True))
    return d / (sigma + ZNORM_EPS)


def znorm_frames(x) -> Tensor:
    """Per-frame z-score across channels: ``(x - mean_t) / (std_t + eps)``."""
    x = as_tensor(x)
    xd = x.data
    n = xd.shape[-2]
    mu = xd.mean(axis=-2, keepdims=True)
    d = xd - mu
    sigma = np.sqrt((d * d).mean(axis=-2, keepdims=True))
    s = sigma + ZNORM_EPS
    out = d / s

    def vjp(g):
        gd = g - g.mean(axis=-2, keepdims=True)
        proj = (g * d).sum(axis=-2, keepdims=True)
        safe = np.where(sigma > 0, sigma, 1.0)
        corr = np.where(sigma > 0, proj / (s * s * n * safe), 0.0)
        return (gd / s - d * corr,)

    return record("znorm_frames", (x,), out, _znorm_forward, vjp)


def _stats_forward(x):
    mu = x.mean(axis=-1)
    sd = np.sqrt(((x - mu[..., None]) ** 2).mean(axis=-1))
    return np.concatenate([mu, sd], axis=-1)


def stats_pooling(x) -> Tensor:
    """Concatenate per-channel temporal mean and population std: ``(..., C, T) -> (..., 2C)``."""
    x = as_tensor(x)
    xd = x.data
    c, t = xd.shape[-2:]
    out = _stats_forward(xd)
    mu = out[..., :c]
    sd = out[..., c:]
    d = xd - mu[..., None]

    def vjp(g):
        gm, gs = g[..., :c], g[..., c:]
        gx = gm[..., None] / t + d * (gs / (t * (sd + EPS)))[..., None]
        return (gx,)

    return record("stats_pooling", (x,), out, _stats_forward, vjp)


def _l2n_forward(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def l2_normalize(x) -> Tensor:
    """Scale each vector along the last axis to unit Euclidean norm."""
    x = as_tensor(x)
    norm = np.linalg.norm(x.data, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise UsageError("cannot normalise a zero vector")
    y = x.data / norm

    def vjp(g):
        return ((g - y * (y * g).sum(axis=-1, keepdims=True)) / norm,)

    return record("l2_normalize", (x,), y, _l2n_forward, vjp)


# ---------------------------------------------------------------------------
# elementwise / structural
# ---------------------------------------------------------------------------


def _relu(x):
    return np.maximum(x, 0.0)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record("relu", (x,), _relu(x.data), _relu, lambda g: (g * mask,))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record("add", (a, b), a.data + b.data, np.add, lambda g: (g, g))


def _lane_mean(x):
    return x.mean(axis=-3)


def lane_mean(x) -> Tensor:
    """Average over the subset axis: ``(..., J, C, T) -> (..., C, T)``."""
    x = as_tensor(x)
    if x.data.ndim < 3:
        raise ShapeError(f"lane_mean expects (..., J, C, T), got {x.shape}")
    j = x.shape[-3]
    shape = x.shape

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, -3) / j, shape).copy(),)

    return record("lane_mean", (x,), _lane_mean(x.data), _lane_mean, vjp)


def as_lane(x) -> Tensor:
    """Insert a singleton lane axis: ``(..., C, T) -> (..., 1, C, T)``."""
    x = as_tensor(x)
    shape = x.shape
    fwd = lambda x_: np.expand_dims(x_, -3)  # noqa: E731
    return record("as_lane", (x,), fwd(x.data), fwd, lambda g: (g.reshape(shape),))


def take_lane(x, i: int) -> Tensor:
    """Select lane ``i``: ``(..., J, C, T) -> (..., C, T)``."""
    x = as_tensor(x)
    shape = x.shape
    fwd = lambda x_: x_[..., i, :, :]  # noqa: E731

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[..., i, :, :] = g
        return (gx,)

    return record("take_lane", (x,), fwd(x.data), fwd, vjp)


def _concat_forward(a, b):
    lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    a = np.broadcast_to(a, lead + a.shape[-2:])
    b = np.broadcast_to(b, lead + b.shape[-2:])
    return np.concatenate([a, b], axis=-2)


def concat_channels(a, b) -> Tensor:
    """Stack ``a`` on top of ``b`` along channels, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"concat_channels: frame counts differ ({a.shape[-1]} vs {b.shape[-1]})")
    ca = a.shape[-2]
    out = _concat_forward(a.data, b.data)
    return record("concat_channels", (a, b), out, _concat_forward,
                  lambda g: (g[..., :ca, :], g[..., ca:, :]))


def gather_channels(x, index: np.ndarray) -> Tensor:
    """Pick channel groups: ``index`` of shape ``(J, L)`` maps ``(..., N, T) -> (..., J, L, T)``."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    shape = x.shape
    fwd = lambda x_: x_[..., index, :]  # noqa: E731

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        flat = g.reshape(g.shape[:-3] + (-1, g.shape[-1]))
        np.add.at(gx, (Ellipsis, index.reshape(-1), slice(None)), flat)
        return (gx,)

    return record("gather_channels", (x,), fwd(x.data), fwd, vjp)


def merge_lanes(x) -> Tensor:
    """Channel-wise concatenation of lanes: ``(..., J, C, T) -> (..., J*C, T)``."""
    x = as_tensor(x)
    shape = x.shape
    fwd = lambda x_: x_.reshape(x_.shape[:-3] + (-1, x_.shape[-1]))  # noqa: E731
    return record("merge_lanes", (x,), fwd(x.data), fwd, lambda g: (g.reshape(shape),))


def splice_frames(x) -> Tensor:
    """Join lanes end to end in time: ``(..., J, C, T) -> (..., C, J*T)``."""
    x = as_tensor(x)
    shape = x.shape

    def fwd(x_):
        j, c, t = x_.shape[-3:]
        return np.swapaxes(x_, -3, -2).reshape(x_.shape[:-3] + (c, j * t))

    def vjp(g):
        j, c, t = shape[-3:]
        return (np.swapaxes(g.reshape(shape[:-3] + (c, j, t)), -3, -2),)

    return record("splice_frames", (x,), fwd(x.data), fwd, vjp)


def _linear_forward(x, w, b):
    return x @ w.T + b


def linear(x, w: Tensor, b: Tensor) -> Tensor:
    """Affine map on the last axis: ``x @ w.T + b``."""
    x = as_tensor(x)
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != weight in-dim {w.shape[1]}")
    xd, wd = x.data, w.data

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        return g @ wd, g2.T @ xd.reshape(-1, xd.shape[-1]), g2.sum(axis=0)

    return record("linear", (x, w, b), _linear_forward(xd, wd, b.data), _linear_forward, vjp)


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    fwd = lambda x_: np.asarray(x_.sum())  # noqa: E731
    return record("sum_all", (x,), fwd(x.data), fwd,
                  lambda g: (np.broadcast_to(g, shape).copy(),))


def weighted_sum(x, weights) -> Tensor:
    """``sum(x * weights)`` with a constant weight array; handy as a generic scalar probe."""
    x = as_tensor(x)
    wts = np.asarray(weights, dtype=x.dtype)
    fwd = lambda x_: np.asarray((x_ * wts).sum())  # noqa: E731
    return record("weighted_sum", (x,), fwd(x.data), fwd, lambda g: (g * wts,))


# ---------------------------------------------------------------------------
# additive angular margin softmax
# ---------------------------------------------------------------------------

COS_CLAMP = 1e-7


def _aam_parts(e, w, labels, margin, scale):
    cos = e @ w.T
    lo, hi = -1.0 + COS_CLAMP, 1.0 - COS_CLAMP
    inside = (cos > lo) & (cos < hi)
    c = np.clip(cos, lo, hi)
    rows = np.arange(len(labels))
    cy = c[rows, labels]
    sy = np.sqrt(1.0 - cy * cy)
    logits = scale * c
    logits[rows, labels] = scale * (cy * np.cos(margin) - sy * np.sin(margin))
    zmax = logits.max(axis=1, keepdims=True)
    ez = np.exp(logits - zmax)
    lse = np.log(ez.sum(axis=1)) + zmax[:, 0]
    losses = lse - logits[rows, labels]
    return losses, ez / ez.sum(axis=1, keepdims=True), inside, cy, sy


def aam_softmax_loss(embeddings, class_weights, labels, margin: float = 0.2, scale: float = 30.0) -> Tensor:
    """Mean additive-angular-margin softmax loss over a batch.

    ``embeddings`` is ``(B, D)`` and ``class_weights`` is ``(S, D)``; both must
    already be unit-norm rows. ``labels`` holds integer class ids.
    """
    e, w = as_tensor(embeddings), as_tensor(class_weights)
    if e.data.ndim == 1:
        raise ShapeError("aam_softmax_loss expects a (batch, dim) embedding matrix")
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    if not 0 <= margin < np.pi / 2 or scale <= 0:
        raise ConfigError(f"need 0 <= margin < pi/2 and scale > 0, got margin={margin} scale={scale}")
    for what, arr in (("embedding", e.data), ("class weight", w.data)):
        dev = np.abs(np.linalg.norm(arr, axis=-1) - 1.0).max()
        if dev > 1e-6:
            raise UsageError(f"{what} rows must be unit-norm (max deviation {dev:.3g})")
    if len(labels) != e.shape[0] or labels.min() < 0 or labels.max() >= w.shape[0]:
        raise ShapeError("labels do not match the batch or the class count")
    ed, wd = e.data, w.data
    losses, prob, inside, cy, sy = _aam_parts(ed, wd, labels, margin, scale)
    bsz = len(labels)
    rows = np.arange(bsz)

    def fwd(e_, w_):
        return np.asarray(_aam_parts(e_, w_, labels, margin, scale)[0].mean())

    def vjp(g):
        dz = prob.copy()
        dz[rows, labels] -= 1.0
        dcos = scale * dz
        dcos[rows, labels] *= np.cos(margin) + np.sin(margin) * cy / sy
        dcos *= inside
        dcos *= g / bsz
        return dcos @ wd, dcos.T @ ed

    return record("aam_softmax_loss", (e, w), np.asarray(losses.mean()), fwd, vjp)
