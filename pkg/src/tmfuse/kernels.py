"""Hot inner loops, each in a numba and a pure-numpy flavour.

All kernels take C-contiguous ``(batch, channels, frames)`` arrays; callers
flatten any extra leading axes into ``batch``. The dispatchers at the bottom
pick an implementation per call from :mod:`tmfuse._backend`, so the flag can
be flipped at runtime (the benchmark does this).
"""

from __future__ import annotations

import numpy as np

from . import _backend

# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _conv1d_forward_np(x, w, dilation):
    b, ci, t = x.shape
    co, _, k = w.shape
    pad = (k - 1) * dilation // 2
    xp = np.zeros((b, ci, t + 2 * pad), dtype=x.dtype)
    xp[:, :, pad : pad + t] = x
    out = np.zeros((b, co, t), dtype=x.dtype)
    for j in range(k):
        s = j * dilation
        out += np.matmul(w[:, :, j], xp[:, :, s : s + t])
    return out


def _conv1d_backward_np(x, w, gout, dilation):
    b, ci, t = x.shape
    co, _, k = w.shape
    pad = (k - 1) * dilation // 2
    xp = np.zeros((b, ci, t + 2 * pad), dtype=x.dtype)
    xp[:, :, pad : pad + t] = x
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for j in range(k):
        s = j * dilation
        gxp[:, :, s : s + t] += np.matmul(w[:, :, j].T, gout)
        gw[:, :, j] = np.einsum("bot,bct->oc", gout, xp[:, :, s : s + t])
    return gxp[:, :, pad : pad + t].copy(), gw


def _moving_average_np(x, window):
    h = window // 2
    t = x.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (h, h)), mode="edge")
    dev = np.zeros_like(x)
    for j in range(window):
        dev += xp[:, :, j : j + t] - x
    return x + dev / window


def _moving_average_backward_np(gout, window):
    h = window // 2
    t = gout.shape[2]
    gp = np.zeros((gout.shape[0], gout.shape[1], t + 2 * h), dtype=gout.dtype)
    scaled = gout / window
    for j in range(window):
        gp[:, :, j : j + t] += scaled
    gx = gp[:, :, h : h + t].copy()
    # fold the replicated edge cells back onto the first/last frame
    gx[:, :, 0] += gp[:, :, :h].sum(axis=2)
    gx[:, :, t - 1] += gp[:, :, h + t :].sum(axis=2)
    return gx


def _sliding_mean_std_np(x, window):
    c, t = x.shape
    shift = x.mean(axis=1, keepdims=True)
    xc = x - shift
    cs = np.zeros((c, t + 1), dtype=np.float64)
    cs2 = np.zeros((c, t + 1), dtype=np.float64)
    np.cumsum(xc, axis=1, out=cs[:, 1:])
    np.cumsum(xc * xc, axis=1, out=cs2[:, 1:])
    half = window // 2
    idx = np.arange(t)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx - half + window, t)
    n = (hi - lo).astype(np.float64)
    s1 = cs[:, hi] - cs[:, lo]
    s2 = cs2[:, hi] - cs2[:, lo]
    m = s1 / n
    var = np.maximum(s2 / n - m * m, 0.0)
    return m + shift, np.sqrt(var)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _backend.HAVE_NUMBA:
    from numba import njit, prange

    @njit(cache=True)
    def _im2col_nb(xb, k, dilation, pad):
        ci, t = xb.shape
        cols = np.zeros((ci * k, t), dtype=xb.dtype)
        for c in range(ci):
            for j in range(k):
                off = j * dilation - pad
                t0 = max(0, -off)
                t1 = min(t, t - off)
                row = c * k + j
                for tt in range(t0, t1):
                    cols[row, tt] = xb[c, tt + off]
        return cols

    @njit(parallel=True, cache=True)
    def _conv1d_forward_nb(x, w, dilation):
        b, ci, t = x.shape
        co, _, k = w.shape
        pad = (k - 1) * dilation // 2
        w2 = np.ascontiguousarray(w.reshape(co, ci * k))
        out = np.empty((b, co, t), dtype=x.dtype)
        for bb in prange(b):
            out[bb] = np.dot(w2, _im2col_nb(x[bb], k, dilation, pad))
        return out

    @njit(cache=True)
    def _conv1d_backward_nb(x, w, gout, dilation):
        b, ci, t = x.shape
        co, _, k = w.shape
        pad = (k - 1) * dilation // 2
        w2t = np.ascontiguousarray(w.reshape(co, ci * k).T)
        gx = np.zeros_like(x)
        gw2 = np.zeros((co, ci * k), dtype=w.dtype)
        for bb in range(b):
            g = np.ascontiguousarray(gout[bb])
            cols = _im2col_nb(x[bb], k, dilation, pad)
            gw2 += np.dot(g, cols.T)
            gcols = np.dot(w2t, g)
            for c in range(ci):
                for j in range(k):
                    off = j * dilation - pad
                    t0 = max(0, -off)
                    t1 = min(t, t - off)
                    row = c * k + j
                    for tt in range(t0, t1):
                        gx[bb, c, tt + off] += gcols[row, tt]
        return gx, gw2.reshape(co, ci, k)

    @njit(parallel=True, cache=True)
    def _moving_average_nb(x, window):
        b, c, t = x.shape
        h = window // 2
        out = np.empty_like(x)
        for bb in prange(b):
            for cc in range(c):
                for tt in range(t):
                    centre = x[bb, cc, tt]
                    dev = 0.0
                    for j in range(-h, h + 1):
                        s = min(max(tt + j, 0), t - 1)
                        dev += x[bb, cc, s] - centre
                    out[bb, cc, tt] = centre + dev / window
        return out

    @njit(parallel=True, cache=True)
    def _moving_average_backward_nb(gout, window):
        b, c, t = gout.shape
        h = window // 2
        gx = np.zeros_like(gout)
        for bb in prange(b):
            for cc in range(c):
                for tt in range(t):
                    g = gout[bb, cc, tt] / window
                    for j in range(-h, h + 1):
                        s = min(max(tt + j, 0), t - 1)
                        gx[bb, cc, s] += g
        return gx

    @njit(parallel=True, cache=True)
    def _sliding_mean_std_nb(x, window):
        c, t = x.shape
        half = window // 2
        mean = np.empty((c, t))
        std = np.empty((c, t))
        for cc in prange(c):
            shift = 0.0
            for tt in range(t):
                shift += x[cc, tt]
            shift /= t
            s1 = 0.0
            s2 = 0.0
            lo = 0
            hi = 0
            for tt in range(t):
                new_lo = max(tt - half, 0)
                new_hi = min(tt - half + window, t)
                while hi < new_hi:
                    v = x[cc, hi] - shift
                    s1 += v
                    s2 += v * v
                    hi += 1
                while lo < new_lo:
                    v = x[cc, lo] - shift
                    s1 -= v
                    s2 -= v * v
                    lo += 1
                n = hi - lo
                m = s1 / n
                var = s2 / n - m * m
                if var < 0.0:
                    var = 0.0
                mean[cc, tt] = m + shift
                std[cc, tt] = np.sqrt(var)
        return mean, std


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _c(a):
    return np.ascontiguousarray(a)


def conv1d_forward(x, w, dilation):
    """Zero-padded, same-length dilated cross-correlation without bias."""
    if _backend.use_numba():
        return _conv1d_forward_nb(_c(x), _c(w), int(dilation))
    return _conv1d_forward_np(x, w, dilation)


def conv1d_backward(x, w, gout, dilation):
    """Gradients of :func:`conv1d_forward` w.r.t. input and weights."""
    if _backend.use_numba():
        return _conv1d_backward_nb(_c(x), _c(w), _c(gout), int(dilation))
    return _conv1d_backward_np(x, w, gout, dilation)


def moving_average(x, window):
    if _backend.use_numba():
        return _moving_average_nb(_c(x), int(window))
    return _moving_average_np(x, window)


def moving_average_backward(gout, window):
    if _backend.use_numba():
        return _moving_average_backward_nb(_c(gout), int(window))
    return _moving_average_backward_np(gout, window)


def sliding_mean_std(x, window):
    """Per-channel mean/std over a centred ``window``-frame span, truncated at the edges."""
    x = np.asarray(x, dtype=np.float64)
    if _backend.use_numba():
        return _sliding_mean_std_nb(_c(x), int(window))
    return _sliding_mean_std_np(x, window)
