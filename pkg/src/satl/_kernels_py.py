"""Pure-Python/numpy fallback for the hot kernels.

This module defines the reference semantics; the compiled extension
(_kernels.pyx) reproduces them bit-for-bit:

* im2col / col2im use the same window ordering and, in col2im, the same
  (ki, kj)-outer accumulation order, so float rounding matches.
* maxpool window order is row-major and ties take the first maximum.
* The PRNG kernels advance an identical xoshiro256** integer stream and
  derive floats with the same expressions through the same libm, so the
  two backends emit identical bytes.

Array arguments must be C-contiguous float32 or float64.
"""

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53
_TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# convolution reshuffles


def im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Gather all kh x kw windows of a padded NCHW batch.

    Returns a (C*kh*kw, N*OH*OW) matrix; row q corresponds to kernel slot
    (c, ki, kj) in row-major order, column r to output position (n, oh, ow).
    Filled one (ki, kj) shift at a time so every copy is a big regular
    block, which is far faster than an element-order gather.
    """
    n, c, h, w = xp.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    out = np.empty((c * kh * kw, n * oh * ow), dtype=xp.dtype)
    out6 = out.reshape(c, kh, kw, n, oh, ow)
    xpt = xp.transpose(1, 0, 2, 3)
    for ki in range(kh):
        for kj in range(kw):
            out6[:, ki, kj] = xpt[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride]
    return out


def col2im(
    cols: np.ndarray, n: int, c: int, h: int, w: int, kh: int, kw: int, stride: int
) -> np.ndarray:
    """Scatter-add the inverse of im2col back onto an (n, c, h, w) canvas."""
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    d6 = cols.reshape(c, kh, kw, n, oh, ow)
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    # (ki, kj)-outer accumulation; the compiled kernel matches this order.
    for ki in range(kh):
        for kj in range(kw):
            out[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += d6[
                :, ki, kj
            ].transpose(1, 0, 2, 3)
    return out


# ---------------------------------------------------------------------------
# 2x2 max pooling


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint 2x2 max pooling; returns (pooled, argmax in 0..3 per window)."""
    n, c, h, w = x.shape
    windows = (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    idx = windows.argmax(axis=4).astype(np.uint8)  # first max wins on ties
    out = np.take_along_axis(windows, idx[..., None].astype(np.intp), axis=4)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward(g: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Route each output gradient to the argmax position of its window."""
    n, c, oh, ow = g.shape
    buf = np.zeros((n, c, oh, ow, 4), dtype=g.dtype)
    np.put_along_axis(buf, idx[..., None].astype(np.intp), g[..., None], axis=4)
    return np.ascontiguousarray(
        buf.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh * 2, ow * 2)
    )


# ---------------------------------------------------------------------------
# xoshiro256** bulk generation


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def _next(s0: int, s1: int, s2: int, s3: int) -> tuple[int, int, int, int, int]:
    result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
    t = (s1 << 17) & _MASK64
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    return result, s0, s1, s2, s3


def prng_fill_uniform(state: np.ndarray, out: np.ndarray, bounded: bool) -> None:
    """Fill `out` (float64) with uniforms, advancing `state` (uint64[4]) in place.

    bounded=False -> [0, 1); bounded=True -> (0, 1] (safe under log).
    """
    s0, s1, s2, s3 = (int(v) for v in state)
    flat = out.reshape(-1)
    if bounded:
        for i in range(flat.shape[0]):
            x, s0, s1, s2, s3 = _next(s0, s1, s2, s3)
            flat[i] = ((x >> 11) + 1) * _INV_2_53
    else:
        for i in range(flat.shape[0]):
            x, s0, s1, s2, s3 = _next(s0, s1, s2, s3)
            flat[i] = (x >> 11) * _INV_2_53
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


def prng_fill_normal(state: np.ndarray, out: np.ndarray) -> None:
    """Fill `out` (float64) with standard normals via Box-Muller pairs.

    Consumes exactly 2*ceil(n/2) raw draws so the stream position does not
    depend on parity of n.
    """
    s0, s1, s2, s3 = (int(v) for v in state)
    flat = out.reshape(-1)
    n = flat.shape[0]
    i = 0
    while i < n:
        x, s0, s1, s2, s3 = _next(s0, s1, s2, s3)
        u1 = ((x >> 11) + 1) * _INV_2_53
        x, s0, s1, s2, s3 = _next(s0, s1, s2, s3)
        u2 = (x >> 11) * _INV_2_53
        r = math.sqrt(-2.0 * math.log(u1))
        theta = _TWO_PI * u2
        flat[i] = r * math.cos(theta)
        if i + 1 < n:
            flat[i + 1] = r * math.sin(theta)
        i += 2
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3
