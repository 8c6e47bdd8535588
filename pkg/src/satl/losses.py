"""Loss functions: cross entropy for source training and the adaptation
objective (weighted KL + pixel + Gram reconstruction terms).

The adaptation total is  alpha * KL + beta1 * pixel + beta2 * gram,
where KL is taken against a unit Gaussian prior and the Gram term compares
channel-by-channel style statistics of the reconstruction and the input
image. Reductions are per sample, then averaged over the batch; "mean"
(default) keeps the weights resolution-independent, "sum" gives the literal
summed form.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import tensor as T
from .engine.tensor import Tensor
from .errors import ContractError, DimensionError


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.3
    beta1: float = 0.2
    beta2: float = 0.5
    reduction: str = "mean"

    def __post_init__(self):
        for name in ("alpha", "beta1", "beta2"):
            if getattr(self, name) < 0:
                raise ContractError(f"LossWeights.{name} must be >= 0")
        if self.reduction not in ("mean", "sum"):
            raise ContractError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Stabilized with the log-sum-exp shift, so +/-1000 logits are safe.
    Implemented as a fused primitive with the softmax-minus-onehot gradient.
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [N,K] logits, got {logits.shape}")
    n, k = logits.shape
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ContractError(f"labels length {y.shape} != batch size {n}")
    if y.dtype.kind not in "iu" or y.min() < 0 or y.max() >= k:
        raise ContractError(f"labels must be integers in [0, {k})")

    z = logits.data
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    sez = ez.sum(axis=1, keepdims=True)
    lse = (m + np.log(sez)).reshape(n)
    nll = lse - z[np.arange(n), y]
    out = np.asarray(nll.sum() / z.dtype.type(n))

    def vjp(g):
        soft = ez / sez
        d = soft.copy()
        d[np.arange(n), y] -= 1.0
        d *= g / z.dtype.type(n)
        return (d.astype(z.dtype, copy=False),)

    return T._apply("cross_entropy", out, (logits,), vjp)


def kl_divergence(mu: Tensor, logvar: Tensor, reduction: str = "mean") -> Tensor:
    """KL(N(mu, diag exp(logvar)) || N(0, I)), reduced over all elements.

    Elementwise 0.5 * (mu^2 + exp(logvar) - logvar - 1); non-negative, and
    exactly zero only at mu = 0, logvar = 0.
    """
    if mu.shape != logvar.shape:
        raise DimensionError(f"kl_divergence: shapes differ, {mu.shape} vs {logvar.shape}")
    t = T.add(T.square(mu), T.exp(logvar))
    t = T.sub(t, logvar)
    t = T.add_scalar(t, -1.0)
    if reduction == "mean":
        r = T.reduce_mean(t)
    elif reduction == "sum":
        r = T.reduce_sum(t)
    else:
        raise ContractError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    return T.scale(r, 0.5)


def gram_matrix(b: Tensor) -> Tensor:
    """Channel Gram matrix of one CHW sample: (V V^T) / (C*H*W).

    V is the C x (H*W) matrix of per-channel flattened values; the result is
    symmetric positive semidefinite and spatially permutation-invariant.
    """
    if b.ndim != 3:
        raise DimensionError(f"gram_matrix expects a CHW sample, got {b.shape}")
    c, h, w = b.shape
    v = T.reshape(b, (c, h * w))
    g = T.matmul(v, T.transpose(v))
    return T.scale(g, 1.0 / (c * h * w))


def _pixel_term(output: Tensor, ref: Tensor, reduction: str) -> Tensor:
    n = output.shape[0]
    sq = T.square(T.sub(output, ref))
    if reduction == "mean":
        # per-sample mean then batch average == global mean
        return T.reduce_mean(sq)
    return T.scale(T.reduce_sum(sq), 1.0 / n)


def _gram_term(output: Tensor, ref: Tensor, reduction: str) -> Tensor:
    n = output.shape[0]
    acc = None
    for i in range(n):
        d = T.sub(gram_matrix(T.slice0(output, i)), gram_matrix(T.slice0(ref, i)))
        sq = T.square(d)
        term = T.reduce_mean(sq) if reduction == "mean" else T.reduce_sum(sq)
        acc = term if acc is None else T.add(acc, term)
    return T.scale(acc, 1.0 / n)


def _combine_rec(pixel: Tensor, gram: Tensor, w: LossWeights) -> Tensor:
    return T.add(T.scale(pixel, w.beta1), T.scale(gram, w.beta2))


def reconstruction_loss(output: Tensor, ref: Tensor, w: LossWeights) -> Tensor:
    """beta1 * squared pixel error + beta2 * squared Gram error.

    Zero exactly when output == ref.
    """
    if output.shape != ref.shape:
        raise DimensionError(
            f"reconstruction_loss: shapes differ, {output.shape} vs {ref.shape}"
        )
    if output.ndim != 4:
        raise DimensionError(f"reconstruction_loss expects NCHW, got {output.shape}")
    pixel = _pixel_term(output, ref, w.reduction)
    gram = _gram_term(output, ref, w.reduction)
    return _combine_rec(pixel, gram, w)


def satl_loss(
    recon: Tensor, mu: Tensor, logvar: Tensor, batch: Tensor, w: LossWeights
) -> "tuple[Tensor, dict]":
    """Total adaptation loss alpha*KL + reconstruction, plus logged parts.

    Returns (total, {"kl", "pixel", "gram"} as plain floats).
    """
    if recon.shape != batch.shape:
        raise DimensionError(f"satl_loss: recon {recon.shape} vs batch {batch.shape}")
    kl = kl_divergence(mu, logvar, w.reduction)
    pixel = _pixel_term(recon, batch, w.reduction)
    gram = _gram_term(recon, batch, w.reduction)
    total = T.add(T.scale(kl, w.alpha), _combine_rec(pixel, gram, w))
    parts = {"kl": kl.item(), "pixel": pixel.item(), "gram": gram.item()}
    return total, parts
