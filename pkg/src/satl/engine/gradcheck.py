"""Finite-difference verification of every differentiable operation.

`grad_check` compares the engine's reverse-mode gradients against central
differences in float64. `run_checks` drives a registry of randomized check
cases (one entry per registered op, plus loss- and model-level composites)
that both the test suite and the `satl gradcheck` command execute.
"""

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError
from . import tensor as T
from .prng import Prng

DEFAULT_H = 1e-4
DEFAULT_TOL = 1e-4
_REL_FLOOR = 1e-2  # |grad| below this is compared near-absolutely


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    passed: bool
    n_elements: int
    per_input_error: list = field(default_factory=list)  # ndarray per input


def grad_check(
    f: Callable[[list], T.Tensor],
    points: "T.Tensor | Sequence[T.Tensor]",
    h: float = DEFAULT_H,
    tol: float = DEFAULT_TOL,
    name: str = "f",
) -> GradCheckReport:
    """Check analytic gradients of a scalar function at the given point(s).

    `f` must be smooth in an h-neighborhood of the point (keep relu/maxpool
    inputs away from their kinks). Points should be float64 for the stated
    1e-4 tolerance to be meaningful.
    """
    if isinstance(points, T.Tensor):
        points = [points]
    points = list(points)
    for p in points:
        if not p.requires_grad:
            raise ContractError("grad_check points must require gradients")
        p.zero_grad()

    loss = f(points)
    T.backward(loss)
    analytic = [p.grad.copy() for p in points]

    errors = []
    max_rel = 0.0
    total = 0
    with T.no_grad():
        for p, a in zip(points, analytic):
            flat = p.data.reshape(-1)
            num = np.zeros_like(flat)
            for i in range(flat.shape[0]):
                orig = flat[i]
                flat[i] = orig + h
                fp = f(points).item()
                flat[i] = orig - h
                fm = f(points).item()
                flat[i] = orig
                num[i] = (fp - fm) / (2.0 * h)
            an = a.reshape(-1)
            denom = np.maximum(np.maximum(np.abs(an), np.abs(num)), _REL_FLOOR)
            rel = np.abs(an - num) / denom
            errors.append(rel.reshape(p.data.shape))
            max_rel = max(max_rel, float(rel.max()) if rel.size else 0.0)
            total += flat.shape[0]

    return GradCheckReport(
        name=name,
        max_rel_error=max_rel,
        passed=max_rel <= tol,
        n_elements=total,
        per_input_error=errors,
    )


# ---------------------------------------------------------------------------
# check registry


def _leaf(rng: Prng, shape, lo=-1.5, hi=1.5) -> T.Tensor:
    data = lo + (hi - lo) * rng.uniform(shape)
    return T.Tensor(data, requires_grad=True, dtype=np.float64)


def _away_from(x: np.ndarray, point: float, margin: float) -> np.ndarray:
    """Push values out of a +/- margin band around a kink."""
    near = np.abs(x - point) < margin
    return np.where(near, x + 2 * margin, x)


def _weight(rng: Prng, shape) -> T.Tensor:
    return T.Tensor(rng.normal(shape), requires_grad=False, dtype=np.float64)


def _wsum(t: T.Tensor, w: T.Tensor) -> T.Tensor:
    return T.reduce_sum(T.mul(t, w))


def _ops_cases(rng: Prng) -> "list[tuple[str, Callable, list]]":
    """(name, f, points) triplets covering every differentiable engine op."""
    cases = []

    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    w = _weight(rng, (3, 4))
    cases.append(("add", lambda pts, w=w: _wsum(T.add(pts[0], pts[1]), w), [a, b]))

    a, b = _leaf(rng, (2, 3, 2)), _leaf(rng, (2, 3, 2))
    w = _weight(rng, (2, 3, 2))
    cases.append(("sub", lambda pts, w=w: _wsum(T.sub(pts[0], pts[1]), w), [a, b]))

    a, b = _leaf(rng, (4, 3)), _leaf(rng, (4, 3))
    w = _weight(rng, (4, 3))
    cases.append(("mul", lambda pts, w=w: _wsum(T.mul(pts[0], pts[1]), w), [a, b]))

    x, w = _leaf(rng, (5,)), _weight(rng, (5,))
    cases.append(("scale", lambda pts, w=w: _wsum(T.scale(pts[0], -0.7), w), [x]))

    x, w = _leaf(rng, (5,)), _weight(rng, (5,))
    cases.append(("add_scalar", lambda pts, w=w: _wsum(T.add_scalar(pts[0], 2.5), w), [x]))

    x = _leaf(rng, (4, 4))
    x.data[:] = _away_from(x.data, 0.0, 0.05)
    w = _weight(rng, (4, 4))
    cases.append(("relu", lambda pts, w=w: _wsum(T.relu(pts[0]), w), [x]))

    x, w = _leaf(rng, (3, 3)), _weight(rng, (3, 3))
    cases.append(("sigmoid", lambda pts, w=w: _wsum(T.sigmoid(pts[0]), w), [x]))

    x, w = _leaf(rng, (3, 3)), _weight(rng, (3, 3))
    cases.append(("exp", lambda pts, w=w: _wsum(T.exp(pts[0]), w), [x]))

    x = T.Tensor(0.5 + rng.uniform((3, 3)), requires_grad=True, dtype=np.float64)
    w = _weight(rng, (3, 3))
    cases.append(("log", lambda pts, w=w: _wsum(T.log(pts[0]), w), [x]))

    x, w = _leaf(rng, (3, 3)), _weight(rng, (3, 3))
    cases.append(("square", lambda pts, w=w: _wsum(T.square(pts[0]), w), [x]))

    x = _leaf(rng, (4, 4), lo=-2.0, hi=2.0)
    x.data[:] = _away_from(_away_from(x.data, -0.8, 0.05), 0.8, 0.05)
    w = _weight(rng, (4, 4))
    cases.append(("clip", lambda pts, w=w: _wsum(T.clip(pts[0], -0.8, 0.8), w), [x]))

    x, w = _leaf(rng, (2, 3, 4)), _weight(rng, (2, 4))
    cases.append(("reduce_sum", lambda pts, w=w: _wsum(T.reduce_sum(pts[0], axes=(1,)), w), [x]))

    x, w = _leaf(rng, (2, 3, 4)), _weight(rng, (3,))
    cases.append(
        ("reduce_mean", lambda pts, w=w: _wsum(T.reduce_mean(pts[0], axes=(0, 2)), w), [x])
    )

    x, w = _leaf(rng, (2, 6)), _weight(rng, (3, 4))
    cases.append(("reshape", lambda pts, w=w: _wsum(T.reshape(pts[0], (3, 4)), w), [x]))

    x, w = _leaf(rng, (2, 5)), _weight(rng, (5, 2))
    cases.append(("transpose", lambda pts, w=w: _wsum(T.transpose(pts[0]), w), [x]))

    x, w = _leaf(rng, (3, 2, 2)), _weight(rng, (2, 2))
    cases.append(("slice0", lambda pts, w=w: _wsum(T.slice0(pts[0], 1), w), [x]))

    a, b = _leaf(rng, (3, 4)), _leaf(rng, (4, 2))
    w = _weight(rng, (3, 2))
    cases.append(("matmul", lambda pts, w=w: _wsum(T.matmul(pts[0], pts[1]), w), [a, b]))

    x, dw, db = _leaf(rng, (3, 4)), _leaf(rng, (4, 2)), _leaf(rng, (2,))
    w = _weight(rng, (3, 2))
    cases.append(
        ("dense", lambda pts, w=w: _wsum(T.dense(pts[0], pts[1], pts[2]), w), [x, dw, db])
    )

    x, kw, kb = _leaf(rng, (2, 3, 6, 6)), _leaf(rng, (4, 3, 3, 3)), _leaf(rng, (4,))
    w = _weight(rng, (2, 4, 6, 6))
    w2 = _weight(rng, (2, 4, 3, 3))
    cases.append(
        (
            "conv2d",
            lambda pts, w=w, w2=w2: T.add(
                _wsum(T.conv2d(pts[0], pts[1], pts[2], stride=1, padding=1), w),
                _wsum(T.conv2d(pts[0], pts[1], pts[2], stride=2, padding=1), w2),
            ),
            [x, kw, kb],
        )
    )

    # distinct values per 2x2 window so the max is stable under +/- h
    x = _leaf(rng, (2, 2, 4, 4))
    x.data[:] += np.arange(x.data.size).reshape(x.data.shape) * 0.37
    w = _weight(rng, (2, 2, 2, 2))
    cases.append(("maxpool2", lambda pts, w=w: _wsum(T.maxpool2(pts[0]), w), [x]))

    x, w = _leaf(rng, (2, 3, 3, 3)), _weight(rng, (2, 3, 6, 6))
    cases.append(("upsample2", lambda pts, w=w: _wsum(T.upsample2(pts[0]), w), [x]))

    return cases


def _loss_cases(rng: Prng) -> "list[tuple[str, Callable, list]]":
    from .. import losses

    cases = []
    weights = losses.LossWeights()

    logits = _leaf(rng, (4, 2), lo=-2.0, hi=2.0)
    labels = [rng.randbelow(2) for _ in range(4)]
    cases.append(
        ("cross_entropy", lambda pts, labels=labels: losses.cross_entropy(pts[0], labels), [logits])
    )

    mu, logvar = _leaf(rng, (2, 3, 2, 2)), _leaf(rng, (2, 3, 2, 2))
    cases.append(
        (
            "kl_divergence",
            lambda pts: losses.kl_divergence(pts[0], pts[1], reduction="mean"),
            [mu, logvar],
        )
    )

    b = _leaf(rng, (3, 3, 3))
    w = _weight(rng, (3, 3))
    cases.append(("gram_matrix", lambda pts, w=w: _wsum(losses.gram_matrix(pts[0]), w), [b]))

    out = _leaf(rng, (2, 3, 4, 4), lo=0.1, hi=0.9)
    ref = T.Tensor(rng.uniform((2, 3, 4, 4)), dtype=np.float64)
    cases.append(
        (
            "reconstruction_loss",
            lambda pts, ref=ref: losses.reconstruction_loss(pts[0], ref, weights),
            [out],
        )
    )

    recon = _leaf(rng, (2, 3, 4, 4), lo=0.1, hi=0.9)
    mu2, logvar2 = _leaf(rng, (2, 4, 2, 2)), _leaf(rng, (2, 4, 2, 2))
    batch = T.Tensor(rng.uniform((2, 3, 4, 4)), dtype=np.float64)
    cases.append(
        (
            "satl_loss",
            lambda pts, batch=batch: losses.satl_loss(pts[0], pts[1], pts[2], batch, weights)[0],
            [recon, mu2, logvar2],
        )
    )

    return cases


def _model_cases(rng: Prng) -> "list[tuple[str, Callable, list]]":
    from .. import losses, models

    cases = []
    cfg = models.EncoderConfig(input_shape=(3, 8, 8), stages=((1, 4),))

    clf = models.build_classifier(cfg, rng.split(1), dtype=np.float64)
    names = sorted(clf.params)
    points = [clf.params[k] for k in names]
    batch = T.Tensor(rng.uniform((2, 3, 8, 8)), dtype=np.float64)
    labels = [0, 1]

    def classifier_ce(pts):
        return losses.cross_entropy(clf.forward(batch), labels)

    cases.append(("classifier_ce", classifier_ce, points))

    vae = models.build_vae_from_encoder(clf, rng.split(2), latent_channels=3)
    vnames = sorted(vae.params)
    vpoints = [vae.params[k] for k in vnames]
    eps = rng.normal((2, 3, 4, 4))
    weights = losses.LossWeights()

    def vae_satl(pts):
        recon, mu, logvar, _ = vae.forward(batch, mode="train", eps=eps)
        return losses.satl_loss(recon, mu, logvar, batch, weights)[0]

    cases.append(("vae_satl", vae_satl, vpoints))

    return cases


_SCOPES = {
    "ops": _ops_cases,
    "losses": _loss_cases,
    "model": _model_cases,
}


def scope_names() -> list:
    return sorted(_SCOPES)


def run_checks(
    scope: str,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    h: float = DEFAULT_H,
    n_seeds: int = 10,
) -> list:
    """Run every registered check in a scope over `n_seeds` random draws.

    Returns one GradCheckReport per registered check (worst seed's error).
    """
    if scope not in _SCOPES:
        raise ContractError(f"unknown gradcheck scope {scope!r}; choose from {scope_names()}")
    builder = _SCOPES[scope]
    root = Prng(seed)

    worst: dict[str, GradCheckReport] = {}
    order: list[str] = []
    for s in range(n_seeds):
        for name, f, points in builder(root.split(1000 + s)):
            rep = grad_check(f, points, h=h, tol=tol, name=name)
            if name not in worst:
                order.append(name)
                worst[name] = rep
            elif rep.max_rel_error > worst[name].max_rel_error:
                worst[name] = rep
    return [worst[n] for n in order]
