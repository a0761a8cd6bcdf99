"""Cost assembly over a problem instance.

Two costs are provided:

* :func:`eval_nonconvex` sums the plain kernel of each residual. With the
  quadratic family and ``half=True`` (default) every term carries a factor
  1/2, which is the Gaussian maximum-likelihood cost; the other families have
  no factor. It is only a diagnostic, nothing here minimizes it.
* :func:`eval_convex` sums the hinge-composed kernels, the convex
  underestimator that the solver minimizes. No 1/2 factor.

Gradients are with respect to the stacked position vector (row-major
``(n, p)`` flattening). Where two points coincide the norm direction is
undefined; such terms contribute a zero gradient, which is a valid
subgradient choice.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .loss import convexified, loss
from .model import ProblemInstance, Terms, canonical_family, unstack


class CostEval(NamedTuple):
    value: float
    gradient: np.ndarray


@dataclass(frozen=True)
class Residuals:
    edge_residuals: dict[tuple[int, int], float]
    anchor_residuals: dict[tuple[int, int], float]


def _as_matrix(instance: ProblemInstance, positions) -> np.ndarray:
    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        return unstack(x, instance.n, instance.dim)
    if x.shape != (instance.n, instance.dim):
        raise ValueError(f"positions have shape {x.shape}, expected {(instance.n, instance.dim)}")
    return x


def _geometry(terms: Terms, x: np.ndarray):
    diff = terms.incidence @ x - terms.offsets
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return diff, dist


def residual_vector(instance: ProblemInstance, positions) -> np.ndarray:
    """Residuals as one array, edge terms first then anchor terms."""
    terms = instance.terms
    _, dist = _geometry(terms, _as_matrix(instance, positions))
    return dist - terms.measured


def residuals(instance: ProblemInstance, positions) -> Residuals:
    delta = residual_vector(instance, positions)
    net = instance.network
    ne = len(net.edges)
    return Residuals(
        {e: float(d) for e, d in zip(net.edges, delta[:ne])},
        {a: float(d) for a, d in zip(net.anchor_links, delta[ne:])},
    )


def _assemble(terms: Terms, x: np.ndarray, kernel, want_grad: bool = True) -> CostEval:
    diff, dist = _geometry(terms, x)
    value, deriv = kernel(dist - terms.measured)
    total = float(np.sum(value))
    if not want_grad:
        return CostEval(total, None)
    coef = np.divide(deriv, dist, out=np.zeros_like(dist), where=dist > 0)
    grad = terms.incidence.T @ (coef[:, None] * diff)
    return CostEval(total, grad.reshape(-1))


def _radius_for(instance: ProblemInstance, family: str):
    return instance.terms.radius if family == "huber" else None


def eval_nonconvex(
    instance: ProblemInstance, positions, family: str | None = None, half: bool = True
) -> CostEval:
    """Sum of plain kernels of the residuals (diagnostic only)."""
    family = canonical_family(family or instance.loss.family)
    terms = instance.terms
    R = _radius_for(instance, family)
    scale = 0.5 if (half and family == "quadratic") else 1.0

    def kernel(delta):
        v, d = loss(family, delta, R)
        return scale * v, scale * d

    return _assemble(terms, _as_matrix(instance, positions), kernel)


def eval_convex(
    instance: ProblemInstance, positions, family: str | None = None, want_grad: bool = True
) -> CostEval:
    """Convex underestimator: sum of ``h(max(0, residual))`` over all terms."""
    family = canonical_family(family or instance.loss.family)
    R = _radius_for(instance, family)
    return _assemble(
        instance.terms, _as_matrix(instance, positions), lambda d: convexified(family, d, R), want_grad
    )


def convex_objective(instance: ProblemInstance, family: str | None = None):
    """Return ``fun(x_stacked, want_grad) -> CostEval`` bound to the instance.

    Skips the per-call family/shape bookkeeping of :func:`eval_convex`; the
    solver calls this in its inner loop.
    """
    family = canonical_family(family or instance.loss.family)
    terms = instance.terms
    n, p = instance.n, instance.dim
    R = _radius_for(instance, family)
    if family == "huber":
        if np.any(~(R > 0)):
            raise ValueError("Huber radius must be positive")
        R2 = R * R

        def kernel(delta):
            s = np.maximum(delta, 0.0)
            inner = s <= R
            return np.where(inner, s * s, 2.0 * R * s - R2), np.where(inner, 2.0 * s, 2.0 * R)

    elif family == "quadratic":

        def kernel(delta):
            s = np.maximum(delta, 0.0)
            return s * s, 2.0 * s

    else:

        def kernel(delta):
            s = np.maximum(delta, 0.0)
            return s, (delta > 0).astype(float)

    def fun(x, want_grad=True):
        return _assemble(terms, x.reshape(n, p), kernel, want_grad)

    return fun


def gradient_check(
    instance: ProblemInstance,
    positions,
    family: str | None = None,
    step: float = 1e-6,
    convex: bool = True,
) -> float:
    """Max coordinate error between analytic and central-difference gradients.

    The error is relative to the larger infinity norm of the two gradients,
    and 0 when both vanish. ``positions`` should keep every residual and every
    pairwise distance at least ``10 * step`` away from the kernels' kinks; see
    :func:`sample_smooth_positions`.
    """
    x = _as_matrix(instance, positions).reshape(-1).copy()
    if convex:
        f = lambda v: eval_convex(instance, v, family).value  # noqa: E731
        g = eval_convex(instance, x, family).gradient
    else:
        f = lambda v: eval_nonconvex(instance, v, family).value  # noqa: E731
        g = eval_nonconvex(instance, x, family).gradient
    fd = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        fd[k] = (f(x + e) - f(x - e)) / (2.0 * step)
    scale = max(np.max(np.abs(g), initial=0.0), np.max(np.abs(fd), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(g - fd)) / scale)


def near_kink(instance: ProblemInstance, positions, margin: float, family: str | None = None) -> bool:
    """True if a residual or pairwise distance is within ``margin`` of a kink."""
    family = canonical_family(family or instance.loss.family)
    terms = instance.terms
    _, dist = _geometry(terms, _as_matrix(instance, positions))
    delta = dist - terms.measured
    if np.any(dist < margin) or np.any(np.abs(delta) < margin):
        return True
    if family == "huber":
        return bool(np.any(np.abs(np.abs(delta) - terms.radius) < margin))
    return False


def sample_smooth_positions(
    instance: ProblemInstance,
    rng: np.random.Generator,
    low: float = 0.0,
    high: float = 1.0,
    margin: float = 1e-5,
    family: str | None = None,
    max_tries: int = 1000,
) -> np.ndarray:
    """Draw uniform positions in a box, resampling until away from all kinks."""
    for _ in range(max_tries):
        x = rng.uniform(low, high, size=(instance.n, instance.dim))
        if not near_kink(instance, x, margin, family):
            return x
    raise RuntimeError("could not sample a point away from the kink set")
