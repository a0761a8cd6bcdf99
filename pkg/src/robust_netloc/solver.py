"""First-order minimization of the convex underestimator.

Huber and quadratic convexified costs are continuously differentiable, so
they are minimized by gradient descent with Armijo backtracking. The
absolute-value cost is not, and uses the subgradient method with steps
``alpha0 / sqrt(k)``, keeping the best iterate seen.

Two backends run the same loops: ``"compiled"`` (numba, the default) and
``"python"`` (numpy, kept as a readable reference).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _compiled
from .cost import convex_objective, eval_convex
from .model import Network, ProblemInstance, canonical_family

STEP_RULES = ("auto", "backtracking", "fixed", "diminishing")
INIT_STRATEGIES = ("centroid", "box", "given")
BACKENDS = ("compiled", "python")

_WINDOW = 50
_EPS = np.finfo(float).eps


class SolverError(RuntimeError):
    """Raised on non-finite costs or an invalid configuration."""


class LineSearchError(SolverError):
    """Backtracking shrank the step below the underflow threshold."""


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings.

    ``step_rule="auto"`` picks backtracking for smooth families and the
    diminishing rule for the absolute family. ``step_size`` is the fixed step
    for ``"fixed"``, the initial step ``alpha0`` for ``"diminishing"`` and the
    maximal trial step for ``"backtracking"``.
    """

    max_iters: int = 50_000
    grad_tol: float = 1e-7
    step_rule: str = "auto"
    step_size: float | None = None
    beta: float = 0.5
    armijo_c: float = 1e-4
    init: str = "centroid"
    init_sigma: float = 0.1
    init_positions: np.ndarray | None = field(default=None, compare=False)
    restarts: int = 3
    seed: int = 0
    backend: str = "compiled"

    def check(self) -> None:
        if self.max_iters <= 0:
            raise SolverError("max_iters must be positive")
        if not self.grad_tol > 0:
            raise SolverError("grad_tol must be positive")
        if self.step_rule not in STEP_RULES:
            raise SolverError(f"unknown step rule {self.step_rule!r}")
        if self.step_size is not None and not self.step_size > 0:
            raise SolverError("step_size must be positive")
        if not (0 < self.beta < 1 and 0 < self.armijo_c < 1):
            raise SolverError("backtracking needs beta and c in (0, 1)")
        if self.init not in INIT_STRATEGIES:
            raise SolverError(f"unknown init strategy {self.init!r}")
        if self.init == "given" and self.init_positions is None:
            raise SolverError("init='given' needs init_positions")
        if self.init_sigma < 0:
            raise SolverError("init_sigma must be nonnegative")
        if self.restarts < 1:
            raise SolverError("restarts must be at least 1")
        if self.backend not in BACKENDS:
            raise SolverError(f"unknown backend {self.backend!r}")


@dataclass
class SolveResult:
    estimate: np.ndarray
    final_cost: float
    iterations: int
    converged: bool
    cost_trace: list[float]
    gradient_norm: float = math.nan
    restart: int = 0


def initialize(
    network: Network,
    strategy: str = "centroid",
    seed: int = 0,
    sigma: float = 0.1,
    positions=None,
) -> np.ndarray:
    """Starting positions for every sensor, deterministic given ``seed``."""
    n, p = network.n_sensors, network.dim
    if strategy == "given":
        x = np.array(positions, dtype=float)
        if x.shape != (n, p):
            raise ValueError(f"given positions have shape {x.shape}, expected {(n, p)}")
        return x
    rng = np.random.default_rng(seed)
    if network.n_anchors == 0:
        if strategy == "centroid":
            raise ValueError("centroid initialization needs at least one anchor")
        lo, hi = np.zeros(p), np.ones(p)
    else:
        lo, hi = network.anchors.min(axis=0), network.anchors.max(axis=0)
    if strategy == "centroid":
        centroid = network.anchors.mean(axis=0)
        return centroid + sigma * rng.standard_normal((n, p))
    if strategy == "box":
        return rng.uniform(lo, hi, size=(n, p))
    raise ValueError(f"unknown init strategy {strategy!r}")


def _armijo(fun, x, fx, direction, beta, c, alpha_max, slack=0.0, min_alpha=1e-16):
    d2 = float(direction @ direction)
    if d2 == 0.0:
        return 0.0, fx
    alpha = alpha_max
    while alpha >= min_alpha:
        ft = fun(x + alpha * direction, False).value
        if ft <= fx - c * alpha * d2 + slack:
            return alpha, ft
        alpha *= beta
    raise LineSearchError(f"step length underflow (alpha < {min_alpha:g})")


def backtracking_step(
    instance: ProblemInstance,
    family: str | None,
    x,
    direction,
    beta: float = 0.5,
    c: float = 1e-4,
    alpha_max: float = 1.0,
) -> float:
    """Largest ``alpha_max * beta**k`` satisfying the Armijo condition.

    ``direction`` should be the negative gradient at ``x``. A zero direction
    returns 0 without evaluating anything.
    """
    fun = convex_objective(instance, family)
    x = np.asarray(x, dtype=float).reshape(-1)
    direction = np.asarray(direction, dtype=float).reshape(-1)
    alpha, _ = _armijo(fun, x, fun(x, False).value, direction, beta, c, alpha_max)
    return alpha


def _check_finite(value: float) -> None:
    if not math.isfinite(value):
        raise SolverError("non-finite cost encountered; the step size is probably too large")


def _descend(fun, x, config: SolverConfig, rule: str) -> SolveResult:
    fx, g = fun(x)
    _check_finite(fx)
    trace = [fx]
    alpha_max = config.step_size or 1.0
    alpha = alpha_max
    converged = False
    it = 0
    gnorm = float(np.linalg.norm(g))
    while True:
        if gnorm <= config.grad_tol:
            converged = True
            break
        if it >= config.max_iters:
            break
        if rule == "fixed":
            x = x - alpha_max * g
        else:
            # start from twice the last accepted step; plain Armijo otherwise
            trial = min(alpha_max, alpha / config.beta)
            slack = 8.0 * _EPS * abs(fx)
            try:
                alpha, _ = _armijo(fun, x, fx, -g, config.beta, config.armijo_c, trial, slack)
            except LineSearchError:
                break
            x = x - alpha * g
        fx, g = fun(x)
        _check_finite(fx)
        trace.append(fx)
        gnorm = float(np.linalg.norm(g))
        it += 1
    return SolveResult(x, fx, it, converged, trace, gnorm)


def _subgradient(fun, x, config: SolverConfig) -> SolveResult:
    alpha0 = config.step_size or 0.05
    fx, g = fun(x)
    _check_finite(fx)
    trace = [fx]
    best_x, best_f = x, fx
    history = [x]
    converged = False
    it = 0
    while it < config.max_iters:
        if not np.any(g):
            # zero subgradient: every later iterate equals x
            converged = True
            break
        x = x - (alpha0 / math.sqrt(it + 1)) * g
        fx, g = fun(x)
        _check_finite(fx)
        trace.append(fx)
        it += 1
        if fx < best_f:
            best_x, best_f = x, fx
        history.append(x)
        if len(history) > _WINDOW:
            old = history.pop(0)
            if np.linalg.norm(x - old) <= config.grad_tol:
                converged = True
                break
    gnorm = float(np.linalg.norm(fun(best_x)[1]))
    return SolveResult(best_x, best_f, it, converged, trace, gnorm)


def _compiled_run(instance: ProblemInstance, family: str, x0, config: SolverConfig, rule: str):
    terms = instance.terms
    net = instance.network
    ti = np.zeros(terms.n_terms, dtype=np.int64)
    tj = np.full(terms.n_terms, -1, dtype=np.int64)
    for t, (i, j) in enumerate(net.edges):
        ti[t], tj[t] = i, j
    for t, (i, _) in enumerate(net.anchor_links, start=terms.n_edges):
        ti[t] = i
    args = (
        ti,
        tj,
        np.ascontiguousarray(terms.offsets),
        np.ascontiguousarray(terms.measured),
        np.ascontiguousarray(terms.radius),
        _compiled.FAMILY_CODES[family],
    )
    trace = np.empty(config.max_iters + 1)
    x0 = np.ascontiguousarray(x0.reshape(net.n_sensors, net.dim))
    if rule == "diminishing":
        x, fx, it, status = _compiled.subgradient(
            x0, *args, config.max_iters, config.grad_tol, config.step_size or 0.05, _WINDOW, trace
        )
        gnorm = float(np.linalg.norm(eval_convex(instance, x, family).gradient))
    else:
        x, fx, it, status, gnorm = _compiled.descend(
            x0,
            *args,
            config.max_iters,
            config.grad_tol,
            config.step_size or 1.0,
            config.beta,
            config.armijo_c,
            rule == "fixed",
            trace,
        )
    if status == _compiled.NON_FINITE:
        _check_finite(math.nan)
    return SolveResult(
        x.reshape(-1), float(fx), int(it), status == _compiled.CONVERGED, trace[: it + 1].tolist(), float(gnorm)
    )


def _better(candidate: float, incumbent: float) -> bool:
    # costs equal up to rounding count as ties, keeping the earlier restart
    return candidate < incumbent - (1e-12 + 1e-9 * abs(incumbent))


def minimize(
    instance: ProblemInstance, family: str | None = None, config: SolverConfig | None = None
) -> SolveResult:
    """Minimize the convex cost of ``instance`` for ``family``; best of all restarts.

    Restarts use seeds ``config.seed + r``. ``final_cost`` is re-evaluated with
    :func:`~robust_netloc.cost.eval_convex` at the returned estimate.
    """
    config = config or SolverConfig()
    config.check()
    family = canonical_family(family or instance.loss.family)
    rule = config.step_rule
    if rule == "auto":
        rule = "diminishing" if family == "absolute" else "backtracking"
    if family == "absolute" and rule != "diminishing":
        raise SolverError("the absolute family is nonsmooth and needs the diminishing step rule")
    if family == "huber" and np.any(~(instance.terms.radius > 0)):
        raise SolverError("Huber radii must be positive")
    fun = convex_objective(instance, family) if config.backend == "python" else None
    net = instance.network
    restarts = 1 if config.init == "given" else config.restarts
    best = None
    for r in range(restarts):
        x0 = initialize(
            net, config.init, config.seed + r, config.init_sigma, config.init_positions
        ).reshape(-1)
        if fun is None:
            res = _compiled_run(instance, family, x0, config, rule)
        elif rule == "diminishing":
            res = _subgradient(fun, x0, config)
        else:
            res = _descend(fun, x0, config, rule)
        res.restart = r
        res.estimate = res.estimate.reshape(net.n_sensors, net.dim)
        res.final_cost = eval_convex(instance, res.estimate, family, want_grad=False).value
        if best is None or _better(res.final_cost, best.final_cost):
            best = res
    return best
