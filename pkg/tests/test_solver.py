import math

import numpy as np
import pytest

from robust_netloc.cost import eval_convex
from robust_netloc.model import LossSpec, Measurements, Network, ProblemInstance
from robust_netloc.solver import (
    LineSearchError,
    SolverConfig,
    SolverError,
    backtracking_step,
    initialize,
    minimize,
)

from .conftest import random_instance


def single_sensor(anchors, ranges, family="huber", R=0.1):
    net = Network(2, 1, anchors, [], [(0, k) for k in range(len(anchors))])
    meas = Measurements({}, {(0, k): r for k, r in enumerate(ranges)})
    return ProblemInstance(net, meas, LossSpec(family, R))


def _oracle_cost(points, anchors, ranges, family, R):
    """Convexified cost of one sensor at many candidate points, straight from the formulas."""
    total = np.zeros(len(points))
    for a, r in zip(anchors, ranges):
        s = np.maximum(np.linalg.norm(points - np.asarray(a), axis=1) - r, 0.0)
        if family == "quadratic":
            total += s * s
        elif family == "absolute":
            total += s
        else:
            total += np.where(s <= R, s * s, 2 * R * s - R * R)
    return total


def grid_search(anchors, ranges, family="huber", R=0.1, lo=(0.0, 0.0), hi=(2.0, 2.0), cell=1e-4):
    """Exhaustive 200x200 grid search, refined around the best cell until ``cell``."""
    lo, hi = np.array(lo, float), np.array(hi, float)
    while True:
        xs = np.linspace(lo[0], hi[0], 201)
        ys = np.linspace(lo[1], hi[1], 201)
        pts = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
        cost = _oracle_cost(pts, anchors, ranges, family, R)
        k = int(np.argmin(cost))
        step = (hi - lo) / 200
        if step.max() <= cell:
            return pts[k], float(cost[k])
        lo, hi = pts[k] - 3 * step, pts[k] + 3 * step


TWO_ANCHORS = ([[0.0, 0.0], [2.0, 0.0]], [1.0, 1.0], (1.0, 0.0))
THREE_ANCHORS = ([[0.0, 0.0], [2.0, 0.0], [1.0, 2.0]], [math.sqrt(2), math.sqrt(2), 1.0], (1.0, 1.0))


def test_grid_oracle_finds_the_derived_points():
    for anchors, ranges, truth in (TWO_ANCHORS, THREE_ANCHORS):
        x, c = grid_search(anchors, ranges)
        assert np.allclose(x, truth, atol=1e-4)
        assert c <= 1e-8


def test_three_anchor_example():
    anchors, ranges, truth = THREE_ANCHORS
    res = minimize(single_sensor(anchors, ranges))
    assert res.converged
    assert res.final_cost <= 1e-12
    assert np.allclose(res.estimate, [truth], atol=1e-6)


def test_two_tangent_disks_end_on_the_tangent_line():
    # the two disks touch at (1, 0); the cost is quartic along the tangent so
    # only the cost matches the oracle tightly here (see acceptance criterion 7)
    anchors, ranges, _ = TWO_ANCHORS
    res = minimize(single_sensor(anchors, ranges))
    assert res.final_cost <= grid_search(anchors, ranges)[1] + 1e-6
    assert res.estimate[0, 0] == pytest.approx(1.0, abs=1e-6)


def test_empty_instance_returns_initialization():
    net = Network(2, 3, [[0.0, 0.0], [1.0, 1.0]], [], [])
    inst = ProblemInstance(net, Measurements())
    cfg = SolverConfig(seed=4)
    res = minimize(inst, config=cfg)
    assert res.converged and res.final_cost == 0 and res.iterations == 0
    assert np.array_equal(res.estimate, initialize(net, "centroid", 4))


def quad_anchor_instance():
    # f(x) = |x|^2 for a sensor ranged at 0 from an anchor at the origin
    return single_sensor([[0.0, 0.0]], [0.0], family="quadratic")


def test_backtracking_zero_direction():
    assert backtracking_step(quad_anchor_instance(), None, [0.0, 0.0], [0.0, 0.0]) == 0.0


def test_backtracking_armijo_chain():
    # alpha=1 overshoots to (-1, 0): f=1 > 1 - 0.1*1*4; alpha=0.5 reaches 0 <= 0.8
    alpha = backtracking_step(quad_anchor_instance(), None, [1.0, 0.0], [-2.0, 0.0], beta=0.5, c=0.1)
    assert alpha == 0.5


def test_backtracking_full_step_on_linear_branch():
    inst = single_sensor([[0.0, 0.0]], [0.0], family="huber", R=0.1)
    x = np.array([5.0, 0.0])
    g = eval_convex(inst, x).gradient
    assert g == pytest.approx([0.2, 0.0])
    assert backtracking_step(inst, None, x, -g, beta=0.5, c=0.1) == 1.0


def test_backtracking_underflow():
    inst = quad_anchor_instance()
    # an ascent direction can never satisfy Armijo
    with pytest.raises(LineSearchError):
        backtracking_step(inst, None, [1.0, 0.0], [2.0, 0.0])


def test_initialize_examples():
    net = Network(2, 3, [[0, 0], [1, 0], [0, 1], [1, 1]], [], [])
    assert np.array_equal(initialize(net, "centroid", 0, sigma=0.0), np.full((3, 2), 0.5))
    given = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(initialize(net, "given", positions=given), given)
    assert np.array_equal(initialize(net, "centroid", 11), initialize(net, "centroid", 11))
    box = initialize(net, "box", 3)
    assert np.all((box >= 0) & (box <= 1))
    with pytest.raises(ValueError):
        initialize(Network(2, 1, np.zeros((0, 2)), [], []), "centroid")


@pytest.mark.parametrize("family", ["quadratic", "huber"])
def test_descent_and_stationarity(family):
    rng = np.random.default_rng(20)
    for _ in range(10):
        inst = random_instance(rng, n=6, m=3, family=family)
        res = minimize(inst, config=SolverConfig(restarts=1))
        trace = np.array(res.cost_trace)
        assert np.all(np.diff(trace) <= 1e-12)
        if res.converged:
            assert res.gradient_norm <= 1e-7
        assert res.final_cost == eval_convex(inst, res.estimate).value


@pytest.mark.parametrize("family", ["quadratic", "huber"])
def test_multistart_costs_agree(family):
    rng = np.random.default_rng(21)
    for _ in range(10):
        inst = random_instance(rng, n=6, m=3, family=family)
        a = minimize(inst, config=SolverConfig(restarts=1, seed=1))
        b = minimize(inst, config=SolverConfig(restarts=1, init="box", seed=2))
        assert a.final_cost == pytest.approx(b.final_cost, rel=1e-8, abs=1e-12)


@pytest.mark.parametrize("family", ["quadratic", "absolute", "huber"])
def test_single_sensor_matches_grid_oracle(family):
    rng = np.random.default_rng(22)
    for _ in range(5):
        anchors = rng.uniform(0, 2, size=(4, 2))
        truth = rng.uniform(0.5, 1.5, size=2)
        # shrink ranges so that the zero-cost set is empty and the minimum is informative
        ranges = np.linalg.norm(anchors - truth, axis=1) * rng.uniform(0.6, 0.9, size=4)
        res = minimize(single_sensor(anchors, ranges, family))
        # a piecewise-linear cost is only pinned to O(cell) by the grid
        cell = 1e-7 if family == "absolute" else 1e-4
        _, c = grid_search(anchors, ranges, family, lo=(-1, -1), hi=(3, 3), cell=cell)
        assert res.final_cost == pytest.approx(c, abs=1e-6)


def test_determinism():
    rng = np.random.default_rng(23)
    inst = random_instance(rng, n=6)
    a = minimize(inst, config=SolverConfig(seed=5))
    b = minimize(inst, config=SolverConfig(seed=5))
    assert np.array_equal(a.estimate, b.estimate)
    assert a.cost_trace == b.cost_trace and a.iterations == b.iterations


@pytest.mark.parametrize("family", ["quadratic", "absolute", "huber"])
def test_compiled_and_python_backends_agree(family):
    rng = np.random.default_rng(24)
    for _ in range(3):
        inst = random_instance(rng, n=5, family=family)
        cfg = SolverConfig(max_iters=3000, seed=3)
        a = minimize(inst, config=cfg)
        b = minimize(inst, config=SolverConfig(max_iters=3000, seed=3, backend="python"))
        assert a.iterations == b.iterations
        assert a.converged == b.converged
        assert np.allclose(a.estimate, b.estimate, atol=1e-9)
        assert a.final_cost == pytest.approx(b.final_cost, rel=1e-9, abs=1e-14)


def test_absolute_needs_diminishing_rule():
    inst = single_sensor(*THREE_ANCHORS[:2], family="absolute")
    with pytest.raises(SolverError):
        minimize(inst, config=SolverConfig(step_rule="backtracking"))
    res = minimize(inst)
    assert res.final_cost <= 1e-6


@pytest.mark.parametrize(
    "kwargs",
    [
        {"max_iters": 0},
        {"grad_tol": 0.0},
        {"step_rule": "newton"},
        {"beta": 1.5},
        {"restarts": 0},
        {"init": "given"},
        {"backend": "gpu"},
    ],
)
def test_invalid_config(kwargs):
    with pytest.raises(SolverError):
        minimize(quad_anchor_instance(), config=SolverConfig(**kwargs))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@pytest.mark.parametrize("backend", ["compiled", "python"])
def test_nonfinite_cost_is_an_error(backend):
    inst = single_sensor([[0.0, 0.0]], [0.0], family="quadratic")
    cfg = SolverConfig(step_rule="fixed", step_size=1e3, max_iters=500, backend=backend)
    with pytest.raises(SolverError):
        minimize(inst, config=cfg)


def test_given_initialization_runs_once():
    inst = single_sensor(*THREE_ANCHORS[:2])
    start = np.array([[1.0, 1.0]])
    res = minimize(inst, config=SolverConfig(init="given", init_positions=start))
    assert res.iterations == 0 and res.restart == 0
