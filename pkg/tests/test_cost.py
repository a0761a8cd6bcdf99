import math

import numpy as np
import pytest

from robust_netloc.cost import (
    eval_convex,
    eval_nonconvex,
    gradient_check,
    near_kink,
    residuals,
    sample_smooth_positions,
)
from robust_netloc.model import LossSpec, Measurements, Network, ProblemInstance

from .conftest import random_instance


def edge_instance(d, family="huber", R=1.0):
    net = Network(2, 2, [[9.0, 9.0]], [(0, 1)], [])
    return ProblemInstance(net, Measurements({(0, 1): d}, {}), LossSpec(family, R))


def anchor_instance(r, anchor=(1.0, 0.0), family="huber", R=0.5):
    net = Network(2, 1, [list(anchor)], [], [(0, 0)])
    return ProblemInstance(net, Measurements({}, {(0, 0): r}), LossSpec(family, R))


def test_residual_examples():
    res = residuals(edge_instance(4.0), [[0, 0], [3, 4]])
    assert res.edge_residuals == {(0, 1): 1.0}
    assert residuals(anchor_instance(1.0), [[0, 0]]).anchor_residuals == {(0, 0): 0.0}
    assert residuals(edge_instance(0.5), [[1, 1], [1, 1]]).edge_residuals == {(0, 1): -0.5}


def test_nonconvex_examples():
    assert eval_nonconvex(anchor_instance(1.0), [[0, 0]]).value == 0.0
    # quadratic carries the 1/2 maximum-likelihood factor
    assert eval_nonconvex(edge_instance(4.0, "quadratic"), [[0, 0], [3, 4]]).value == 0.5
    assert eval_nonconvex(edge_instance(4.0, "quadratic"), [[0, 0], [3, 4]], half=False).value == 1.0
    # delta = -2 on the linear branch of the Huber loss
    assert eval_nonconvex(edge_instance(7.0, "huber", 1.0), [[0, 0], [3, 4]]).value == 3.0


def test_convex_anchor_example():
    ev = eval_convex(anchor_instance(0.9), [[0.0, 0.0]])
    assert ev.value == pytest.approx(0.01, abs=1e-15)
    assert ev.gradient == pytest.approx([-0.2, 0.0], abs=1e-15)


def _edge_term_oracle(xi, xj=(3.0, 4.0), d=4.0, R=1.0):
    t = max(0.0, math.dist(xi, xj) - d)
    return t * t if t <= R else 2 * R * t - R * R


def test_convex_edge_example_against_finite_differences():
    ev = eval_convex(edge_instance(4.0), [[0.0, 0.0], [3.0, 4.0]])
    assert ev.value == pytest.approx(1.0, abs=1e-15)
    h = 1e-6
    fd = [
        (_edge_term_oracle((h, 0.0)) - _edge_term_oracle((-h, 0.0))) / (2 * h),
        (_edge_term_oracle((0.0, h)) - _edge_term_oracle((0.0, -h))) / (2 * h),
    ]
    assert fd == pytest.approx([-1.2, -1.6], abs=1e-6)
    assert ev.gradient[:2] == pytest.approx(fd, abs=1e-6)
    assert ev.gradient[:2] == pytest.approx([-1.2, -1.6], abs=1e-14)
    # opposite contribution on x_j
    assert ev.gradient[2:] == pytest.approx([1.2, 1.6], abs=1e-14)


@pytest.mark.parametrize("family", ["quadratic", "absolute", "huber"])
def test_flat_region_gives_zero(family):
    inst = anchor_instance(2.0, family=family)
    ev = eval_convex(inst, [[0.5, 0.5]])
    assert ev.value == 0.0 and not np.any(ev.gradient)
    assert gradient_check(inst, [[0.5, 0.5]], family) == 0.0


def test_coincident_points_have_zero_gradient():
    for d in (0.0, 0.3):
        inst = edge_instance(d, "quadratic")
        for f in (eval_convex, eval_nonconvex):
            ev = f(inst, [[0.2, 0.2], [0.2, 0.2]])
            assert np.all(np.isfinite(ev.gradient)) and not np.any(ev.gradient)


def test_family_defaults_to_instance_loss():
    inst = anchor_instance(0.0, anchor=(3.0, 4.0), family="absolute")
    assert eval_convex(inst, [[0.0, 0.0]]).value == 5.0
    assert eval_convex(inst, [[0.0, 0.0]], "quadratic").value == 25.0


@pytest.mark.parametrize("family", ["quadratic", "absolute", "huber"])
def test_underestimation_and_tightness(family):
    rng = np.random.default_rng(3)
    for k in range(10):
        inst = random_instance(rng, family=family, radius=0.2, range_scale=rng.choice([0.3, 1.0]))
        for _ in range(100):
            x = rng.uniform(-0.5, 1.5, size=(inst.n, 2))
            f = eval_convex(inst, x).value
            g = eval_nonconvex(inst, x, half=False).value
            assert f <= g
            res = residuals(inst, x)
            if min([*res.edge_residuals.values(), *res.anchor_residuals.values()], default=0) >= 0:
                assert f == g


@pytest.mark.parametrize("family", ["quadratic", "absolute", "huber"])
def test_convexity_midpoint(family):
    rng = np.random.default_rng(4)
    inst = random_instance(rng, n=6, family=family)
    for _ in range(500):
        x, y = rng.uniform(-1, 2, size=(2, inst.n, 2))
        mid = eval_convex(inst, 0.5 * (x + y)).value
        assert mid <= 0.5 * (eval_convex(inst, x).value + eval_convex(inst, y).value) + 1e-12


def test_decomposability():
    rng = np.random.default_rng(5)
    a = random_instance(rng, n=3, m=2)
    b = random_instance(rng, n=4, m=2)
    n_a, m_a = a.n, a.network.n_anchors
    net = Network(
        2,
        a.n + b.n,
        np.vstack([a.network.anchors, b.network.anchors]),
        list(a.network.edges) + [(i + n_a, j + n_a) for i, j in b.network.edges],
        list(a.network.anchor_links) + [(i + n_a, k + m_a) for i, k in b.network.anchor_links],
    )
    meas = Measurements(
        {**a.measurements.ranges, **{(i + n_a, j + n_a): v for (i, j), v in b.measurements.ranges.items()}},
        {
            **a.measurements.anchor_ranges,
            **{(i + n_a, k + m_a): v for (i, k), v in b.measurements.anchor_ranges.items()},
        },
    )
    union = ProblemInstance(net, meas, a.loss)
    for _ in range(50):
        xa, xb = rng.uniform(0, 1, (a.n, 2)), rng.uniform(0, 1, (b.n, 2))
        whole = eval_convex(union, np.vstack([xa, xb]))
        parts = eval_convex(a, xa).value + eval_convex(b, xb).value
        assert whole.value == pytest.approx(parts, rel=1e-13, abs=1e-15)
        assert np.allclose(whole.gradient, np.concatenate([eval_convex(a, xa).gradient, eval_convex(b, xb).gradient]))


@pytest.mark.parametrize("family", ["quadratic", "absolute", "huber"])
def test_translation_invariance_without_anchor_links(family):
    rng = np.random.default_rng(6)
    inst = random_instance(rng, n=6, family=family, edge_prob=0.7)
    inst = ProblemInstance(
        Network(2, inst.n, inst.network.anchors, inst.network.edges, []),
        Measurements(inst.measurements.ranges, {}),
        inst.loss,
    )
    for _ in range(50):
        x = rng.uniform(0, 1, (inst.n, 2))
        c = rng.uniform(-5, 5, 2)
        assert eval_convex(inst, x + c).value == pytest.approx(eval_convex(inst, x).value, rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("family", ["quadratic", "huber"])
def test_gradient_check_random_instances(family):
    rng = np.random.default_rng(8)
    for _ in range(30):
        inst = random_instance(rng, family=family, radius=0.15, range_scale=0.5)
        x = sample_smooth_positions(inst, rng, margin=1e-5)
        assert gradient_check(inst, x, family, 1e-6) <= 1e-6
        assert gradient_check(inst, x, family, 1e-6, convex=False) <= 1e-6


def test_absolute_subgradient_is_a_descent_direction():
    rng = np.random.default_rng(9)
    for _ in range(50):
        inst = random_instance(rng, family="absolute", range_scale=0.5)
        x = sample_smooth_positions(inst, rng, margin=1e-4)
        f0, g = eval_convex(inst, x)
        for tau in (1e-4, 1e-6):
            # at smooth points f(x - tau g) = f(x) - tau |g|^2 + O(tau^2)
            f1 = eval_convex(inst, x.reshape(-1) - tau * g).value
            assert f1 <= f0 - 0.5 * tau * (g @ g) + 1e-12


def test_sample_smooth_positions_avoids_kinks():
    rng = np.random.default_rng(10)
    inst = random_instance(rng, family="huber")
    x = sample_smooth_positions(inst, rng, margin=1e-3)
    assert not near_kink(inst, x, 1e-3)


def test_positions_shape_checked():
    with pytest.raises(ValueError):
        eval_convex(anchor_instance(1.0), np.zeros((2, 2)))
