import numpy as np
import pytest

from robust_netloc.model import LossSpec, Measurements, Network, ProblemInstance


def random_instance(rng, n=5, m=3, p=2, family="huber", radius=0.1, edge_prob=0.6, range_scale=1.0):
    """Random instance with exact-ish ranges perturbed by noise."""
    truth = rng.uniform(0, 1, size=(n, p))
    anchors = rng.uniform(0, 1, size=(m, p))
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < edge_prob]
    links = [(i, k) for i in range(n) for k in range(m) if rng.random() < edge_prob]
    net = Network(p, n, anchors, edges, links)
    d = {e: range_scale * abs(np.linalg.norm(truth[e[0]] - truth[e[1]]) + 0.1 * rng.standard_normal()) for e in net.edges}
    r = {a: range_scale * abs(np.linalg.norm(truth[a[0]] - anchors[a[1]]) + 0.1 * rng.standard_normal()) for a in net.anchor_links}
    return ProblemInstance(net, Measurements(d, r), LossSpec(family, radius))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from tests.acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
