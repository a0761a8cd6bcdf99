"""Experiment networks, noise sampling and the Monte Carlo harness.

Random streams are derived from ``numpy.random.SeedSequence`` entropy
tuples, so every trial owns an independent generator determined only by
``(master_seed, trial_index)``. Reports therefore do not depend on the
order in which trials run or on how many worker processes run them.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .model import (
    LossSpec,
    Measurements,
    Network,
    ProblemInstance,
    degree_stats,
    loss_to_dict,
    network_from_dict,
    network_to_dict,
    truth_from_dict,
)
from .solver import SolveResult, SolverConfig, minimize

log = logging.getLogger(__name__)

THREADS_ENV = "ROBUST_NETLOC_THREADS"
DEFAULT_R_GRID = (0.02, 0.05, 0.1, 0.2, 0.4, 0.8)
KM_TO_M = 1000.0


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Range noise.

    ``outlier_node`` is a 0-based sensor index (6 is the seventh sensor).
    In bias mode, measurements involving the outlier node are set to
    ``bias_factor`` times the true distance, with no Gaussian term; anchor
    links of that node are biased too unless ``bias_anchor_links`` is off.
    """

    sigma_regular: float = 0.04
    outlier_node: int | None = 6
    sigma_outlier: float = 4.0
    bias_mode: bool = False
    bias_factor: float = 0.1
    bias_anchor_links: bool = True

    def __post_init__(self):
        if self.sigma_regular < 0 or self.sigma_outlier < 0:
            raise ValueError("noise standard deviations must be nonnegative")
        if self.bias_mode and not self.bias_factor > 0:
            raise ValueError("bias_factor must be positive")


# -- network generation --------------------------------------------------------


def box_corners(side: float, dim: int) -> np.ndarray:
    return side * np.array(list(itertools.product((0.0, 1.0), repeat=dim)))


def _combined_degree_curve(dist_ss: np.ndarray, dist_sa: np.ndarray, n: int):
    """Candidate radii and the average combined degree each one yields."""
    iu = np.triu_indices(n, k=1)
    pair = dist_ss[iu]
    radii = np.unique(np.concatenate([pair, dist_sa.ravel()]))
    edges = np.searchsorted(np.sort(pair), radii, side="right")
    links = np.searchsorted(np.sort(dist_sa.ravel()), radii, side="right")
    return radii, (2 * edges + links) / n


def _is_connected(n: int, edges) -> bool:
    if n <= 1:
        return True
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        for v in adj[stack.pop()]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == n


def passes_screen(network: Network) -> bool:
    """Localizability screen used by the generator.

    Sensor graph connected, at least one anchor link (so every sensor has a
    path to an anchored sensor), and every sensor with at least ``dim + 1``
    neighbors plus anchors.
    """
    if not network.anchor_links or not _is_connected(network.n_sensors, network.edges):
        return False
    return bool(np.all(degree_stats(network).combined_degrees >= network.dim + 1))


def generate_network(
    n_sensors: int = 10,
    side: float = 1.0,
    n_anchors: int = 4,
    target_degree: float = 4.3,
    dim: int = 2,
    seed: int = 0,
    tolerance: float = 0.3,
    max_attempts: int = 100,
) -> tuple[Network, np.ndarray]:
    """Random geometric network with anchors at the corners of a box.

    Sensors are uniform in ``[0, side]^dim``. Sensor pairs and sensor-anchor
    pairs within a common radius are linked; the radius is the one whose
    average combined degree (sensor neighbors plus anchor links) is closest
    to ``target_degree``. Draws are repeated until the degree lands within
    ``tolerance`` and the network passes :func:`passes_screen`.
    """
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if n_sensors < 1:
        raise ValueError("need at least one sensor")
    corners = box_corners(side, dim)
    if not 1 <= n_anchors <= len(corners):
        raise ValueError(f"n_anchors must be between 1 and {len(corners)} for dim={dim}")
    anchors = corners[:n_anchors]
    for attempt in range(max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        truth = rng.uniform(0.0, side, size=(n_sensors, dim))
        dist_ss = np.linalg.norm(truth[:, None, :] - truth[None, :, :], axis=-1)
        dist_sa = np.linalg.norm(truth[:, None, :] - anchors[None, :, :], axis=-1)
        radii, degree = _combined_degree_curve(dist_ss, dist_sa, n_sensors)
        best = int(np.argmin(np.abs(degree - target_degree)))
        if abs(degree[best] - target_degree) > tolerance + 1e-12:
            continue
        rho = radii[best]
        edges = [
            (i, j) for i in range(n_sensors) for j in range(i + 1, n_sensors) if dist_ss[i, j] <= rho
        ]
        links = [(i, k) for i in range(n_sensors) for k in range(n_anchors) if dist_sa[i, k] <= rho]
        network = Network(dim, n_sensors, anchors, edges, links)
        if passes_screen(network):
            log.debug("network accepted at attempt %d, radius %.4f", attempt, rho)
            return network, truth
    raise GenerationError(
        f"no network passed the screen in {max_attempts} attempts; parameters may be infeasible"
    )


CANONICAL_SEED = 0


def load_canonical() -> tuple[Network, np.ndarray]:
    """The bundled experiment network: ``generate_network(seed=0)`` with defaults."""
    doc = json.loads(resources.files(__package__).joinpath("data/canonical_network.json").read_text())
    return network_from_dict(doc), np.array(truth_from_dict(doc))


# -- measurements --------------------------------------------------------------


def sample_measurements(
    network: Network, truth, noise: NoiseModel, rng: np.random.Generator
) -> Measurements:
    """Noisy ranges ``|true distance + nu|`` for every edge and anchor link."""
    truth = np.asarray(truth, dtype=float)
    edges, links = network.edges, network.anchor_links
    true_d = np.array([np.linalg.norm(truth[i] - truth[j]) for i, j in edges])
    true_r = np.array([np.linalg.norm(truth[i] - network.anchors[k]) for i, k in links])
    nu = rng.standard_normal(len(edges) + len(links))
    bad = noise.outlier_node
    hit_e = np.array([bad is not None and bad in e for e in edges], dtype=bool)
    hit_a = np.array([bad is not None and i == bad for i, _ in links], dtype=bool)
    sig_e = np.where(hit_e, noise.sigma_outlier, noise.sigma_regular)
    sig_a = np.where(hit_a, noise.sigma_outlier, noise.sigma_regular)
    if noise.bias_mode:
        sig_e = np.full(len(edges), noise.sigma_regular)
        sig_a = np.full(len(links), noise.sigma_regular)
    d = np.abs(true_d + sig_e * nu[: len(edges)])
    r = np.abs(true_r + sig_a * nu[len(edges) :])
    if noise.bias_mode:
        d = np.where(hit_e, noise.bias_factor * true_d, d)
        if noise.bias_anchor_links:
            r = np.where(hit_a, noise.bias_factor * true_r, r)
    return Measurements(dict(zip(edges, d.tolist())), dict(zip(links, r.tolist())))


# -- metrics -------------------------------------------------------------------


def positioning_error(estimates, truth) -> tuple[float, float]:
    """Average stacked-norm error over trials and its per-sensor share, in meters."""
    truth = np.asarray(truth, dtype=float)
    estimates = [np.asarray(e, dtype=float) for e in estimates]
    if not estimates:
        raise ValueError("need at least one estimate")
    for e in estimates:
        if e.shape != truth.shape:
            raise ValueError(f"estimate shape {e.shape} does not match truth {truth.shape}")
    eps = float(np.mean([np.linalg.norm(e - truth) for e in estimates])) * KM_TO_M
    return eps, eps / truth.shape[0]


# -- trials --------------------------------------------------------------------


@dataclass
class TrialOutcome:
    loss: LossSpec
    result: SolveResult
    error_km: float
    sensor_errors_km: np.ndarray


def _trial_streams(trial_seed):
    ss = np.random.SeedSequence(trial_seed)
    meas_ss, init_ss = ss.spawn(2)
    return np.random.default_rng(meas_ss), int(init_ss.generate_state(1)[0])


def run_trial(
    network: Network,
    truth,
    noise: NoiseModel,
    losses,
    solver_config: SolverConfig | None = None,
    trial_seed=0,
    measurements: Measurements | None = None,
) -> dict[str, TrialOutcome]:
    """Sample one measurement set and solve it once per loss spec.

    Every loss sees the same measurements and the same initialization seed.
    Results are keyed by :attr:`LossSpec.label`.
    """
    truth = np.asarray(truth, dtype=float)
    solver_config = solver_config or SolverConfig()
    rng, init_seed = _trial_streams(trial_seed)
    if measurements is None:
        measurements = sample_measurements(network, truth, noise, rng)
    config = replace(solver_config, seed=init_seed)
    out = {}
    for spec in losses:
        instance = ProblemInstance(network, measurements, spec)
        res = minimize(instance, spec.family, config)
        per_sensor = np.linalg.norm(res.estimate - truth, axis=1)
        out[spec.label] = TrialOutcome(spec, res, float(np.linalg.norm(res.estimate - truth)), per_sensor)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    network: Network
    truth: np.ndarray = field(compare=False)
    noise: NoiseModel = field(default_factory=NoiseModel)
    losses: tuple[LossSpec, ...] = (
        LossSpec("quadratic"),
        LossSpec("absolute"),
        LossSpec("huber", 0.1),
    )
    solver: SolverConfig = field(default_factory=SolverConfig)
    trials: int = 100
    master_seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")


@dataclass
class FamilyReport:
    loss: LossSpec
    trial_errors_km: list[float]
    sensor_mean_errors_km: list[float]
    converged: int
    outlier_node: int | None

    @property
    def epsilon_km(self) -> float:
        return float(np.mean(self.trial_errors_km))

    @property
    def epsilon_per_sensor_km(self) -> float:
        return self.epsilon_km / len(self.sensor_mean_errors_km)

    @property
    def epsilon_per_sensor_m(self) -> float:
        return self.epsilon_per_sensor_km * KM_TO_M

    @property
    def rest_mean_error_km(self) -> float:
        """Mean per-sensor error over the sensors other than the outlier node."""
        errs = [e for i, e in enumerate(self.sensor_mean_errors_km) if i != self.outlier_node]
        return float(np.mean(errs))

    def to_dict(self) -> dict:
        doc = {
            "family": self.loss.family,
            "label": self.loss.label,
            "loss": loss_to_dict(self.loss),
            "epsilon_km": self.epsilon_km,
            "epsilon_per_sensor_km": self.epsilon_per_sensor_km,
            "trial_errors_km": self.trial_errors_km,
            "sensor_mean_errors_km": self.sensor_mean_errors_km,
            "converged_trials": self.converged,
            "unit": "km",
        }
        if self.outlier_node is not None:
            doc["outlier_node_mean_error_km"] = self.sensor_mean_errors_km[self.outlier_node]
            doc["other_sensors_mean_error_km"] = self.rest_mean_error_km
        return doc


@dataclass
class MonteCarloReport:
    config: ExperimentConfig
    families: dict[str, FamilyReport]
    trial_seeds: list[list[int]]

    def __getitem__(self, label: str) -> FamilyReport:
        return self.families[label]

    def by_family(self, family: str) -> FamilyReport:
        matches = [f for f in self.families.values() if f.loss.family == family]
        if len(matches) != 1:
            raise KeyError(f"{len(matches)} reports for family {family!r}")
        return matches[0]

    def to_dict(self) -> dict:
        cfg = self.config
        noise = cfg.noise
        solver = cfg.solver
        return {
            "unit": "km",
            "trials": cfg.trials,
            "master_seed": cfg.master_seed,
            "trial_seeds": self.trial_seeds,
            "network": network_to_dict(cfg.network),
            "truth": np.asarray(cfg.truth).tolist(),
            "noise": {
                "sigma_regular": noise.sigma_regular,
                "outlier_node": noise.outlier_node,
                "sigma_outlier": noise.sigma_outlier,
                "bias_mode": noise.bias_mode,
                "bias_factor": noise.bias_factor,
                "bias_anchor_links": noise.bias_anchor_links,
            },
            "solver": {
                "max_iters": solver.max_iters,
                "grad_tol": solver.grad_tol,
                "step_rule": solver.step_rule,
                "step_size": solver.step_size,
                "beta": solver.beta,
                "armijo_c": solver.armijo_c,
                "init": solver.init,
                "init_sigma": solver.init_sigma,
                "restarts": solver.restarts,
            },
            "families": {label: rep.to_dict() for label, rep in sorted(self.families.items())},
        }


def worker_count(requested: int | None = None) -> int:
    """Worker processes for trials: explicit value, else the env cap, 0 = auto."""
    if requested is None:
        raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
        try:
            requested = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if requested <= 0:
        requested = os.cpu_count() or 1
    return requested


def _run_indexed_trial(args):
    network, truth, noise, losses, solver, seed = args
    outcomes = run_trial(network, truth, noise, losses, solver, seed)
    return {
        label: (o.error_km, o.sensor_errors_km, o.result.converged) for label, o in outcomes.items()
    }


def _map_trials(tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [_run_indexed_trial(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(_run_indexed_trial, tasks))


def run_monte_carlo(config: ExperimentConfig, workers: int | None = None) -> MonteCarloReport:
    """Run ``config.trials`` independent trials and aggregate per loss spec.

    Trial ``t`` draws from the stream ``(master_seed, t)``; results are
    reduced in trial order, so the report is identical for any worker count.
    """
    labels = [spec.label for spec in config.losses]
    if len(set(labels)) != len(labels):
        raise ValueError("loss specs must have distinct labels")
    seeds = [[config.master_seed, t] for t in range(config.trials)]
    tasks = [
        (config.network, config.truth, config.noise, config.losses, config.solver, s) for s in seeds
    ]
    results = _map_trials(tasks, worker_count(workers))
    families = {}
    for spec in config.losses:
        rows = [r[spec.label] for r in results]
        sensor = np.mean([r[1] for r in rows], axis=0)
        families[spec.label] = FamilyReport(
            spec,
            [float(r[0]) for r in rows],
            [float(v) for v in sensor],
            int(sum(bool(r[2]) for r in rows)),
            config.noise.outlier_node,
        )
    return MonteCarloReport(config, families, seeds)


@dataclass(frozen=True)
class SweepRow:
    radius: float
    family: str
    epsilon_per_sensor_m: float


def sweep_huber_parameter(
    config: ExperimentConfig, R_grid=DEFAULT_R_GRID, workers: int | None = None
) -> list[SweepRow]:
    """Monte Carlo error versus Huber radius, with non-Huber baselines.

    Baselines (every non-Huber spec in ``config.losses``) are computed once;
    each radius reuses the same trial seeds, so the curve varies only
    through R. Rows are sorted by radius, Huber row first within a radius.
    """
    grid = sorted(float(r) for r in R_grid)
    if not grid or any(not r > 0 for r in grid):
        raise ValueError("R grid must be nonempty and positive")
    baselines = tuple(s for s in config.losses if s.family != "huber")
    losses = baselines + tuple(LossSpec("huber", r) for r in grid)
    report = run_monte_carlo(replace(config, losses=losses), workers)
    rows = []
    for r in grid:
        rows.append(SweepRow(r, "huber", report[LossSpec("huber", r).label].epsilon_per_sensor_m))
        for spec in baselines:
            rows.append(SweepRow(r, spec.family, report[spec.label].epsilon_per_sensor_m))
    return rows
