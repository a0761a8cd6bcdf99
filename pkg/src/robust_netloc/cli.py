"""Command-line front end: ``robust-netloc <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime or solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import simulate
from .model import (
    LossSpec,
    Measurements,
    ProblemInstance,
    canonical_family,
    degree_stats,
    dumps,
    instance_from_dict,
    measurements_to_dict,
    network_from_dict,
    network_to_dict,
    read_json,
    truth_from_dict,
    validate,
    write_json,
)
from .solver import SolverConfig, SolverError, minimize

log = logging.getLogger("robust_netloc")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _family_list(text: str) -> list[str]:
    try:
        return [canonical_family(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_noise_flags(p):
    g = p.add_argument_group("noise model")
    g.add_argument("--sigma", type=float, default=0.04, help="regular range noise std in km (default: 0.04)")
    g.add_argument(
        "--outlier-node",
        type=int,
        default=7,
        help="malfunctioning sensor, 1-based as in sensor labels; 0 disables (default: 7)",
    )
    g.add_argument("--outlier-sigma", type=float, default=4.0, help="outlier noise std in km (default: 4)")
    g.add_argument(
        "--bias",
        type=float,
        default=None,
        metavar="FACTOR",
        help="bias mode: outlier-node ranges are FACTOR times the true distance (typical value 0.1)",
    )
    g.add_argument(
        "--bias-sensors-only",
        action="store_true",
        help="in bias mode leave the outlier node's anchor ranges unbiased",
    )


def _add_solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--restarts", type=int, default=3, help="random restarts per solve (default: 3)")
    g.add_argument("--max-iters", type=int, default=50_000, help="iteration cap (default: 50000)")
    g.add_argument("--grad-tol", type=float, default=1e-7, help="gradient-norm tolerance (default: 1e-7)")
    g.add_argument("--init-sigma", type=float, default=0.1, help="init jitter around anchor centroid, km (default: 0.1)")


def _add_experiment_flags(p):
    p.add_argument("--network", type=Path, default=None, help="network+truth JSON (default: bundled canonical network)")
    p.add_argument("--trials", type=int, default=100, help="Monte Carlo trials (default: 100)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")
    p.add_argument("--workers", type=int, default=None, help=f"worker processes (default: ${simulate.THREADS_ENV}, 0 = auto)")
    _add_noise_flags(p)
    _add_solver_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robust-netloc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="generate a random geometric network with ground truth")
    p.add_argument("--sensors", type=int, default=10, help="number of sensors (default: 10)")
    p.add_argument("--side", type=float, default=1.0, help="side of the deployment square in km (default: 1)")
    p.add_argument("--anchors", default="corners", help="'corners' (all box corners) or a count of corners (default: corners)")
    p.add_argument("--degree", type=float, default=4.3, help="target average degree incl. anchor links (default: 4.3)")
    p.add_argument("--dim", type=int, default=2, choices=(2, 3), help="spatial dimension (default: 2)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default: 0)")
    p.add_argument("--out", type=Path, required=True, help="output JSON file")
    p.add_argument("--measurements-out", type=Path, default=None, help="also sample one measurement set into this file")
    p.add_argument("--measure-seed", type=int, default=0, help="seed for --measurements-out (default: 0)")
    _add_noise_flags(p)

    p = sub.add_parser("validate", help="check a network or instance file")
    p.add_argument("--network", type=Path, required=True)
    p.add_argument("--measurements", type=Path, default=None)

    p = sub.add_parser("solve", help="minimize the convex cost for one measurement set")
    p.add_argument("--network", type=Path, required=True, help="network JSON, optionally with ranges")
    p.add_argument("--measurements", type=Path, default=None, help="ranges JSON parallel to the network's edges")
    p.add_argument("--family", default="huber", help="quadratic | absolute | huber (default: huber)")
    p.add_argument("--R", type=float, default=None, help="Huber radius in km (default: file value or 0.1)")
    p.add_argument("--seed", type=int, default=0, help="initialization seed (default: 0)")
    p.add_argument("--out", type=Path, required=True, help="estimate JSON")
    p.add_argument("--strict", action="store_true", help="exit 2 if the solver does not converge")
    _add_solver_flags(p)

    p = sub.add_parser("montecarlo", help="Monte Carlo comparison of loss families")
    _add_experiment_flags(p)
    p.add_argument("--families", type=_family_list, default=list(("quadratic", "absolute", "huber")), help="comma list from q,l1,huber (default: all three)")
    p.add_argument("--R", type=float, default=0.1, help="Huber radius in km (default: 0.1)")
    p.add_argument("--out-prefix", default="montecarlo", help="writes PREFIX.report.json and PREFIX.summary.csv")

    p = sub.add_parser("sweep-r", help="Monte Carlo error versus Huber radius")
    _add_experiment_flags(p)
    p.add_argument("--grid", type=_float_list, default=list(simulate.DEFAULT_R_GRID), help="comma list of radii in km (default: 0.02,0.05,0.1,0.2,0.4,0.8)")
    p.add_argument("--baselines", type=_family_list, default=["quadratic", "absolute"], help="non-Huber families computed once (default: q,l1)")
    p.add_argument("--out-prefix", default="sweep", help="writes PREFIX.sweep.csv")
    return parser


# -- helpers -------------------------------------------------------------------


def _load_json(path: Path) -> dict:
    try:
        return read_json(path)
    except json.JSONDecodeError as exc:
        raise RuntimeError(f"{path}: malformed JSON: {exc}") from None
    except OSError as exc:
        raise RuntimeError(f"{path}: {exc.strerror or exc}") from None


def _noise_from_args(args, n_sensors: int) -> simulate.NoiseModel:
    if args.outlier_node < 0 or args.outlier_node > n_sensors:
        raise UsageError(f"--outlier-node must be between 0 and {n_sensors}")
    node = args.outlier_node - 1 if args.outlier_node else None
    return simulate.NoiseModel(
        sigma_regular=args.sigma,
        outlier_node=node,
        sigma_outlier=args.outlier_sigma,
        bias_mode=args.bias is not None,
        bias_factor=args.bias if args.bias is not None else 0.1,
        bias_anchor_links=not args.bias_sensors_only,
    )


def _solver_from_args(args, seed: int = 0) -> SolverConfig:
    return SolverConfig(
        max_iters=args.max_iters,
        grad_tol=args.grad_tol,
        init_sigma=args.init_sigma,
        restarts=args.restarts,
        seed=seed,
    )


def _experiment_network(args):
    if args.network is None:
        return simulate.load_canonical()
    doc = _load_json(args.network)
    truth = truth_from_dict(doc)
    if truth is None:
        raise RuntimeError(f"{args.network}: no 'truth' positions; Monte Carlo needs ground truth")
    return network_from_dict(doc), truth


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


# -- commands ------------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.anchors == "corners":
        n_anchors = 2**args.dim
    else:
        try:
            n_anchors = int(args.anchors)
        except ValueError:
            raise UsageError("--anchors must be 'corners' or an integer") from None
    network, truth = simulate.generate_network(
        args.sensors, args.side, n_anchors, args.degree, args.dim, args.seed
    )
    stats = degree_stats(network)
    doc = network_to_dict(network)
    doc["truth"] = truth.tolist()
    doc["unit"] = "km"
    doc["generator"] = {
        "sensors": args.sensors,
        "side": args.side,
        "anchors": n_anchors,
        "target_degree": args.degree,
        "dim": args.dim,
        "seed": args.seed,
    }
    write_json(args.out, doc)
    print(f"wrote {args.out}: {network.n_sensors} sensors, {network.n_anchors} anchors, "
          f"{len(network.edges)} edges, {len(network.anchor_links)} anchor links")
    print(f"average degree: {stats.average:.2f} (sensor-sensor), {stats.combined_average:.2f} (with anchor links)")
    if args.measurements_out is not None:
        noise = _noise_from_args(args, network.n_sensors)
        rng = np.random.default_rng(args.measure_seed)
        meas = simulate.sample_measurements(network, truth, noise, rng)
        mdoc = measurements_to_dict(network, meas)
        mdoc["unit"] = "km"
        write_json(args.measurements_out, mdoc)
        print(f"wrote {args.measurements_out}")
    return EXIT_OK


def _load_instance(network_path: Path, meas_path: Path | None) -> tuple[ProblemInstance, dict]:
    doc = _load_json(network_path)
    try:
        if meas_path is not None:
            mdoc = _load_json(meas_path)
            doc = {**doc, "ranges": mdoc.get("ranges", []), "anchor_ranges": mdoc.get("anchor_ranges", [])}
        return instance_from_dict(doc), doc
    except (KeyError, TypeError, ValueError) as exc:
        raise RuntimeError(f"{network_path}: invalid instance: {exc}") from None


def cmd_validate(args) -> int:
    doc = _load_json(args.network)
    try:
        network = network_from_dict(doc)
        if args.measurements is None and "ranges" not in doc:
            instance = ProblemInstance(
                network,
                Measurements(
                    {e: 0.0 for e in network.edges}, {a: 0.0 for a in network.anchor_links}
                ),
            )
        else:
            instance, _ = _load_instance(args.network, args.measurements)
    except (KeyError, TypeError, ValueError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    report = validate(instance)
    if report.ok:
        print("ok")
        return EXIT_OK
    for v in report.violations:
        print(f"{v.kind}: {v.message}")
    return EXIT_RUNTIME


def cmd_solve(args) -> int:
    instance, doc = _load_instance(args.network, args.measurements)
    loss = instance.loss
    family = canonical_family(args.family)
    radius = args.R if args.R is not None else loss.radius
    instance = instance.with_loss(LossSpec(family, radius, loss.edge_radii, loss.anchor_radii))
    report = validate(instance)
    if not report.ok:
        for v in report.violations:
            print(f"{v.kind}: {v.message}", file=sys.stderr)
        return EXIT_RUNTIME
    if instance.terms.n_terms == 0:
        log.warning("instance has no measurements; returning the initialization")
    res = minimize(instance, family, _solver_from_args(args, args.seed))
    out = {
        "unit": "km",
        "family": family,
        "R": radius if family == "huber" else None,
        "estimate": res.estimate.tolist(),
        "final_cost": res.final_cost,
        "iterations": res.iterations,
        "converged": res.converged,
        "gradient_norm": res.gradient_norm,
        "seed": args.seed,
    }
    truth = truth_from_dict(doc)
    if truth is not None and truth.shape == res.estimate.shape:
        out["error_km"] = float(np.linalg.norm(res.estimate - truth))
    write_json(args.out, out)
    print(f"final cost {res.final_cost:.6g} after {res.iterations} iterations, converged={res.converged}")
    if args.strict and not res.converged:
        print("solver did not converge", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _experiment(args, losses) -> simulate.ExperimentConfig:
    network, truth = _experiment_network(args)
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    return simulate.ExperimentConfig(
        network=network,
        truth=truth,
        noise=_noise_from_args(args, network.n_sensors),
        losses=tuple(losses),
        solver=_solver_from_args(args),
        trials=args.trials,
        master_seed=args.seed,
    )


def cmd_montecarlo(args) -> int:
    families = list(dict.fromkeys(args.families))
    if not families:
        raise UsageError("--families is empty")
    losses = [LossSpec(f, args.R) for f in families]
    config = _experiment(args, losses)
    report = simulate.run_monte_carlo(config, args.workers)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.report.json").write_text(dumps(report.to_dict()))
    rows = []
    for spec in losses:
        fam = report[spec.label]
        rows.append([
            spec.family,
            _fmt(spec.radius if spec.family == "huber" else None),
            _fmt(fam.epsilon_km * simulate.KM_TO_M),
            _fmt(fam.epsilon_per_sensor_m),
            config.trials,
            config.master_seed,
        ])
    Path(f"{prefix}.summary.csv").write_text(
        _csv_text(["family", "R", "eps_m", "eps_per_sensor_m", "MC", "seed"], rows)
    )
    print(f"average positioning error per sensor, meters ({config.trials} trials)")
    print("  ".join(f"{spec.label:>14s}" for spec in losses))
    print("  ".join(f"{report[spec.label].epsilon_per_sensor_m:14.2f}" for spec in losses))
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.grid or any(r <= 0 for r in args.grid):
        raise UsageError("--grid must contain positive radii")
    baselines = [LossSpec(f) for f in dict.fromkeys(args.baselines) if f != "huber"]
    config = _experiment(args, baselines)
    rows = simulate.sweep_huber_parameter(config, args.grid, args.workers)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.sweep.csv").write_text(
        _csv_text(
            ["R", "family", "eps_per_sensor_m"],
            [[_fmt(r.radius), r.family, _fmt(r.epsilon_per_sensor_m)] for r in rows],
        )
    )
    print("R [km]      family      eps/sensor [m]")
    for r in rows:
        print(f"{r.radius:<10g}  {r.family:<10s}  {r.epsilon_per_sensor_m:.2f}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "validate": cmd_validate,
    "solve": cmd_solve,
    "montecarlo": cmd_montecarlo,
    "sweep-r": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"robust-netloc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, SolverError, ValueError, OSError) as exc:
        print(f"robust-netloc {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
