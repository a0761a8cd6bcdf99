"""Network, measurement and problem-instance types.

Positions and ranges are in kilometers. Sensor positions are plain
``(n, p)`` float arrays; :func:`stack` / :func:`unstack` convert to and from
the flat vector layout used by the cost and solver modules.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

FAMILIES = ("quadratic", "absolute", "huber")

_FAMILY_ALIASES = {
    "quadratic": "quadratic",
    "q": "quadratic",
    "l2": "quadratic",
    "absolute": "absolute",
    "abs": "absolute",
    "l1": "absolute",
    "huber": "huber",
    "h": "huber",
}


def canonical_family(name: str) -> str:
    """Map a family name or alias (``q``, ``l1``, ...) to its canonical name."""
    try:
        return _FAMILY_ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown loss family {name!r}; expected one of {FAMILIES}") from None


def _canonical_pair(pair) -> tuple[int, int]:
    i, j = (int(v) for v in pair)
    return (i, j) if i <= j else (j, i)


def _frozen_array(values, shape=None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Network:
    """Sensor graph plus anchors.

    ``edges`` are unordered sensor pairs stored as ``(min, max)`` and sorted;
    ``anchor_links`` are ``(sensor, anchor)`` pairs, also sorted. Anchors are
    not graph vertices. Construction does not reject malformed topologies,
    use :func:`validate` for that.
    """

    dim: int
    n_sensors: int
    anchors: np.ndarray
    edges: tuple[tuple[int, int], ...] = ()
    anchor_links: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        anchors = np.array(self.anchors, dtype=float)
        if anchors.size == 0:
            anchors = anchors.reshape(0, int(self.dim))
        anchors.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "n_sensors", int(self.n_sensors))
        object.__setattr__(self, "edges", tuple(sorted(_canonical_pair(e) for e in self.edges)))
        object.__setattr__(
            self, "anchor_links", tuple(sorted((int(i), int(k)) for i, k in self.anchor_links))
        )

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]

    def neighbors(self, i: int) -> list[int]:
        """Sensor neighbors of sensor ``i``."""
        out = []
        for a, b in self.edges:
            if a == i and b != i:
                out.append(b)
            elif b == i and a != i:
                out.append(a)
        return sorted(out)

    def anchors_of(self, i: int) -> list[int]:
        """Anchors with a range measurement to sensor ``i``."""
        return [k for s, k in self.anchor_links if s == i]


@dataclass(frozen=True)
class Measurements:
    """Range measurements keyed by canonical edge and by ``(sensor, anchor)``."""

    ranges: dict[tuple[int, int], float] = field(default_factory=dict)
    anchor_ranges: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "ranges", {_canonical_pair(k): float(v) for k, v in self.ranges.items()}
        )
        object.__setattr__(
            self,
            "anchor_ranges",
            {(int(k[0]), int(k[1])): float(v) for k, v in self.anchor_ranges.items()},
        )

    @classmethod
    def from_arrays(cls, network: Network, ranges, anchor_ranges) -> "Measurements":
        """Build from arrays parallel to ``network.edges`` / ``network.anchor_links``."""
        ranges = list(ranges)
        anchor_ranges = list(anchor_ranges)
        if len(ranges) != len(network.edges) or len(anchor_ranges) != len(network.anchor_links):
            raise ValueError("measurement arrays must be parallel to edges and anchor_links")
        return cls(dict(zip(network.edges, ranges)), dict(zip(network.anchor_links, anchor_ranges)))


@dataclass(frozen=True)
class LossSpec:
    """Loss family plus Huber radii (global default and per-term overrides)."""

    family: str = "huber"
    radius: float = 0.1
    edge_radii: dict[tuple[int, int], float] = field(default_factory=dict)
    anchor_radii: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "family", canonical_family(self.family))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(
            self, "edge_radii", {_canonical_pair(k): float(v) for k, v in self.edge_radii.items()}
        )
        object.__setattr__(
            self,
            "anchor_radii",
            {(int(k[0]), int(k[1])): float(v) for k, v in self.anchor_radii.items()},
        )

    @property
    def label(self) -> str:
        return f"huber(R={self.radius:g})" if self.family == "huber" else self.family

    def edge_radius(self, edge) -> float:
        return self.edge_radii.get(_canonical_pair(edge), self.radius)

    def anchor_radius(self, link) -> float:
        return self.anchor_radii.get((int(link[0]), int(link[1])), self.radius)


@dataclass(frozen=True)
class Terms:
    """Flat per-term arrays for vectorized cost evaluation.

    Edge terms come first in canonical edge order, then anchor terms.
    ``incidence @ X`` gives ``x_i - x_j`` for edge rows and ``x_i`` for anchor
    rows, so ``incidence @ X - offsets`` is the difference vector of each term.
    """

    incidence: np.ndarray  # (T, n)
    offsets: np.ndarray  # (T, p)
    measured: np.ndarray  # (T,)
    radius: np.ndarray  # (T,)
    n_edges: int

    @property
    def n_terms(self) -> int:
        return self.measured.shape[0]


@dataclass(frozen=True)
class ProblemInstance:
    network: Network
    measurements: Measurements
    loss: LossSpec = field(default_factory=LossSpec)

    @property
    def n(self) -> int:
        return self.network.n_sensors

    @property
    def dim(self) -> int:
        return self.network.dim

    def with_loss(self, loss: LossSpec) -> "ProblemInstance":
        return ProblemInstance(self.network, self.measurements, loss)

    @cached_property
    def terms(self) -> Terms:
        net, meas, loss = self.network, self.measurements, self.loss
        n, p = net.n_sensors, net.dim
        n_terms = len(net.edges) + len(net.anchor_links)
        incidence = np.zeros((n_terms, n))
        offsets = np.zeros((n_terms, p))
        measured = np.zeros(n_terms)
        radius = np.zeros(n_terms)
        for t, (i, j) in enumerate(net.edges):
            incidence[t, i] += 1.0
            incidence[t, j] -= 1.0
            measured[t] = meas.ranges[(i, j)]
            radius[t] = loss.edge_radius((i, j))
        for t, (i, k) in enumerate(net.anchor_links, start=len(net.edges)):
            incidence[t, i] = 1.0
            offsets[t] = net.anchors[k]
            measured[t] = meas.anchor_ranges[(i, k)]
            radius[t] = loss.anchor_radius((i, k))
        for arr in (incidence, offsets, measured, radius):
            arr.setflags(write=False)
        return Terms(incidence, offsets, measured, radius, len(net.edges))


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> list[str]:
        return [v.kind for v in self.violations]

    def __len__(self) -> int:
        return len(self.violations)


def _validate_network(net: Network) -> list[Violation]:
    out = []
    if net.dim not in (2, 3):
        out.append(Violation("dimension", f"dim must be 2 or 3, got {net.dim}"))
    if net.n_sensors < 0:
        out.append(Violation("sensor count", f"negative sensor count {net.n_sensors}"))
    if net.anchors.ndim != 2 or (net.anchors.size and net.anchors.shape[1] != net.dim):
        out.append(Violation("anchor shape", f"anchors have shape {net.anchors.shape}"))
    elif not np.all(np.isfinite(net.anchors)):
        out.append(Violation("non-finite", "anchor coordinates must be finite"))
    seen = set()
    for e in net.edges:
        i, j = e
        if not (0 <= i < net.n_sensors and 0 <= j < net.n_sensors):
            out.append(Violation("index out of range", f"edge {e} references a missing sensor"))
        if i == j:
            out.append(Violation("self-loop", f"edge {e} is a self-loop"))
        if e in seen:
            out.append(Violation("duplicate", f"edge {e} appears more than once"))
        seen.add(e)
    seen = set()
    for link in net.anchor_links:
        i, k = link
        if not 0 <= i < net.n_sensors or not 0 <= k < net.n_anchors:
            out.append(Violation("index out of range", f"anchor link {link} out of range"))
        if link in seen:
            out.append(Violation("duplicate", f"anchor link {link} appears more than once"))
        seen.add(link)
    return out


def _validate_ranges(keys, values: dict, what: str) -> list[Violation]:
    out = []
    keys = set(keys)
    for key in sorted(keys - values.keys()):
        out.append(Violation("missing range", f"no {what} measurement for {key}"))
    for key in sorted(values.keys() - keys):
        out.append(Violation("unexpected range", f"{what} measurement {key} has no link"))
    for key in sorted(keys & values.keys()):
        v = values[key]
        if not math.isfinite(v):
            out.append(Violation("non-finite", f"{what} measurement {key} is {v}"))
        elif v < 0:
            out.append(Violation("negative range", f"{what} measurement {key} = {v} < 0"))
    return out


def validate(instance: ProblemInstance) -> ValidationReport:
    """Collect every invariant violation of ``instance``; empty iff well-formed."""
    net, meas, loss = instance.network, instance.measurements, instance.loss
    out = _validate_network(net)
    out += _validate_ranges(net.edges, meas.ranges, "edge")
    out += _validate_ranges(net.anchor_links, meas.anchor_ranges, "anchor")
    if loss.family == "huber":
        radii = [("default", loss.radius)]
        radii += [(f"edge {e}", r) for e, r in sorted(loss.edge_radii.items())]
        radii += [(f"anchor link {a}", r) for a, r in sorted(loss.anchor_radii.items())]
        for where, r in radii:
            if not (math.isfinite(r) and r > 0):
                out.append(Violation("missing radius", f"Huber radius for {where} must be > 0, got {r}"))
    return ValidationReport(tuple(out))


# -- graph statistics ----------------------------------------------------------


@dataclass(frozen=True)
class DegreeStats:
    """Per-sensor degrees; ``combined`` also counts anchor links."""

    degrees: np.ndarray
    average: float
    combined_degrees: np.ndarray
    combined_average: float


def degree_stats(network: Network) -> DegreeStats:
    n = network.n_sensors
    deg = np.zeros(n, dtype=int)
    for i, j in network.edges:
        deg[i] += 1
        deg[j] += 1
    combined = deg.copy()
    for i, _ in network.anchor_links:
        combined[i] += 1
    avg = float(deg.mean()) if n else 0.0
    cavg = float(combined.mean()) if n else 0.0
    return DegreeStats(deg, avg, combined, cavg)


# -- stacking -----------------------------------------------------------------


def stack(positions) -> np.ndarray:
    """Flatten an ``(n, p)`` position matrix row-major into a length ``n*p`` vector."""
    return np.asarray(positions, dtype=float).reshape(-1).copy()


def unstack(vector, n: int, p: int) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    if vector.ndim != 1 or vector.size != n * p:
        raise ValueError(f"expected a vector of length {n * p}, got shape {vector.shape}")
    return vector.reshape(n, p).copy()


# -- JSON ---------------------------------------------------------------------


def network_to_dict(network: Network) -> dict:
    return {
        "dim": network.dim,
        "n_sensors": network.n_sensors,
        "anchors": network.anchors.tolist(),
        "edges": [list(e) for e in network.edges],
        "anchor_links": [list(a) for a in network.anchor_links],
    }


def network_from_dict(doc: dict) -> Network:
    anchors = doc.get("anchors", [])
    edges = [tuple(e) for e in doc.get("edges", [])]
    links = [tuple(a) for a in doc.get("anchor_links", [])]
    if "n_sensors" in doc:
        n = int(doc["n_sensors"])
    elif "truth" in doc:
        n = len(doc["truth"])
    else:
        idx = [v for e in edges for v in e] + [a[0] for a in links]
        n = max(idx) + 1 if idx else 0
    return Network(int(doc["dim"]), n, anchors, edges, links)


def measurements_to_dict(network: Network, meas: Measurements) -> dict:
    return {
        "ranges": [meas.ranges[e] for e in network.edges],
        "anchor_ranges": [meas.anchor_ranges[a] for a in network.anchor_links],
    }


def measurements_from_dict(network: Network, doc: dict) -> Measurements:
    # ranges are parallel to the edge list as written in the file, which may
    # not be canonically sorted
    if "edges" in doc:
        edges = [_canonical_pair(e) for e in doc["edges"]]
        links = [(int(a[0]), int(a[1])) for a in doc.get("anchor_links", [])]
    else:
        edges, links = list(network.edges), list(network.anchor_links)
    ranges, anchor_ranges = doc.get("ranges", []), doc.get("anchor_ranges", [])
    if len(ranges) != len(edges) or len(anchor_ranges) != len(links):
        raise ValueError("'ranges'/'anchor_ranges' must be parallel to 'edges'/'anchor_links'")
    return Measurements(dict(zip(edges, ranges)), dict(zip(links, anchor_ranges)))


def loss_to_dict(loss: LossSpec) -> dict:
    return {
        "family": loss.family,
        "R": loss.radius,
        "overrides": {
            "edges": [[i, j, r] for (i, j), r in sorted(loss.edge_radii.items())],
            "anchor_links": [[i, k, r] for (i, k), r in sorted(loss.anchor_radii.items())],
        },
    }


def loss_from_dict(doc: dict) -> LossSpec:
    overrides = doc.get("overrides") or {}
    return LossSpec(
        doc.get("family", "huber"),
        doc.get("R", 0.1),
        {(int(i), int(j)): r for i, j, r in overrides.get("edges", [])},
        {(int(i), int(k)): r for i, k, r in overrides.get("anchor_links", [])},
    )


def instance_to_dict(instance: ProblemInstance) -> dict:
    doc = network_to_dict(instance.network)
    doc.update(measurements_to_dict(instance.network, instance.measurements))
    doc["loss"] = loss_to_dict(instance.loss)
    return doc


def instance_from_dict(doc: dict) -> ProblemInstance:
    network = network_from_dict(doc)
    meas = measurements_from_dict(network, doc)
    loss = loss_from_dict(doc["loss"]) if "loss" in doc else LossSpec()
    return ProblemInstance(network, meas, loss)


def truth_from_dict(doc: dict) -> np.ndarray | None:
    if "truth" not in doc:
        return None
    return _frozen_array(doc["truth"], (-1, int(doc["dim"])))


def dumps(doc: dict) -> str:
    """Deterministic JSON encoding used for every file the package writes."""
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_json(path, doc: dict) -> None:
    Path(path).write_text(dumps(doc))
