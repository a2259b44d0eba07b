"""Finite scenario trees, path measures, claims and trading strategies.

A lattice is an event tree over times 0..T.  Every node carries a money-market
value ``m`` and an asset price ``s`` (both strictly positive); root-to-leaf
paths are the sample points, and the leaf set in ascending-id order is the
canonical coordinate system for every vector emitted by the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CyclicTree,
    InvalidClaim,
    InvalidMeasure,
    InvalidMetricParams,
    LatticeMismatch,
    MissingHolding,
    MultipleRoots,
    NonPositivePrice,
    TimeGap,
    UnknownLeaf,
)

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Node:
    id: int
    t: int
    parent: int | None
    m: float
    s: float


class ScenarioLattice:
    """Validated event tree; immutable after construction."""

    def __init__(self, horizon: int, nodes: list[Node]):
        self.horizon = int(horizon)
        self.nodes = {n.id: n for n in nodes}
        if len(self.nodes) != len(nodes):
            raise CyclicTree("duplicate node ids")
        self._validate_and_index()

    def _validate_and_index(self):
        roots = [n for n in self.nodes.values() if n.parent is None]
        if len(roots) != 1:
            raise MultipleRoots(f"expected exactly one root, found {len(roots)}")
        self.root_id = roots[0].id
        if roots[0].t != 0:
            raise TimeGap("root must sit at time 0")

        children: dict[int, list[int]] = {nid: [] for nid in self.nodes}
        for n in self.nodes.values():
            if n.m <= 0 or n.s <= 0:
                raise NonPositivePrice(f"node {n.id} has m={n.m}, s={n.s}")
            if not (np.isfinite(n.m) and np.isfinite(n.s)):
                raise NonPositivePrice(f"node {n.id} carries a non-finite value")
            if n.parent is None:
                continue
            if n.parent not in self.nodes:
                raise CyclicTree(f"node {n.id} references unknown parent {n.parent}")
            if n.t != self.nodes[n.parent].t + 1:
                raise TimeGap(f"node {n.id} at t={n.t} under parent at "
                              f"t={self.nodes[n.parent].t}")
            children[n.parent].append(n.id)
        self.children = {nid: tuple(sorted(c)) for nid, c in children.items()}

        # Reaching the root from every node also certifies acyclicity, since
        # parent times strictly decrease.
        for n in self.nodes.values():
            cur, hops = n, 0
            while cur.parent is not None:
                cur = self.nodes[cur.parent]
                hops += 1
                if hops > len(self.nodes):
                    raise CyclicTree(f"ancestry of node {n.id} does not terminate")

        leaves = sorted(nid for nid, c in self.children.items() if not c)
        for nid in leaves:
            if self.nodes[nid].t != self.horizon:
                raise TimeGap(f"leaf {nid} at t={self.nodes[nid].t}, "
                              f"horizon is {self.horizon}")
        self.leaf_ids: tuple[int, ...] = tuple(leaves)
        self.leaf_index = {nid: i for i, nid in enumerate(self.leaf_ids)}

        self._paths = {}
        for leaf in self.leaf_ids:
            seq = []
            cur = self.nodes[leaf]
            while True:
                seq.append(cur.id)
                if cur.parent is None:
                    break
                cur = self.nodes[cur.parent]
            self._paths[leaf] = tuple(reversed(seq))

        # (n_leaves, T+1, 2) array of (m, s) along each path, canonical order.
        pm = np.empty((len(self.leaf_ids), self.horizon + 1, 2))
        for i, leaf in enumerate(self.leaf_ids):
            for t, nid in enumerate(self._paths[leaf]):
                node = self.nodes[nid]
                pm[i, t, 0] = node.m
                pm[i, t, 1] = node.s
        self.path_matrix = pm
        self.path_matrix.setflags(write=False)

        self.fingerprint = hash(tuple(sorted(
            (n.id, n.t, -1 if n.parent is None else n.parent, n.m, n.s)
            for n in self.nodes.values())))

    # -- read accessors --------------------------------------------------

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_ids)

    def path_nodes(self, leaf: int) -> tuple[int, ...]:
        if leaf not in self._paths:
            raise UnknownLeaf(f"no leaf with id {leaf}")
        return self._paths[leaf]

    def path_points(self, leaf: int) -> np.ndarray:
        """(T+1, 2) array of (m, s) pairs along the path to ``leaf``."""
        return self.path_matrix[self.leaf_index_of(leaf)]

    def leaf_index_of(self, leaf: int) -> int:
        if leaf not in self.leaf_index:
            raise UnknownLeaf(f"no leaf with id {leaf}")
        return self.leaf_index[leaf]

    def nonterminal_ids(self) -> tuple[int, ...]:
        return tuple(sorted(nid for nid in self.nodes
                            if self.nodes[nid].t < self.horizon))

    def increments(self, leaf: int) -> np.ndarray:
        """Asset increments S_t - S_{t-1}, t = 1..T, along the path."""
        s = self.path_points(leaf)[:, 1]
        return np.diff(s)

    def min_positive_increment(self) -> float:
        d = np.abs(np.diff(self.path_matrix[:, :, 1], axis=1))
        d = d[d > 1e-14]
        return float(d.min()) if d.size else 0.0

    def same_as(self, other: "ScenarioLattice") -> bool:
        return self is other or self.fingerprint == other.fingerprint


def build_lattice(spec: dict) -> ScenarioLattice:
    """Build and validate a lattice from a structured description.

    ``spec`` carries ``horizon`` and ``nodes``, each node a mapping with keys
    ``id``, ``parent`` (None at the root), ``t``, ``m``, ``s``.
    """
    nodes = [Node(id=int(n["id"]),
                  t=int(n["t"]),
                  parent=None if n.get("parent") is None else int(n["parent"]),
                  m=float(n["m"]),
                  s=float(n["s"]))
             for n in spec["nodes"]]
    return ScenarioLattice(int(spec["horizon"]), nodes)


def _check_same_lattice(a, b):
    if not a.lattice.same_as(b.lattice):
        raise LatticeMismatch("objects live on different lattices")


@dataclass(frozen=True)
class Measure:
    """Nonnegative path weights summing to one, indexed by leaf id."""

    lattice: ScenarioLattice
    weights: dict[int, float]

    def __post_init__(self):
        total = 0.0
        for leaf, w in self.weights.items():
            if leaf not in self.lattice.leaf_index:
                raise UnknownLeaf(f"weight on unknown leaf {leaf}")
            if not np.isfinite(w) or w < 0:
                raise InvalidMeasure(f"weight {w} on leaf {leaf}")
            total += w
        if abs(total - 1.0) > _SUM_TOL:
            raise InvalidMeasure(f"weights sum to {total!r}")

    def vector(self) -> np.ndarray:
        v = np.zeros(self.lattice.n_leaves)
        for leaf, w in self.weights.items():
            v[self.lattice.leaf_index[leaf]] = w
        return v

    def support(self, tol: float = 0.0) -> tuple[int, ...]:
        return tuple(l for l in self.lattice.leaf_ids
                     if self.weights.get(l, 0.0) > tol)

    @staticmethod
    def from_vector(lattice: ScenarioLattice, v) -> "Measure":
        """Build a measure from a canonical-order vector, absorbing LP noise:
        entries within 1e-9 of zero are clipped and the rest renormalized."""
        v = np.asarray(v, dtype=float).copy()
        v[np.abs(v) < 1e-9] = 0.0
        if (v < 0).any():
            raise InvalidMeasure("negative weight beyond noise threshold")
        s = v.sum()
        if s > 0:
            v = v / s
        return Measure(lattice, {leaf: float(v[i])
                                 for i, leaf in enumerate(lattice.leaf_ids)
                                 if v[i] != 0.0})

    @staticmethod
    def uniform(lattice: ScenarioLattice) -> "Measure":
        w = 1.0 / lattice.n_leaves
        return Measure(lattice, {leaf: w for leaf in lattice.leaf_ids})

    @staticmethod
    def dirac(lattice: ScenarioLattice, leaf: int) -> "Measure":
        if leaf not in lattice.leaf_index:
            raise UnknownLeaf(f"no leaf with id {leaf}")
        return Measure(lattice, {leaf: 1.0})


@dataclass(frozen=True)
class Claim:
    """Payoff per leaf, in units of the terminal money market."""

    lattice: ScenarioLattice
    values: dict[int, float]

    def __post_init__(self):
        for leaf in self.lattice.leaf_ids:
            v = self.values.get(leaf, 0.0)
            if not np.isfinite(v):
                raise InvalidClaim(f"value {v} on leaf {leaf}")
        for leaf in self.values:
            if leaf not in self.lattice.leaf_index:
                raise UnknownLeaf(f"claim value on unknown leaf {leaf}")

    def vector(self) -> np.ndarray:
        return np.array([self.values.get(leaf, 0.0)
                         for leaf in self.lattice.leaf_ids])

    @staticmethod
    def from_vector(lattice: ScenarioLattice, v) -> "Claim":
        v = np.asarray(v, dtype=float)
        return Claim(lattice, {leaf: float(v[i])
                               for i, leaf in enumerate(lattice.leaf_ids)})

    @staticmethod
    def constant(lattice: ScenarioLattice, value: float) -> "Claim":
        return Claim(lattice, {leaf: float(value) for leaf in lattice.leaf_ids})


@dataclass(frozen=True)
class Strategy:
    """Holdings per non-terminal node; the holding at a time-(t-1) node is the
    position carried over the step to time t on every scenario through it."""

    lattice: ScenarioLattice
    holdings: dict[int, float]

    def holding(self, node: int) -> float:
        if node not in self.holdings:
            raise MissingHolding(f"no holding at node {node}")
        return self.holdings[node]

    @staticmethod
    def zero(lattice: ScenarioLattice) -> "Strategy":
        return Strategy(lattice, {nid: 0.0 for nid in lattice.nonterminal_ids()})

    @staticmethod
    def from_vector(lattice: ScenarioLattice, v) -> "Strategy":
        ids = lattice.nonterminal_ids()
        v = np.asarray(v, dtype=float)
        return Strategy(lattice, {nid: float(v[i]) for i, nid in enumerate(ids)})


def wealth(lat: ScenarioLattice, th: Strategy, leaf: int) -> float:
    """Discounted trading gains along the path to ``leaf``."""
    if not lat.same_as(th.lattice):
        raise LatticeMismatch("strategy lives on a different lattice")
    path = lat.path_nodes(leaf)
    total = 0.0
    for t in range(1, len(path)):
        prev, cur = lat.nodes[path[t - 1]], lat.nodes[path[t]]
        total += th.holding(prev.id) * (cur.s - prev.s)
    return total


def wealth_vector(lat: ScenarioLattice, th: Strategy) -> np.ndarray:
    return np.array([wealth(lat, th, leaf) for leaf in lat.leaf_ids])


def expectation(mu: Measure, c: Claim) -> float:
    _check_same_lattice(mu, c)
    return float(sum(w * c.values.get(leaf, 0.0)
                     for leaf, w in mu.weights.items()))


def z_weight(lat: ScenarioLattice, variant: str = "sum-price-inverse",
             metric=None) -> Claim:
    """Per-path integrability weights.

    ``sum-price-inverse`` sums ``s v 1/s`` over the path.  ``transport-anchored``
    uses the path metric against the flat anchor path and requires ``metric``
    parameters from the transport module.
    """
    n = lat.n_leaves
    if variant == "sum-price-inverse":
        s = lat.path_matrix[:, :, 1]
        z = np.maximum(s, 1.0 / s).sum(axis=1)
    elif variant == "transport-anchored":
        if metric is None:
            raise InvalidMetricParams("transport-anchored weights need metric params")
        from .transport import anchor_path, path_distance
        anchor = anchor_path(lat, metric)
        s0 = lat.nodes[lat.root_id].s
        scale = np.exp(metric.rho * lat.horizon) * lat.horizon ** (1.0 - 1.0 / metric.kappa)
        z = np.array([s0 + lat.horizon
                      + scale * path_distance(metric, lat.path_matrix[i], anchor)
                      for i in range(n)])
    else:
        raise InvalidMetricParams(f"unknown weight variant {variant!r}")

    abs_sum = np.abs(lat.path_matrix[:, :, 1]).sum(axis=1)
    if not ((z >= 1.0 - 1e-12).all() and (z >= abs_sum - 1e-9).all()):
        raise InvalidMetricParams("weight function fails its lower bounds")
    return Claim.from_vector(lat, z)
