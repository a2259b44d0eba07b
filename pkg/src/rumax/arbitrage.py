"""Arbitrage detection, martingale measure construction and the symmetric
price perturbation that repairs arbitrage by domination.

A measure admits arbitrage when some adapted strategy has almost-surely
nonnegative trading gains that are positive with positive probability.  On a
finite tree both the detection problem and the search for an equivalent
martingale measure are linear programs over the node-wise zero-drift polytope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidEpsilon, LPFailure
from .lattice import Measure, Node, ScenarioLattice, Strategy
from .simplex import solve_lp

_ARB_TOL = 1e-9


@dataclass
class DualCone:
    """Node-indexed zero-drift equations plus nonnegativity and unit mass.

    ``a_node[k] @ w == 0`` states that the asset increment out of non-terminal
    node k has zero mean among the leaves passing through it.
    """

    lattice: ScenarioLattice
    node_ids: tuple[int, ...]
    a_node: np.ndarray          # (n_nodes, n_leaves)

    @staticmethod
    def build(lat: ScenarioLattice) -> "DualCone":
        nodes = lat.nonterminal_ids()
        a = np.zeros((len(nodes), lat.n_leaves))
        for k, nid in enumerate(nodes):
            t = lat.nodes[nid].t
            for i, leaf in enumerate(lat.leaf_ids):
                path = lat.path_nodes(leaf)
                if path[t] == nid:
                    a[k, i] = lat.path_matrix[i, t + 1, 1] - lat.path_matrix[i, t, 1]
        return DualCone(lat, nodes, a)


_CONE_CACHE: dict[int, DualCone] = {}


def dual_cone(lat: ScenarioLattice) -> DualCone:
    cone = _CONE_CACHE.get(lat.fingerprint)
    if cone is None:
        if len(_CONE_CACHE) > 64:
            _CONE_CACHE.clear()
        cone = DualCone.build(lat)
        _CONE_CACHE[lat.fingerprint] = cone
    return cone


@dataclass
class ArbitrageResult:
    admits: bool
    strategy: Strategy | None
    optimum: float


def admits_arbitrage(P: Measure) -> ArbitrageResult:
    """LP detection on the support of P.

    Maximizes total gains over box-bounded strategies subject to nonnegative
    gains on every support leaf; a positive optimum is an arbitrage and the
    maximizer is returned as witness.  Scaling is immaterial because arbitrage
    is a cone condition, so the unit box just keeps the LP bounded.
    """
    lat = P.lattice
    support = P.support()
    sup_idx = [lat.leaf_index[l] for l in support]
    theta_nodes = sorted({nid for leaf in support
                          for nid in lat.path_nodes(leaf)[:-1]})
    node_pos = {nid: k for k, nid in enumerate(theta_nodes)}
    nv = len(theta_nodes)

    # gains[i, k] = increment contributed by the holding at node k on leaf i
    gains = np.zeros((len(support), nv))
    for i, leaf in enumerate(support):
        path = lat.path_nodes(leaf)
        row = lat.leaf_index[leaf]
        for t in range(len(path) - 1):
            gains[i, node_pos[path[t]]] += (lat.path_matrix[row, t + 1, 1]
                                            - lat.path_matrix[row, t, 1])

    c = -gains.sum(axis=0)
    sol = solve_lp(c, a_ub=-gains, b_ub=np.zeros(len(support)),
                   bounds=[(-1.0, 1.0)] * nv)
    if sol.status != "optimal":
        raise LPFailure(f"arbitrage LP ended {sol.status}")
    opt = -float(sol.fun)
    if opt <= _ARB_TOL:
        return ArbitrageResult(False, None, opt)
    holdings = {nid: 0.0 for nid in lat.nonterminal_ids()}
    for nid, k in node_pos.items():
        holdings[nid] = float(sol.x[k])
    return ArbitrageResult(True, Strategy(lat, holdings), opt)


def find_emm(P: Measure) -> Measure | None:
    """Martingale measure equivalent to P on its support, or None.

    Maximizes the minimum support weight over the zero-drift polytope; a
    positive optimum is the finite-tree counterpart of the equivalence between
    absence of arbitrage and existence of such a measure.
    """
    lat = P.lattice
    support = P.support()
    sup_idx = [lat.leaf_index[l] for l in support]
    ns = len(support)
    cone = dual_cone(lat)
    # restrict drift rows to nodes on support paths
    sub = cone.a_node[:, sup_idx]
    active = np.abs(cone.a_node).sum(axis=1) > 0
    on_support = np.array([
        any(cone.lattice.path_nodes(l)[cone.lattice.nodes[nid].t] == nid
            for l in support)
        for nid in cone.node_ids])
    rows = sub[on_support]

    # vars: w (ns), delta
    nv = ns + 1
    a_eq = np.zeros((rows.shape[0] + 1, nv))
    a_eq[:rows.shape[0], :ns] = rows
    b_eq = np.zeros(rows.shape[0] + 1)
    a_eq[-1, :ns] = 1.0
    b_eq[-1] = 1.0
    a_ub = np.hstack([-np.eye(ns), np.ones((ns, 1))])   # delta - w_l <= 0
    c = np.zeros(nv)
    c[-1] = -1.0
    sol = solve_lp(c, a_ub=a_ub, b_ub=np.zeros(ns), a_eq=a_eq, b_eq=b_eq,
                   bounds=[(0.0, None)] * ns + [(0.0, None)])
    if sol.status == "infeasible":
        return None
    if sol.status != "optimal":
        raise LPFailure(f"martingale measure LP ended {sol.status}")
    delta = float(sol.x[-1])
    if delta <= 1e-10:
        return None
    weights = np.zeros(lat.n_leaves)
    weights[sup_idx] = sol.x[:ns]
    return Measure.from_vector(lat, weights)


# --- symmetric perturbation ------------------------------------------------


@dataclass
class PerturbationResult:
    lattice: ScenarioLattice
    measure: Measure
    leaf_map: dict[int, int]       # original leaf id -> enlarged-lattice leaf id
    node_map: dict[int, int]
    epsilon: float

    def embed_measure(self, mu: Measure) -> Measure:
        return Measure(self.lattice,
                       {self.leaf_map[l]: w for l, w in mu.weights.items()})


def perturb_na(P: Measure, eps: float, anchor_s0: float | None = None) -> PerturbationResult:
    """Dominating arbitrage-free measure on a symmetrically enlarged tree.

    Every node of the original tree gains two children at prices scaled by
    (1 - eps) and (1 + eps); the new branches continue splitting symmetrically
    down to the horizon.  The returned measure mixes the original transition
    kernel with weight eps and the symmetric two-point kernel with weight
    1 - eps, so its conditional support straddles the current price at every
    node, which rules out arbitrage, while the original measure stays
    absolutely continuous with density bounded by eps**-T.
    """
    if not (0.0 < eps < 1.0):
        raise InvalidEpsilon(f"perturbation size must lie in (0, 1), got {eps}")
    lat = P.lattice
    if anchor_s0 is None:
        anchor_s0 = lat.nodes[lat.root_id].s

    # conditional mass of P at every original node
    node_mass = {nid: 0.0 for nid in lat.nodes}
    for leaf, w in P.weights.items():
        for nid in lat.path_nodes(leaf):
            node_mass[nid] += w

    new_nodes: list[Node] = []
    node_map: dict[int, int] = {}
    next_id = 0

    def fresh(t, parent, m, s):
        nonlocal next_id
        new_nodes.append(Node(id=next_id, t=t, parent=parent, m=m, s=s))
        next_id += 1
        return next_id - 1

    mass: dict[int, float] = {}

    def grow_symmetric(parent_new, t, m, s, weight):
        """Pure symmetric binary subtree below a fresh node."""
        if t == lat.horizon:
            mass[parent_new] = mass.get(parent_new, 0.0) + weight
            return
        for factor in (1.0 - eps, 1.0 + eps):
            child = fresh(t + 1, parent_new, m, s * factor)
            grow_symmetric(child, t + 1, m, s * factor, weight / 2.0)

    root = lat.nodes[lat.root_id]
    root_new = fresh(0, None, root.m, root.s)
    node_map[root.id] = root_new
    stack = [(root.id, root_new, 1.0)]
    while stack:
        old_id, new_id, w_here = stack.pop()
        node = lat.nodes[old_id]
        if node.t == lat.horizon:
            mass[new_id] = mass.get(new_id, 0.0) + w_here
            continue
        kids = lat.children[old_id]
        on_support = node_mass[old_id] > 0
        for kid in kids:
            knode = lat.nodes[kid]
            kid_new = fresh(knode.t, new_id, knode.m, knode.s)
            node_map[kid] = kid_new
            cond = node_mass[kid] / node_mass[old_id] if on_support else 0.0
            stack.append((kid, kid_new, w_here * eps * cond))
        half = w_here * (1.0 - eps) / 2.0 if on_support else 0.0
        for factor in (1.0 - eps, 1.0 + eps):
            child = fresh(node.t + 1, new_id, node.m, node.s * factor)
            grow_symmetric(child, node.t + 1, node.m, node.s * factor, half)

    enlarged = ScenarioLattice(lat.horizon, new_nodes)
    leaf_map = {l: node_map[l] for l in lat.leaf_ids}
    weights = {leaf: w for leaf, w in mass.items() if w > 0}
    measure = Measure(enlarged, weights)
    return PerturbationResult(enlarged, measure, leaf_map, node_map, eps)


# --- no-arbitrage report -----------------------------------------------------


@dataclass
class NAEntry:
    target: str
    status: str                 # "holds" | "undetermined"
    epsilon: float | None = None
    note: str = ""


@dataclass
class NAReport:
    entries: list[NAEntry]

    @property
    def holds(self) -> bool:
        return all(e.status == "holds" for e in self.entries)


_EPS_GRID = (0.5, 0.1, 0.05, 0.01, 0.005, 0.001, 1e-4, 1e-5)


def check_na(amb) -> NAReport:
    """Report on the domination-by-arbitrage-free-member condition.

    Hull generators are checked directly and, failing that, against mixtures
    of all generators; the bounded variants are probed with the symmetric
    perturbation of a representative member over a fixed grid of sizes.
    Unresolved cases are reported as undetermined, never silently passed.
    """
    from .ambiguity import (FiniteHull, MomentSet, WassersteinBall,
                            WassersteinPenalty, contains, inner_min, rebind)

    entries = []
    if isinstance(amb, FiniteHull):
        gens = amb.generators
        maxmin = _maxmin_mixture(gens)
        for gi, g in enumerate(gens):
            if not admits_arbitrage(g).admits:
                entries.append(NAEntry(f"generator {gi}", "holds",
                                       note="generator itself arbitrage-free"))
                continue
            found = False
            for w in (1.0, 0.5, 0.1, 0.01):
                mixed = _mix(maxmin, g, w)
                if set(g.support()) <= set(mixed.support()) \
                        and not admits_arbitrage(mixed).admits:
                    entries.append(NAEntry(
                        f"generator {gi}", "holds",
                        note=f"dominated by arbitrage-free mixture (blend {w})"))
                    found = True
                    break
            if not found:
                entries.append(NAEntry(f"generator {gi}", "undetermined",
                                       note="no dominating mixture found"))
        return NAReport(entries)

    if isinstance(amb, (WassersteinBall, WassersteinPenalty)):
        rep = amb.reference
        target = "reference"
    else:
        rep = inner_min(amb, np.zeros(amb.lattice.n_leaves)).measure
        target = "representative"

    for eps in _EPS_GRID:
        pert = perturb_na(rep, eps)
        if admits_arbitrage(pert.measure).admits:
            continue
        reb = rebind(amb, pert)
        member = contains(reb, pert.measure, 1e-8)
        if member.member:
            entries.append(NAEntry(target, "holds", epsilon=eps,
                                   note=member.witness))
            return NAReport(entries)
    entries.append(NAEntry(target, "undetermined",
                           note="no grid size kept the perturbation inside the set"))
    return NAReport(entries)


def _maxmin_mixture(gens) -> Measure:
    """Mixture maximizing the minimum weight over the union support."""
    lat = gens[0].lattice
    union = sorted({l for g in gens for l in g.support()})
    idx = [lat.leaf_index[l] for l in union]
    g_mat = np.column_stack([g.vector()[idx] for g in gens])
    k = len(gens)
    # vars: mu (k), delta
    c = np.zeros(k + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-g_mat, np.ones((len(union), 1))])
    a_eq = np.zeros((1, k + 1))
    a_eq[0, :k] = 1.0
    sol = solve_lp(c, a_ub=a_ub, b_ub=np.zeros(len(union)),
                   a_eq=a_eq, b_eq=np.array([1.0]))
    if sol.status != "optimal":
        raise LPFailure(f"mixture LP ended {sol.status}")
    weights = np.zeros(lat.n_leaves)
    for gi, g in enumerate(gens):
        weights += sol.x[gi] * g.vector()
    return Measure.from_vector(lat, weights)


def _mix(a: Measure, b: Measure, w_a: float) -> Measure:
    v = w_a * a.vector() + (1.0 - w_a) * b.vector()
    return Measure.from_vector(a.lattice, v)
