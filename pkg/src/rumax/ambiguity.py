"""Ambiguity sets, penalties and the inner minimization oracles.

Four variants ship: finite convex hulls, moment-constrained sets, coupling-
distance balls and coupling-distance penalties.  Every variant exposes one
polyhedral description (its own variables, the linear map to leaf weights,
constraint rows and a linear penalty term) that is shared by the linear
oracle, the membership test and the cutting-plane masters built on top.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InfeasibleSet,
    InvalidSpec,
    LatticeMismatch,
    LPFailure,
)
from .lattice import Claim, Measure, ScenarioLattice
from .simplex import solve_lp
from .transport import MetricParams, cost_matrix, wasserstein_p

_INF = float("inf")


@dataclass
class PolytopeLP:
    """Polyhedral description of one ambiguity variant.

    Leaf weights are ``p_map @ vars``; ``alpha_coef @ vars`` dominates the
    penalty everywhere and matches it at any point where the auxiliary
    variables are chosen optimally.
    """

    n_vars: int
    p_map: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    alpha_coef: np.ndarray


@dataclass(eq=False)
class FiniteHull:
    generators: tuple[Measure, ...]
    _cache: PolytopeLP | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.generators:
            raise InvalidSpec("hull needs at least one generator")
        lat = self.generators[0].lattice
        for g in self.generators[1:]:
            if not g.lattice.same_as(lat):
                raise LatticeMismatch("hull generators on different lattices")
        self.generators = tuple(self.generators)

    @property
    def lattice(self) -> ScenarioLattice:
        return self.generators[0].lattice


@dataclass(eq=False)
class MomentConstraint:
    exponent: float
    bounds: tuple[float, ...]     # one bound per time t = 1..T


@dataclass(eq=False)
class MomentSet:
    """All measures on the lattice whose price moments stay under the bounds.

    ``undiscounted`` switches the constrained quantity from the asset price to
    the price multiplied by the money market.
    """

    lattice: ScenarioLattice
    constraints: tuple[MomentConstraint, ...]
    undiscounted: bool = False
    _cache: PolytopeLP | None = field(default=None, repr=False)
    _nonempty: bool | None = field(default=None, repr=False)

    def __post_init__(self):
        self.constraints = tuple(self.constraints)
        T = self.lattice.horizon
        neg = [c.exponent for c in self.constraints if c.exponent < 0]
        pos = [c.exponent for c in self.constraints if c.exponent > 0]
        if not neg or min(neg) >= -1:
            raise InvalidSpec("need a negative exponent below -1")
        if not pos or max(pos) <= 1:
            raise InvalidSpec("need a positive exponent above 1")
        for c in self.constraints:
            if c.exponent == 0:
                raise InvalidSpec("zero exponent constraint is vacuous")
            if len(c.bounds) != T:
                raise InvalidSpec(f"constraint needs {T} bounds, got {len(c.bounds)}")
            if any(b <= 0 for b in c.bounds):
                raise InvalidSpec("moment bounds must be positive")


@dataclass(eq=False)
class WassersteinBall:
    reference: Measure
    radius: float
    metric: MetricParams
    _cache: PolytopeLP | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidSpec(f"radius must be positive, got {self.radius}")

    @property
    def lattice(self) -> ScenarioLattice:
        return self.reference.lattice


@dataclass(eq=False)
class WassersteinPenalty:
    reference: Measure
    weight: float
    metric: MetricParams
    _cache: PolytopeLP | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.weight <= 0:
            raise InvalidSpec(f"penalty weight must be positive, got {self.weight}")

    @property
    def lattice(self) -> ScenarioLattice:
        return self.reference.lattice


AmbiguitySpec = FiniteHull | MomentSet | WassersteinBall | WassersteinPenalty


def _moment_values(amb: MomentSet, t: int) -> np.ndarray:
    pm = amb.lattice.path_matrix
    s = pm[:, t, 1]
    if amb.undiscounted:
        s = s * pm[:, t, 0]
    return s


def polytope(amb: AmbiguitySpec) -> PolytopeLP:
    """Build (and cache) the shared polyhedral description."""
    if amb._cache is not None:
        return amb._cache
    lat = amb.lattice
    n = lat.n_leaves

    if isinstance(amb, FiniteHull):
        k = len(amb.generators)
        p_map = np.column_stack([g.vector() for g in amb.generators])
        lp = PolytopeLP(k, p_map,
                        np.ones((1, k)), np.array([1.0]),
                        np.zeros((0, k)), np.zeros(0),
                        np.zeros(k))
    elif isinstance(amb, MomentSet):
        rows, rhs = [], []
        for c in amb.constraints:
            for t in range(1, lat.horizon + 1):
                rows.append(_moment_values(amb, t) ** c.exponent)
                rhs.append(c.bounds[t - 1])
        lp = PolytopeLP(n, np.eye(n),
                        np.ones((1, n)), np.array([1.0]),
                        np.array(rows), np.array(rhs),
                        np.zeros(n))
    else:
        ref = amb.reference
        sup_j = ref.support()
        j_idx = [lat.leaf_index[l] for l in sup_j]
        nj = len(sup_j)
        nv = n * nj
        p_map = np.zeros((n, nv))
        for i in range(n):
            p_map[i, i * nj:(i + 1) * nj] = 1.0
        a_eq = np.zeros((nj, nv))
        b_eq = np.empty(nj)
        for j in range(nj):
            a_eq[j, j::nj] = 1.0
            b_eq[j] = ref.weights[sup_j[j]]
        dpow = (cost_matrix(lat, amb.metric)[:, j_idx] ** amb.metric.p).ravel()
        if isinstance(amb, WassersteinBall):
            lp = PolytopeLP(nv, p_map, a_eq, b_eq,
                            dpow.reshape(1, -1),
                            np.array([amb.radius ** amb.metric.p]),
                            np.zeros(nv))
        else:
            lp = PolytopeLP(nv, p_map, a_eq, b_eq,
                            np.zeros((0, nv)), np.zeros(0),
                            amb.weight * dpow)
    amb._cache = lp
    return lp


# --- penalty ------------------------------------------------------------------


def alpha(amb: AmbiguitySpec, P: Measure) -> float:
    """Penalty of a candidate measure: indicator of membership for the hard
    variants, weighted coupling cost for the penalty variant."""
    if not P.lattice.same_as(amb.lattice):
        raise LatticeMismatch("measure lives on a different lattice")
    if isinstance(amb, WassersteinPenalty):
        w = wasserstein_p(amb.metric, P, amb.reference)
        return amb.weight * w.power_value
    return 0.0 if contains(amb, P, 1e-9).member else _INF


@dataclass
class MembershipResult:
    member: bool
    witness: str
    mixture: np.ndarray | None = None
    distance: float | None = None


def contains(amb: AmbiguitySpec, P: Measure, tol: float) -> MembershipResult:
    """Membership decision with a violated constraint or a representing
    mixture as witness."""
    if tol < 0:
        raise InvalidSpec("tolerance must be nonnegative")
    if not P.lattice.same_as(amb.lattice):
        raise LatticeMismatch("measure lives on a different lattice")

    if isinstance(amb, FiniteHull):
        # nearest point of the hull in l1 via an LP with absolute-value splits
        k = len(amb.generators)
        n = amb.lattice.n_leaves
        g = polytope(amb).p_map
        target = P.vector()
        c = np.concatenate([np.zeros(k), np.ones(2 * n)])
        a_eq = np.zeros((n + 1, k + 2 * n))
        a_eq[:n, :k] = g
        a_eq[:n, k:k + n] = -np.eye(n)
        a_eq[:n, k + n:] = np.eye(n)
        b_eq = np.concatenate([target, [1.0]])
        a_eq[n, :k] = 1.0
        sol = solve_lp(c, a_eq=a_eq, b_eq=b_eq)
        if sol.status != "optimal":
            raise LPFailure(f"hull membership LP ended {sol.status}")
        dist = float(sol.fun)
        if dist <= tol + 1e-10:
            return MembershipResult(True, "representing mixture found",
                                    mixture=sol.x[:k], distance=dist)
        return MembershipResult(False, f"l1 distance to hull {dist:.3e}",
                                distance=dist)

    if isinstance(amb, MomentSet):
        v = P.vector()
        for c in amb.constraints:
            for t in range(1, amb.lattice.horizon + 1):
                val = float(v @ _moment_values(amb, t) ** c.exponent)
                if val > c.bounds[t - 1] + tol:
                    return MembershipResult(
                        False, f"moment exponent {c.exponent} at t={t}: "
                               f"{val:.6g} > {c.bounds[t - 1]:.6g}")
        return MembershipResult(True, "all moment constraints hold")

    if isinstance(amb, WassersteinBall):
        w = wasserstein_p(amb.metric, P, amb.reference)
        if w.value <= amb.radius + tol:
            return MembershipResult(True, f"distance {w.value:.6g} within radius",
                                    distance=w.value)
        return MembershipResult(False,
                                f"distance {w.value:.6g} exceeds radius "
                                f"{amb.radius:.6g}", distance=w.value)

    w = wasserstein_p(amb.metric, P, amb.reference)
    return MembershipResult(True, f"penalty {amb.weight * w.power_value:.6g}",
                            distance=w.value)


# --- linear oracle --------------------------------------------------------


@dataclass
class InnerMinResult:
    value: float
    measure: Measure
    vars: np.ndarray
    lp_iterations: int = 0


def _as_cost_vector(amb: AmbiguitySpec, cost) -> np.ndarray:
    if isinstance(cost, Claim):
        if not cost.lattice.same_as(amb.lattice):
            raise LatticeMismatch("cost lives on a different lattice")
        return cost.vector()
    v = np.asarray(cost, dtype=float)
    if v.shape != (amb.lattice.n_leaves,):
        raise LatticeMismatch(f"cost vector has shape {v.shape}")
    return v


def inner_min(amb: AmbiguitySpec, cost) -> InnerMinResult:
    """Exact minimum of expected cost plus penalty over the ambiguity set."""
    c = _as_cost_vector(amb, cost)

    if isinstance(amb, FiniteHull):
        # linear over a simplex of generators: scan the vertices
        vals = [float(c @ g.vector()) for g in amb.generators]
        best = int(np.argmin(vals))
        mix = np.zeros(len(vals))
        mix[best] = 1.0
        return InnerMinResult(vals[best], amb.generators[best], mix)

    lp = polytope(amb)
    sol = solve_lp(c @ lp.p_map + lp.alpha_coef,
                   a_ub=lp.a_ub if lp.a_ub.size else None,
                   b_ub=lp.b_ub if lp.b_ub.size else None,
                   a_eq=lp.a_eq, b_eq=lp.b_eq)
    if sol.status == "infeasible":
        _raise_infeasible(amb)
    if sol.status != "optimal":
        raise LPFailure(f"inner oracle LP ended {sol.status}")
    p = Measure.from_vector(amb.lattice, lp.p_map @ sol.x)
    return InnerMinResult(float(sol.fun), p, sol.x, sol.iterations)


def _raise_infeasible(amb):
    if isinstance(amb, MomentSet):
        amb._nonempty = False
        raise InfeasibleSet("moment constraints admit no probability measure")
    raise InfeasibleSet("ambiguity set is empty")


def ensure_nonempty(amb: AmbiguitySpec):
    """Feasibility probe; the moment variant is the only one that can be empty."""
    if isinstance(amb, MomentSet):
        if amb._nonempty is None:
            inner_min(amb, np.zeros(amb.lattice.n_leaves))
            amb._nonempty = True
        elif not amb._nonempty:
            raise InfeasibleSet("moment constraints admit no probability measure")


def rebind(amb: AmbiguitySpec, pert) -> AmbiguitySpec:
    """Recreate the spec on a perturbation-enlarged lattice, re-embedding any
    reference measures through the perturbation's leaf map."""
    if isinstance(amb, FiniteHull):
        return FiniteHull(tuple(pert.embed_measure(g) for g in amb.generators))
    if isinstance(amb, MomentSet):
        return MomentSet(pert.lattice, amb.constraints, amb.undiscounted)
    if isinstance(amb, WassersteinBall):
        return WassersteinBall(pert.embed_measure(amb.reference),
                               amb.radius, amb.metric)
    return WassersteinPenalty(pert.embed_measure(amb.reference),
                              amb.weight, amb.metric)


# --- separable convex inner solver ---------------------------------------


@dataclass
class ConvexInnerResult:
    value: float
    lower_bound: float
    measure: Measure | None
    converged: bool
    cuts: int


def positive_member(amb: AmbiguitySpec):
    """A member maximizing the minimum leaf weight, with its variant
    variables; used to restore finiteness of divergence evaluations."""
    lp = polytope(amb)
    n = amb.lattice.n_leaves
    nv = lp.n_vars
    # vars: [variant vars, delta]
    c = np.zeros(nv + 1)
    c[-1] = -1.0
    pos_rows = np.hstack([-lp.p_map, np.ones((n, 1))])
    if lp.a_ub.size:
        a_ub = np.vstack([np.hstack([lp.a_ub, np.zeros((lp.a_ub.shape[0], 1))]),
                          pos_rows])
        b_ub = np.concatenate([lp.b_ub, np.zeros(n)])
    else:
        a_ub, b_ub = pos_rows, np.zeros(n)
    a_eq = np.hstack([lp.a_eq, np.zeros((lp.a_eq.shape[0], 1))])
    sol = solve_lp(c, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=lp.b_eq)
    if sol.status == "infeasible":
        _raise_infeasible(amb)
    if sol.status != "optimal":
        raise LPFailure(f"interior point LP ended {sol.status}")
    vars_pos = sol.x[:nv]
    return vars_pos, lp.p_map @ vars_pos


def convex_inner_min(amb: AmbiguitySpec, terms, tol: float = 1e-8,
                     max_cuts: int = 500, seed=None) -> ConvexInnerResult:
    """Minimize ``sum_l f_l(p_l) + penalty`` over the ambiguity set.

    ``terms`` maps leaf ids to ``(value_fn, slope_fn)`` pairs of one convex
    function of that leaf's weight.  The model is refined with Kelley cuts
    generated by the shared linear oracle geometry; supporting planes are
    taken at strictly positive points whenever a slope is unbounded at zero,
    which keeps every cut globally valid.  ``seed`` optionally provides leaf
    weights near the expected minimizer to warm the model.
    """
    lat = amb.lattice
    n = lat.n_leaves
    leaf_list = list(lat.leaf_ids)
    fval = [terms[l][0] for l in leaf_list]
    fslope = [terms[l][1] for l in leaf_list]

    if isinstance(amb, FiniteHull) and len(amb.generators) == 1:
        p = amb.generators[0].vector()
        val = _total_value(fval, p)
        return ConvexInnerResult(val, val, amb.generators[0], True, 0)

    lp = polytope(amb)
    start = inner_min(amb, np.zeros(n))
    cut_rows, cut_rhs = [], []
    slope_cap = 1e6

    def add_cut(p_point):
        # tangents are taken at grown points whenever the slope explodes at
        # the iterate itself; a supporting plane at any positive point stays
        # a global underestimate, so growing only loosens the model locally
        slopes = np.empty(n)
        offs = 0.0
        for i in range(n):
            pi = max(p_point[i], 0.0)
            s, v = fslope[i](pi), fval[i](pi)
            grow = 0
            while not (math.isfinite(s) and math.isfinite(v)
                       and abs(s) <= slope_cap):
                pi = max(pi * 8.0, 1e-12)
                s, v = fslope[i](pi), fval[i](pi)
                grow += 1
                if grow > 60:
                    raise LPFailure("cannot stabilize a cut slope")
            slopes[i] = s
            offs += v - s * pi
        cut_rows.append(np.concatenate([slopes @ lp.p_map, [-1.0]]))
        cut_rhs.append(-offs)

    start_p = start.measure.vector()
    add_cut(start_p)
    if seed is not None:
        add_cut(np.maximum(np.asarray(seed, dtype=float), 0.0))
    try:
        vars_pos, p_pos = positive_member(amb)
    except LPFailure:
        vars_pos, p_pos = start.vars, start_p
    alpha_pos = float(lp.alpha_coef @ vars_pos)
    add_cut(p_pos)

    best_val, best_vars, best_p = _INF, None, None
    lower = -_INF
    c_master = np.concatenate([lp.alpha_coef, [1.0]])
    it = 0
    while it < max_cuts:
        it += 1
        a_ub = np.array(cut_rows)
        if lp.a_ub.size:
            a_ub = np.vstack([np.hstack([lp.a_ub, np.zeros((lp.a_ub.shape[0], 1))]),
                              a_ub])
            b_ub = np.concatenate([lp.b_ub, cut_rhs])
        else:
            b_ub = np.array(cut_rhs)
        a_eq = np.hstack([lp.a_eq, np.zeros((lp.a_eq.shape[0], 1))])
        bounds = [(0.0, None)] * lp.n_vars + [(None, None)]
        sol = solve_lp(c_master, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=lp.b_eq,
                       bounds=bounds)
        if sol.status == "infeasible":
            _raise_infeasible(amb)
        if sol.status != "optimal":
            raise LPFailure(f"inner master LP ended {sol.status}")
        lower = max(lower, float(sol.fun))
        vars_k = sol.x[:lp.n_vars]
        p_k = lp.p_map @ vars_k
        alpha_k = float(lp.alpha_coef @ vars_k)
        true_val = _total_value(fval, p_k) + alpha_k
        if true_val < best_val:
            best_val, best_vars, best_p = true_val, vars_k, p_k
        if not math.isfinite(true_val):
            # mixing toward the interior member restores finiteness while
            # staying inside the set; the penalty term mixes convexly
            for delta in (1e-6, 1e-3, 1e-1):
                p_try = (1 - delta) * p_k + delta * p_pos
                v_try = _total_value(fval, p_try) \
                    + (1 - delta) * alpha_k + delta * alpha_pos
                if v_try < best_val:
                    best_val = v_try
                    best_vars = (1 - delta) * vars_k + delta * vars_pos
                    best_p = p_try
        if math.isfinite(best_val) \
                and best_val - lower <= tol * max(1.0, abs(best_val)):
            return ConvexInnerResult(best_val, lower,
                                     Measure.from_vector(lat, best_p), True, it)
        add_cut(np.maximum(p_k, 0.0))
        add_cut(0.7 * np.maximum(p_k, 0.0) + 0.3 * p_pos)

    meas = Measure.from_vector(lat, best_p) if best_p is not None else None
    return ConvexInnerResult(best_val, lower, meas, False, it)


def _total_value(fval, p):
    total = 0.0
    for i, f in enumerate(fval):
        v = f(max(p[i], 0.0))
        if not math.isfinite(v):
            return _INF
        total += v
    return total
