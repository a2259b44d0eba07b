"""Primal and dual solves for robust expected utility maximization.

The primal maximizes the concave map ``theta -> inf_P { E^P u(X + gains) +
penalty }`` by supergradient ascent with Polyak-sized steps, stabilized and
certified by a cutting-plane master over the strategy box.  The dual
minimizes the jointly convex objective ``scaled-martingale-part + divergence
+ penalty`` by cutting planes over the product of the zero-drift cone and the
ambiguity polytope; with uniform exponential utility and a zero penalty the
scale variable is eliminated in closed form and the dual collapses to an
entropic minimization over martingale measures.  Weak duality (primal value
never above any feasible dual certificate) is asserted unconditionally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ambiguity as amb_mod
from .ambiguity import (AmbiguitySpec, FiniteHull, MomentSet, WassersteinBall,
                        WassersteinPenalty, convex_inner_min, ensure_nonempty,
                        inner_min, polytope)
from .arbitrage import dual_cone, find_emm
from .errors import (InfeasibleAmbiguity, InfeasibleSet, LPFailure,
                     NotExponential, SolverError, UnboundedBelow,
                     WeakDualityViolation)
from .lattice import Claim, Measure, ScenarioLattice, Strategy
from .simplex import solve_lp
from .utility import (Conjugate, ExponentialUtility, UtilitySpec, eval_u,
                      positive_gain, u_prime_right)

_INF = float("inf")


@dataclass
class Problem:
    lattice: ScenarioLattice
    claim: Claim
    utility: UtilitySpec
    ambiguity: AmbiguitySpec
    primal_tol: float = 1e-6
    dual_tol: float = 1e-6
    max_iters: int = 600

    def __post_init__(self):
        if not self.claim.lattice.same_as(self.lattice):
            raise SolverError("claim lives on a different lattice")
        if not self.ambiguity.lattice.same_as(self.lattice):
            raise SolverError("ambiguity set lives on a different lattice")
        if self.primal_tol <= 0 or self.dual_tol <= 0:
            raise SolverError("tolerances must be positive")


@dataclass
class PrimalResult:
    value: float                  # best exactly evaluated objective
    upper_bound: float            # cutting-plane certificate on the maximum
    strategy: Strategy
    worst_measure: Measure
    status: str                   # "converged" | "not_converged" | "boundary"
    iterations: int
    box_radius: float
    trace: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.upper_bound - self.value

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class DualCertificate:
    q: float
    Q: Measure | None             # ignored when q == 0
    P: Measure
    value: float


@dataclass
class DualResult:
    certificate: DualCertificate
    lower_bound: float
    q_zero_value: float
    status: str
    iterations: int
    trace: list = field(default_factory=list)
    extra_certificates: list = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.certificate.value

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _gains_matrix(lat: ScenarioLattice) -> np.ndarray:
    return dual_cone(lat).a_node.T.copy()


def _u_vec(spec: UtilitySpec, lat: ScenarioLattice, x: np.ndarray) -> np.ndarray:
    return np.array([eval_u(spec, leaf, float(x[i]))
                     for i, leaf in enumerate(lat.leaf_ids)])


def _uprime_vec(spec, lat, x) -> np.ndarray:
    return np.array([u_prime_right(spec, leaf, float(x[i]))
                     for i, leaf in enumerate(lat.leaf_ids)])


# --- primal -------------------------------------------------------------------


def box_radius(prob: Problem) -> float:
    x_inf = float(np.abs(prob.claim.vector()).max(initial=0.0))
    min_step = prob.lattice.min_positive_increment()
    if min_step == 0.0:
        return 0.0
    return 10.0 * (x_inf + 1.0) / min_step


def solve_primal(prob: Problem) -> PrimalResult:
    """Worst-case utility maximization over box-bounded adapted strategies.

    With exponential utility and a zero penalty the ascent runs on the
    certainty-equivalent scale (the negative log of the negative objective),
    which is again concave but grows linearly in the strategy, so cut
    coefficients stay well scaled over the whole box.  Otherwise the raw
    objective is used and evaluations are confined to a growing trust region
    so that cuts are only generated where the utility has sane magnitude.
    """
    lat = prob.lattice
    ensure_nonempty(prob.ambiguity)
    x_vec = prob.claim.vector()
    gains = _gains_matrix(lat)
    live = np.abs(gains).sum(axis=0) > 0
    node_ids = [nid for k, nid in enumerate(lat.nonterminal_ids()) if live[k]]
    g_live = gains[:, live]
    d = g_live.shape[1]

    def finish(value, theta_live, p_hat, status, it, ub, trace):
        holdings = {nid: 0.0 for nid in lat.nonterminal_ids()}
        for j, nid in enumerate(node_ids):
            holdings[nid] = float(theta_live[j])
        return PrimalResult(value, ub, Strategy(lat, holdings), p_hat,
                            status, it, radius, trace)

    if d == 0:
        res = inner_min(prob.ambiguity, _u_vec(prob.utility, lat, x_vec))
        radius = 0.0
        return finish(res.value, np.zeros(0), res.measure, "converged", 0,
                      res.value, [])

    radius = box_radius(prob)
    log_mode = (isinstance(prob.utility, ExponentialUtility)
                and not isinstance(prob.ambiguity, WassersteinPenalty))
    lam_vec = None
    if isinstance(prob.utility, ExponentialUtility):
        lam_vec = np.array([prob.utility.lam_at(leaf)
                            for leaf in lat.leaf_ids])

    def oracle_raw(theta):
        w = g_live @ theta
        cost = _u_vec(prob.utility, lat, x_vec + w)
        res = inner_min(prob.ambiguity, cost)
        up = _uprime_vec(prob.utility, lat, x_vec + w)
        grad = g_live.T @ (res.measure.vector() * up)
        return res.value, grad, res.measure

    def oracle_log(theta):
        # score = -log(-F); exact for every zero-penalty variant because the
        # inner argmin is invariant under positive rescaling of the cost
        w = g_live @ theta
        expo = -lam_vec * (x_vec + w)
        shift = float(expo.max())
        cost_scaled = -np.exp(expo - shift)
        res = inner_min(prob.ambiguity, cost_scaled)
        pv = res.measure.vector()
        inner = float(pv @ np.exp(expo - shift))
        score = -(shift + math.log(inner))
        soft = pv * np.exp(expo - shift) / inner
        grad = g_live.T @ (soft * lam_vec)
        return score, grad, res.measure

    def to_value(score):
        if not log_mode:
            return score
        try:
            return -math.exp(-score)
        except OverflowError:
            return -_INF

    oracle = oracle_log if log_mode else oracle_raw
    rho = radius if log_mode else min(radius, 1.0 + float(np.abs(x_vec).max()))
    # interleaved Polyak steps help on smooth objectives; on piecewise-linear
    # ones the master point alone terminates finitely and the steps only zigzag
    use_polyak = isinstance(prob.utility, ExponentialUtility)

    cuts = []          # (score, grad, point)
    theta = np.zeros(d)
    best_val, best_theta, best_p = -_INF, theta.copy(), None
    ub = _INF
    trace = []
    it = 0
    status = "not_converged"
    while it < prob.max_iters:
        it += 1
        val, grad, p_hat = oracle(theta)
        improved = val > best_val
        if improved:
            best_val, best_theta, best_p = val, theta.copy(), p_hat
        if abs(val) <= 1e7 * (1.0 + abs(best_val)):
            cuts.append((val, grad.copy(), theta.copy()))

        if cuts:
            ub_master, theta_master = _primal_master(cuts, radius, d)
            ub = min(ub, ub_master)
        else:
            theta_master = np.zeros(d)
        gap = to_value(ub) - to_value(best_val)
        trace.append({"iteration": it, "lower": to_value(best_val),
                      "upper": to_value(ub), "gap": gap})
        if gap <= prob.primal_tol:
            status = "converged"
            break
        gnorm2 = float(grad @ grad)
        if gnorm2 <= 1e-24 and math.isfinite(val):
            ub = min(ub, val)
            status = "converged"
            break
        if not use_polyak or it % 2 == 0:
            nxt = theta_master
        else:
            step = (min(ub, val + 1.0) - val) / max(gnorm2, 1e-30)
            nxt = theta + step * grad
        clipped = np.clip(nxt, -rho, rho)
        if rho < radius and improved \
                and float(np.abs(clipped).max()) >= rho * (1 - 1e-12):
            rho = min(rho * 5.0, radius)
        theta = np.clip(nxt, -rho, rho)

    # local polish: exact steepest-ascent line searches sharpen the maximizer
    # well past the cut model's resolution (the model certifies values, not
    # points); concavity makes every section search unimodal
    n_polish = 3 if d <= 8 else 1
    for _ in range(n_polish):
        val, grad, p_hat = oracle(best_theta)
        if val > best_val:
            best_val, best_p = val, p_hat
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= 1e-13:
            break
        direction = grad / gnorm
        s_hi = _max_box_step(best_theta, direction, radius)
        if s_hi <= 1e-15:
            break
        s_star, v_star = _golden_max(
            lambda s: oracle(best_theta + s * direction)[0], 0.0, s_hi)
        if v_star > best_val:
            best_theta = best_theta + s_star * direction
            best_val = v_star
            _, _, best_p = oracle(best_theta)
    ub = max(ub, best_val)

    if status == "converged" and np.abs(best_theta).max(initial=0.0) >= radius * (1 - 1e-9):
        status = "boundary"
    return finish(to_value(best_val), best_theta, best_p, status, it,
                  to_value(ub), trace)


def _max_box_step(theta, direction, radius):
    s_hi = _INF
    for t, g in zip(theta, direction):
        if g > 1e-16:
            s_hi = min(s_hi, (radius - t) / g)
        elif g < -1e-16:
            s_hi = min(s_hi, (-radius - t) / g)
    return max(0.0, min(s_hi, 4.0 * radius))


def _golden_max(f, lo, hi, evals=64):
    """Deterministic golden-section maximization of a unimodal function."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d_pt = a + invphi * (b - a)
    fc, fd = f(c), f(d_pt)
    for _ in range(evals):
        if b - a < 1e-12 * (1.0 + abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d_pt, fd = d_pt, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d_pt, fd
            d_pt = a + invphi * (b - a)
            fd = f(d_pt)
    if fc >= fd:
        return c, fc
    return d_pt, fd


def _primal_master(cuts, radius, d):
    """max z s.t. z <= val_k + g_k (theta - theta_k), theta in the box."""
    k = len(cuts)
    c = np.zeros(d + 1)
    c[-1] = -1.0
    a_ub = np.zeros((k, d + 1))
    b_ub = np.zeros(k)
    for i, (val, g, pt) in enumerate(cuts):
        a_ub[i, :d] = -g
        a_ub[i, -1] = 1.0
        b_ub[i] = val - float(g @ pt)
    bounds = [(-radius, radius)] * d + [(None, None)]
    sol = solve_lp(c, a_ub=a_ub, b_ub=b_ub, bounds=bounds)
    if sol.status != "optimal":
        raise LPFailure(f"primal master LP ended {sol.status}")
    return -float(sol.fun), sol.x[:d]


def evaluate_strategy(prob: Problem, strategy: Strategy) -> tuple[float, Measure]:
    """Fresh inner minimization at a fixed strategy."""
    lat = prob.lattice
    gains = _gains_matrix(lat)
    theta = np.array([strategy.holdings.get(nid, 0.0)
                      for nid in lat.nonterminal_ids()])
    cost = _u_vec(prob.utility, lat, prob.claim.vector() + gains @ theta)
    res = inner_min(prob.ambiguity, cost)
    return res.value, res.measure


# --- dual ---------------------------------------------------------------------


def _is_entropic_eligible(prob: Problem) -> bool:
    u = prob.utility
    return (isinstance(u, ExponentialUtility) and u.uniform
            and not isinstance(prob.ambiguity, WassersteinPenalty))


def _q_zero_value(prob: Problem, conj: Conjugate) -> tuple[float, Measure | None]:
    """Explicit scale-zero branch: inf_P { E^P v(0) + penalty }."""
    lat = prob.lattice
    v0 = np.array([conj.v0(leaf) for leaf in lat.leaf_ids])
    if not np.isfinite(v0).all():
        return _INF, None
    res = inner_min(prob.ambiguity, v0)
    return res.value, res.measure


def _martingale_rows(lat: ScenarioLattice) -> np.ndarray:
    return dual_cone(lat).a_node


def _positive_clamp(v: np.ndarray, floor: float) -> np.ndarray:
    return np.maximum(v, floor)


@dataclass
class WarmStart:
    density: np.ndarray | None = None      # candidate scaled martingale part
    measure: Measure | None = None         # candidate worst-case measure


def warm_start_from_primal(prob: Problem, primal: PrimalResult) -> WarmStart:
    lat = prob.lattice
    gains = _gains_matrix(lat)
    theta = np.array([primal.strategy.holdings.get(nid, 0.0)
                      for nid in lat.nonterminal_ids()])
    w = gains @ theta
    up = _uprime_vec(prob.utility, lat, prob.claim.vector() + w)
    r = primal.worst_measure.vector() * up
    return WarmStart(density=r, measure=primal.worst_measure)


def solve_dual(prob: Problem, warm: WarmStart | None = None) -> DualResult:
    """Minimize over scaled martingale parts and ambiguity members jointly."""
    ensure_nonempty(prob.ambiguity)
    conj = Conjugate(prob.utility)
    if _is_entropic_eligible(prob):
        return _dual_entropic(prob, conj, warm)
    return _dual_general(prob, conj, warm)


def _feasible_martingale(lat: ScenarioLattice) -> Measure | None:
    return find_emm(Measure.uniform(lat))


def _dual_entropic(prob: Problem, conj: Conjugate, warm) -> DualResult:
    """Scale eliminated in closed form; minimize E^Q X + H(Q || set)/lam over
    the martingale polytope by cutting planes on the joint entropy."""
    lat = prob.lattice
    lam = prob.utility.lam
    n = lat.n_leaves
    x_vec = prob.claim.vector()
    b0, p0_meas = _q_zero_value(prob, conj)

    a_node = _martingale_rows(lat)
    lp = polytope(prob.ambiguity)
    nv = lp.n_vars

    q_feas = _feasible_martingale(lat)
    if q_feas is None:
        cert = DualCertificate(0.0, None, p0_meas, b0)
        return DualResult(cert, b0, b0, "converged", 0, [],
                          [cert])

    # master variables: [Q, pvars, z]
    n_all = n + nv + 1
    a_eq = np.zeros((a_node.shape[0] + 1 + lp.a_eq.shape[0], n_all))
    a_eq[:a_node.shape[0], :n] = a_node
    a_eq[a_node.shape[0], :n] = 1.0
    a_eq[a_node.shape[0] + 1:, n:n + nv] = lp.a_eq
    b_eq = np.concatenate([np.zeros(a_node.shape[0]), [1.0], lp.b_eq])
    base_ub_rows, base_ub_rhs = [], []
    if lp.a_ub.size:
        blk = np.zeros((lp.a_ub.shape[0], n_all))
        blk[:, n:n + nv] = lp.a_ub
        base_ub_rows = [blk]
        base_ub_rhs = [lp.b_ub]
    zrow = np.zeros(n_all)
    zrow[-1] = -1.0
    cut_rows, cut_rhs = [zrow], [0.0]     # entropy is nonnegative

    def add_cut(qbar, pbar):
        qbar = np.maximum(np.asarray(qbar, dtype=float), 1e-12)
        pbar = np.asarray(pbar, dtype=float)
        # keep the tangent ratio bounded so master rows stay well scaled
        pbar = np.maximum.reduce([pbar, qbar / 1e6,
                                  np.full_like(pbar, 1e-12)])
        ratio = qbar / pbar
        gq = np.log(ratio) + 1.0
        gp = -ratio
        h = float(np.sum(qbar * np.log(ratio)))
        row = np.zeros(n_all)
        row[:n] = gq
        row[n:n + nv] = gp @ lp.p_map
        row[-1] = -1.0
        cut_rows.append(row)
        cut_rhs.append(-(h - gq @ qbar - gp @ pbar))

    uniform = np.full(n, 1.0 / n)
    p_start = inner_min(prob.ambiguity, np.zeros(n))
    try:
        _, p_pos = amb_mod.positive_member(prob.ambiguity)
    except Exception:
        p_pos = p_start.measure.vector()
    seeds = [(q_feas.vector(), p_start.measure.vector()),
             (q_feas.vector(), p_pos)]
    if warm is not None and warm.density is not None and warm.density.sum() > 0:
        seeds.append((warm.density / warm.density.sum(),
                      warm.measure.vector()))
    for qs, ps in seeds:
        add_cut(_positive_clamp(0.98 * qs + 0.02 * uniform, 1e-12),
                _positive_clamp(0.98 * ps + 0.02 * uniform, 1e-12))

    c_master = np.concatenate([x_vec, np.zeros(nv), [1.0 / lam]])
    bounds = [(0.0, None)] * (n + nv) + [(None, None)]

    def cheap_upper(q_k, p_k):
        """The master pair is feasible; mixing toward the full-support member
        keeps it feasible and makes the entropy finite."""
        best = (_INF, None)
        for delta in (0.0, 1e-7, 1e-4, 1e-2):
            p_try = (1 - delta) * p_k + delta * p_pos
            h = _rel_entropy(q_k, p_try)
            if math.isfinite(h):
                val = float(x_vec @ q_k) + h / lam
                if val < best[0]:
                    best = (val, p_try)
        return best

    best_w, best_q, best_p = _INF, None, None
    lb_w = -_INF
    trace = []
    floor = 1e-4
    status = "not_converged"
    it = 0
    while it < prob.max_iters:
        it += 1
        a_ub = np.vstack(base_ub_rows + [np.array(cut_rows)])
        b_ub = np.concatenate(base_ub_rhs + [np.array(cut_rhs)])
        sol = solve_lp(c_master, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq,
                       bounds=bounds)
        if sol.status == "unbounded":
            raise UnboundedBelow("entropic dual master unbounded")
        if sol.status != "optimal":
            raise LPFailure(f"dual master LP ended {sol.status}")
        lb_w = max(lb_w, float(sol.fun))
        q_k = sol.x[:n]
        p_k = lp.p_map @ sol.x[n:n + nv]

        ub_here, p_here = cheap_upper(q_k, p_k)
        if math.isfinite(ub_here) and ub_here < best_w:
            best_w = ub_here
            best_q = q_k.copy()
            best_p = p_here.copy()

        d_ub = _entropic_transform(lam, best_w)
        d_lb = _entropic_transform(lam, lb_w)
        trace.append({"iteration": it, "lower": d_lb, "upper": d_ub,
                      "gap": d_ub - d_lb})
        if d_ub - d_lb <= prob.dual_tol:
            status = "converged"
            break

        add_cut(_positive_clamp(q_k, 1e-12),
                _positive_clamp(p_k, 1e-12))
        if (q_k < floor).any() or (p_k < floor).any():
            add_cut(_positive_clamp(q_k, floor), _positive_clamp(p_k, floor))
            floor = max(floor * 0.2, 1e-12)

    extra = []
    if best_q is None:
        cert = DualCertificate(0.0, None, p0_meas, b0)
        return DualResult(cert, min(_entropic_transform(lam, lb_w), b0), b0,
                          status, it, trace, [cert])

    # one exact inner minimization polishes the worst-case member
    res = _entropy_repair(prob.ambiguity, best_q, seed=best_p)
    if res is not None:
        g_val, p_hat = res
        w_rep = float(x_vec @ best_q) + g_val / lam
        if w_rep < best_w:
            best_w, best_p = w_rep, p_hat

    h_star = _rel_entropy(best_q, best_p)
    s_star = float(x_vec @ best_q) + h_star / lam
    q_scale = lam * math.exp(-lam * s_star)
    value_q = -math.exp(-lam * s_star)
    q_meas = Measure.from_vector(lat, best_q)
    p_meas = Measure.from_vector(lat, best_p)
    cert_q = DualCertificate(q_scale, q_meas, p_meas, value_q)
    extra.append(cert_q)
    if p0_meas is not None:
        extra.append(DualCertificate(0.0, None, p0_meas, b0))
    cert = cert_q if value_q <= b0 else DualCertificate(0.0, None, p0_meas, b0)
    lower = min(_entropic_transform(lam, lb_w), b0)
    return DualResult(cert, lower, b0, status, it, trace, extra)


def _entropic_transform(lam: float, w: float) -> float:
    if w == _INF:
        return 0.0
    if w == -_INF:
        return -_INF
    try:
        return -math.exp(-lam * w)
    except OverflowError:
        return -_INF


def _rel_entropy(q: np.ndarray, p: np.ndarray) -> float:
    total = 0.0
    for qi, pi in zip(q, p):
        if qi <= 1e-15:
            continue
        if pi <= 0.0:
            return _INF
        total += qi * math.log(qi / pi)
    return total


def _entropy_repair(amb: AmbiguitySpec, q: np.ndarray, tol: float = 1e-9,
                    seed=None):
    """Exact inner minimization of H(q || p) + penalty over the set."""
    lat = amb.lattice
    terms = {}
    for i, leaf in enumerate(lat.leaf_ids):
        qi = float(q[i])
        if qi <= 1e-15:
            terms[leaf] = (lambda p: 0.0, lambda p: 0.0)
        else:
            terms[leaf] = (
                lambda p, qi=qi: (qi * math.log(qi / p) if p > 0 else _INF),
                lambda p, qi=qi: (-qi / p if p > 0 else -_INF))
    res = convex_inner_min(amb, terms, tol=tol, max_cuts=160, seed=seed)
    if res.measure is None or not math.isfinite(res.value):
        return None
    return res.value, res.measure.vector()


def _dual_general(prob: Problem, conj: Conjugate, warm) -> DualResult:
    """Joint cutting planes over the scaled martingale cone and the set."""
    lat = prob.lattice
    n = lat.n_leaves
    x_vec = prob.claim.vector()
    b0, p0_meas = _q_zero_value(prob, conj)

    a_node = _martingale_rows(lat)
    lp = polytope(prob.ambiguity)
    nv = lp.n_vars
    q_max = 1e7

    q_feas = _feasible_martingale(lat)
    if q_feas is None:
        if p0_meas is None:
            raise UnboundedBelow("no feasible dual point exists")
        cert = DualCertificate(0.0, None, p0_meas, b0)
        return DualResult(cert, b0, b0, "converged", 0, [], [cert])

    # master variables: [r, pvars, z]
    n_all = n + nv + 1
    a_eq = np.zeros((a_node.shape[0] + lp.a_eq.shape[0], n_all))
    a_eq[:a_node.shape[0], :n] = a_node
    a_eq[a_node.shape[0]:, n:n + nv] = lp.a_eq
    b_eq = np.concatenate([np.zeros(a_node.shape[0]), lp.b_eq])
    base_rows, base_rhs = [], []
    if lp.a_ub.size:
        blk = np.zeros((lp.a_ub.shape[0], n_all))
        blk[:, n:n + nv] = lp.a_ub
        base_rows.append(blk)
        base_rhs.append(lp.b_ub)
    mass_row = np.zeros(n_all)
    mass_row[:n] = 1.0
    base_rows.append(mass_row.reshape(1, -1))
    base_rhs.append(np.array([q_max]))

    cut_rows, cut_rhs = [], []

    def cut_points(ratio):
        """One utility evaluation point per leaf, with the slope argument
        backed off geometrically until the row coefficients are tame; every
        evaluation point yields a valid supporting plane."""
        xs = np.empty(n)
        for i, leaf in enumerate(lat.leaf_ids):
            y = min(max(float(ratio[i]), 1e-12), 1e6)
            for _ in range(40):
                x_i = conj.argmax_x(leaf, y)
                u_i = eval_u(prob.utility, leaf, x_i)
                if abs(x_i) <= 1e8 and abs(u_i) <= 1e8:
                    break
                y = max(y * 0.2, 1e-12)
            xs[i] = x_i
        return xs

    def add_cut_from_x(x_by_leaf):
        """Supporting plane of the divergence from one utility evaluation
        point per leaf; valid everywhere by the conjugate inequality:
        z >= sum_l [ u(x_l) p_l - x_l r_l ]."""
        row = np.zeros(n_all)
        u_at = np.array([eval_u(prob.utility, leaf, float(x_by_leaf[i]))
                         for i, leaf in enumerate(lat.leaf_ids)])
        row[:n] = -x_by_leaf
        row[n:n + nv] = u_at @ lp.p_map
        row[-1] = -1.0
        cut_rows.append(row)
        cut_rhs.append(0.0)

    for q_seed in np.concatenate([[1e-12], np.logspace(-4, 4, 33)]):
        add_cut_from_x(cut_points(np.full(n, q_seed)))
    if warm is not None and warm.density is not None and warm.measure is not None:
        pv = warm.measure.vector()
        ratio = np.where(pv > 1e-12, warm.density / np.maximum(pv, 1e-12), 1.0)
        add_cut_from_x(cut_points(ratio))

    c_master = np.concatenate([x_vec, lp.alpha_coef, [1.0]])
    bounds = [(0.0, None)] * (n + nv) + [(None, None)]

    def pers_sum(r, p):
        total = 0.0
        for i, leaf in enumerate(lat.leaf_ids):
            v = conj.perspective(leaf, max(float(r[i]), 0.0),
                                 max(float(p[i]), 0.0))
            if not math.isfinite(v):
                return _INF
            total += v
        return total

    try:
        pvars_pos, p_pos = amb_mod.positive_member(prob.ambiguity)
    except Exception:
        start = inner_min(prob.ambiguity, np.zeros(n))
        pvars_pos, p_pos = start.vars, start.measure.vector()
    alpha_pos = float(lp.alpha_coef @ pvars_pos)

    def cheap_upper(r_k, pvars_k, alpha_k, p_k):
        best = (_INF, None)
        for delta in (0.0, 1e-7, 1e-4, 1e-2):
            p_try = (1 - delta) * p_k + delta * p_pos
            val = pers_sum(r_k, p_try)
            if math.isfinite(val):
                total = (float(x_vec @ r_k) + val
                         + (1 - delta) * alpha_k + delta * alpha_pos)
                if total < best[0]:
                    best = (total, p_try)
        return best

    best_val, best_r, best_p = _INF, None, None
    lb = -_INF
    trace = []
    status = "not_converged"
    it = 0
    while it < prob.max_iters:
        it += 1
        a_ub = np.vstack(base_rows + [np.array(cut_rows)])
        b_ub = np.concatenate(base_rhs + [np.array(cut_rhs)])
        sol = solve_lp(c_master, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq,
                       bounds=bounds)
        if sol.status == "unbounded":
            raise UnboundedBelow("dual master unbounded")
        if sol.status != "optimal":
            raise LPFailure(f"dual master LP ended {sol.status}")
        lb = max(lb, float(sol.fun))
        r_k = sol.x[:n]
        pvars_k = sol.x[n:n + nv]
        p_k = lp.p_map @ pvars_k
        alpha_k = float(lp.alpha_coef @ pvars_k)

        val_here, p_here = cheap_upper(r_k, pvars_k, alpha_k, p_k)
        if math.isfinite(val_here) and val_here < best_val:
            best_val, best_r, best_p = val_here, r_k.copy(), p_here.copy()

        ub_all = min(best_val, b0)
        lb_all = min(lb, b0)
        trace.append({"iteration": it, "lower": lb_all, "upper": ub_all,
                      "gap": ub_all - lb_all})
        if ub_all - lb_all <= prob.dual_tol:
            status = "converged"
            break

        ratio = r_k / np.maximum.reduce([p_k, r_k / 1e6,
                                         np.full(n, 1e-12)])
        add_cut_from_x(cut_points(ratio))

    if best_r is not None:
        rep = _divergence_repair(prob.ambiguity, conj, lat, best_r,
                                 tol=max(0.2 * prob.dual_tol, 1e-10),
                                 seed=best_p)
        if rep is not None:
            val_rep = float(x_vec @ best_r) + rep[0]
            if val_rep < best_val:
                best_val, best_p = val_rep, rep[1]

    if best_r is not None and float(best_r.sum()) >= q_max * 0.99:
        status = "not_converged"

    extra = []
    if p0_meas is not None and math.isfinite(b0):
        extra.append(DualCertificate(0.0, None, p0_meas, b0))
    if best_r is None or b0 <= best_val:
        cert = DualCertificate(0.0, None, p0_meas, b0)
    else:
        q_scale = float(best_r.sum())
        if q_scale > 1e-12:
            q_meas = Measure.from_vector(lat, best_r / q_scale)
            cert = DualCertificate(q_scale, q_meas,
                                   Measure.from_vector(lat, best_p), best_val)
        else:
            cert = DualCertificate(0.0, None,
                                   Measure.from_vector(lat, best_p), best_val)
        extra.append(cert)
    return DualResult(cert, min(lb, b0), b0, status, it, trace, extra)


def _divergence_repair(amb, conj: Conjugate, lat, r: np.ndarray,
                       tol: float = 1e-8, seed=None):
    """Exact inner minimization of the divergence perspective plus penalty."""
    terms = {}
    for i, leaf in enumerate(lat.leaf_ids):
        ri = max(float(r[i]), 0.0)
        terms[leaf] = (
            lambda p, leaf=leaf, ri=ri: conj.perspective(leaf, ri, p),
            lambda p, leaf=leaf, ri=ri: (
                conj.perspective_grad(leaf, ri, p)[2] if p > 0
                else (0.0 if ri <= 1e-15 else -_INF)))
    res = convex_inner_min(amb, terms, tol=tol, max_cuts=160, seed=seed)
    if res.measure is None or not math.isfinite(res.value):
        return None
    return res.value, res.measure.vector()


# --- certificates and reports -------------------------------------------------


def certificate_value(prob: Problem, cert: DualCertificate) -> float:
    """Recompute q E^Q X + divergence + penalty from scratch."""
    from .utility import divergence_Dv
    conj = Conjugate(prob.utility)
    pen = amb_mod.alpha(prob.ambiguity, cert.P)
    if cert.q == 0.0 or cert.Q is None:
        v0 = sum(w * conj.v0(leaf) for leaf, w in cert.P.weights.items())
        return v0 + pen
    ex = sum(w * prob.claim.values.get(leaf, 0.0)
             for leaf, w in cert.Q.weights.items())
    return cert.q * ex + divergence_Dv(conj, cert.q, cert.Q, cert.P) + pen


def martingale_residual(lat: ScenarioLattice, Q: Measure) -> float:
    a_node = _martingale_rows(lat)
    return float(np.abs(a_node @ Q.vector()).max(initial=0.0))


@dataclass
class GapReport:
    primal: PrimalResult
    dual: DualResult
    primal_value: float
    dual_value: float
    abs_gap: float
    rel_gap: float
    weak_duality_ok: bool

    @property
    def converged(self) -> bool:
        return self.primal.converged and self.dual.converged


def duality_gap(prob: Problem, strict_weak: bool = True) -> GapReport:
    """Run both solves and certify the gap; the weak-duality assertion is made
    regardless of convergence status."""
    primal = solve_primal(prob)
    warm = warm_start_from_primal(prob, primal)
    dual = solve_dual(prob, warm)
    u_val, d_val = primal.value, dual.value
    weak_ok = u_val <= d_val + 1e-9
    for cert in dual.extra_certificates:
        if math.isfinite(cert.value):
            weak_ok = weak_ok and (u_val <= cert.value + 1e-9)
    if strict_weak and not weak_ok:
        raise WeakDualityViolation(
            f"primal {u_val!r} exceeds a dual certificate")
    return GapReport(primal, dual, u_val, d_val,
                     abs(d_val - u_val),
                     abs(d_val - u_val) / (1.0 + abs(u_val)),
                     weak_ok)


@dataclass
class EntropicResult:
    dual_value: float              # certainty-equivalent from the dual side
    primal_value: float            # log transform of the primal optimum
    martingale: Measure | None
    worst_measure: Measure | None
    relative_entropy: float
    primal_result: PrimalResult
    dual_result: DualResult

    @property
    def spread(self) -> float:
        return abs(self.dual_value - self.primal_value)


def entropic_value(prob: Problem) -> EntropicResult:
    """Certainty-equivalent solve for uniform exponential utility and
    zero-penalty ambiguity: dual over martingale measures with a relative
    entropy charge, cross-reported against the log transform of the primal."""
    u = prob.utility
    if not isinstance(u, ExponentialUtility) or not u.uniform:
        raise NotExponential("uniform exponential utility required")
    if isinstance(prob.ambiguity, WassersteinPenalty):
        raise NotExponential("entropic form needs a zero penalty variant")
    lam = u.lam
    primal = solve_primal(prob)
    warm = warm_start_from_primal(prob, primal)
    dual = _dual_entropic(prob, Conjugate(u), warm)
    cert = dual.certificate
    if cert.q > 0 and cert.Q is not None:
        h = _rel_entropy(cert.Q.vector(), cert.P.vector())
        ex = float(cert.Q.vector() @ prob.claim.vector())
        w_dual = ex + h / lam
    else:
        h, w_dual = _INF, _INF
    w_primal = -math.log(-primal.value) / lam if primal.value < 0 else _INF
    return EntropicResult(w_dual, w_primal, cert.Q, cert.P, h, primal, dual)


@dataclass
class BiconjugateReport:
    monotone_ok: bool
    convex_ok: bool
    fenchel_ok: bool
    max_fenchel_violation: float
    certificate_gap: float | None
    tightest_label: str

    @property
    def passed(self) -> bool:
        return self.monotone_ok and self.convex_ok and self.fenchel_ok


def biconjugate_check(prob: Problem, n_claims: int = 10, seed: int = 0,
                      n_measures: int = 8) -> BiconjugateReport:
    """Audit the increasing convex functional phi(Y) = -U(-Y).

    Monotonicity and midpoint convexity are checked on sampled claim pairs;
    the conjugate bound is checked with the conjugate estimated by maximizing
    over the same claim grid, and the scaled martingale part of a converged
    dual certificate is replayed as a candidate maximizer.
    """
    lat = prob.lattice
    rng = np.random.default_rng(seed)
    n = lat.n_leaves
    scale = 1.0 + float(np.abs(prob.claim.vector()).max(initial=0.0))

    grid = [Claim.constant(lat, c) for c in np.linspace(-scale, scale, 5)]
    grid += [Claim.from_vector(lat, rng.uniform(-scale, scale, n))
             for _ in range(n_claims - 5)]
    grid.append(Claim.from_vector(lat, -prob.claim.vector()))

    def phi(y: Claim) -> float:
        sub = Problem(lat, Claim.from_vector(lat, -y.vector()), prob.utility,
                      prob.ambiguity, prob.primal_tol, prob.dual_tol,
                      prob.max_iters)
        return -solve_primal(sub).value

    phi_vals = [phi(y) for y in grid]

    monotone_ok = True
    convex_ok = True
    for _ in range(min(6, len(grid))):
        i, j = rng.integers(0, len(grid), 2)
        yi, yj = grid[i].vector(), grid[j].vector()
        lo = Claim.from_vector(lat, np.minimum(yi, yj))
        hi = Claim.from_vector(lat, np.maximum(yi, yj))
        plo, phi_hi = phi(lo), phi(hi)
        if plo > phi_hi + 1e-7:
            monotone_ok = False
        mid = Claim.from_vector(lat, 0.5 * (yi + yj))
        if phi(mid) > 0.5 * (phi_vals[i] + phi_vals[j]) + 1e-7:
            convex_ok = False

    # sampled nonnegative functionals mu = q * (measure)
    measures = []
    for _ in range(n_measures):
        q = float(rng.uniform(0.1, 2.0))
        w = rng.dirichlet(np.ones(n))
        measures.append(q * w)

    def conj_est(mu):
        return max(float(mu @ y.vector()) - pv
                   for y, pv in zip(grid, phi_vals))

    worst = 0.0
    for mu in measures:
        ce = conj_est(mu)
        for y, pv in zip(grid, phi_vals):
            viol = (float(mu @ y.vector()) - ce) - pv
            worst = max(worst, viol)
    fenchel_ok = worst <= 1e-7

    cert_gap = None
    label = "grid"
    dual = solve_dual(prob, None)
    cert = dual.certificate
    if cert.q > 0 and cert.Q is not None:
        mu_cert = cert.q * cert.Q.vector()
        y_star = Claim.from_vector(lat, -prob.claim.vector())
        phi_star = phi(y_star)
        # the conjugate of phi at the scaled martingale part is the
        # divergence-plus-penalty term of the certificate
        conj_exact = certificate_value(prob, cert) - cert.q * float(
            cert.Q.vector() @ prob.claim.vector())
        attained = float(mu_cert @ y_star.vector()) - conj_exact
        cert_gap = abs(phi_star - attained)
        label = "dual certificate"
    return BiconjugateReport(monotone_ok, convex_ok, fenchel_ok, worst,
                             cert_gap, label)
