"""Random utility functions, exact convex conjugates and divergences.

Two utility families ship: the exponential family, whose conjugate has a
closed form, and tabulated concave piecewise-linear utilities with a declared
tail behaviour, whose conjugate reduces to an exact maximum over knots plus an
optional closed-form tail point.  Both may vary per path through a parameter
map keyed by leaf id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec, LatticeMismatch, NegativeSlope
from .lattice import Measure

_INF = float("inf")


@dataclass(frozen=True)
class ExponentialUtility:
    """u(x) = -exp(-lam * x); ``per_leaf`` overrides the risk aversion per path."""

    lam: float
    per_leaf: dict[int, float] | None = None

    def __post_init__(self):
        if self.lam <= 0 or not math.isfinite(self.lam):
            raise InvalidSpec(f"risk aversion must be positive, got {self.lam}")
        if self.per_leaf:
            for leaf, lv in self.per_leaf.items():
                if lv <= 0 or not math.isfinite(lv):
                    raise InvalidSpec(f"risk aversion {lv} on leaf {leaf}")

    def lam_at(self, leaf) -> float:
        if self.per_leaf and leaf in self.per_leaf:
            return self.per_leaf[leaf]
        return self.lam

    @property
    def uniform(self) -> bool:
        return not self.per_leaf or all(v == self.lam for v in self.per_leaf.values())


@dataclass(frozen=True)
class LeftTail:
    """Extension below the first knot: ``linear`` keeps the stated slope,
    ``power`` subtracts coef*(x0-x)**power, superlinear for power > 1."""

    kind: str = "linear"
    coef: float = 1.0
    power: float = 2.0

    def __post_init__(self):
        if self.kind not in ("linear", "power"):
            raise InvalidSpec(f"unknown tail kind {self.kind!r}")
        if self.kind == "power" and (self.coef <= 0 or self.power <= 1):
            raise InvalidSpec("power tail needs coef > 0 and power > 1")


@dataclass(frozen=True)
class TabulatedUtility:
    """Piecewise-linear concave utility from knots (x_i, u_i).

    ``left_slope`` applies below the first knot (optionally bent down by the
    superlinear tail), ``right_slope`` above the last.  Construction validates
    structure only; economic conditions are audited by ``check_conditions``.
    """

    knots: tuple[tuple[float, float], ...]
    left_slope: float
    right_slope: float = 0.0
    left_tail: LeftTail = field(default_factory=LeftTail)
    per_leaf: dict[int, tuple[tuple[float, float], ...]] | None = None

    def __post_init__(self):
        for ks in self._all_knot_sets():
            if len(ks) < 1:
                raise InvalidSpec("need at least one knot")
            xs = [k[0] for k in ks]
            if any(not (math.isfinite(x) and math.isfinite(u)) for x, u in ks):
                raise InvalidSpec("non-finite knot")
            if any(b - a <= 0 for a, b in zip(xs, xs[1:])):
                raise InvalidSpec("knot abscissae must be strictly increasing")
        if self.right_slope < 0:
            raise InvalidSpec("right slope must be nonnegative")
        if self.left_slope < 0:
            raise InvalidSpec("left slope must be nonnegative")

    def _all_knot_sets(self):
        yield self.knots
        if self.per_leaf:
            yield from self.per_leaf.values()

    def knots_at(self, leaf):
        if self.per_leaf and leaf in self.per_leaf:
            return self.per_leaf[leaf]
        return self.knots


UtilitySpec = ExponentialUtility | TabulatedUtility


# --- pointwise evaluation -----------------------------------------------------


def eval_u(spec: UtilitySpec, leaf, x: float) -> float:
    """u(omega, x) for the path of ``leaf`` (None evaluates default parameters)."""
    if isinstance(spec, ExponentialUtility):
        lam = spec.lam_at(leaf)
        try:
            return -math.exp(-lam * x)
        except OverflowError:
            return -_INF
    ks = spec.knots_at(leaf)
    xs = [k[0] for k in ks]
    us = [k[1] for k in ks]
    if x < xs[0]:
        base = us[0] + spec.left_slope * (x - xs[0])
        if spec.left_tail.kind == "power":
            base -= spec.left_tail.coef * (xs[0] - x) ** spec.left_tail.power
        return base
    if x >= xs[-1]:
        return us[-1] + spec.right_slope * (x - xs[-1])
    import bisect
    i = bisect.bisect_right(xs, x) - 1
    w = (x - xs[i]) / (xs[i + 1] - xs[i])
    return us[i] * (1 - w) + us[i + 1] * w


def u_prime_right(spec: UtilitySpec, leaf, x: float) -> float:
    """Right derivative of u in x; the supergradient selection at kinks."""
    if isinstance(spec, ExponentialUtility):
        lam = spec.lam_at(leaf)
        try:
            return lam * math.exp(-lam * x)
        except OverflowError:
            return 1e300
    ks = spec.knots_at(leaf)
    xs = [k[0] for k in ks]
    us = [k[1] for k in ks]
    if x < xs[0]:
        slope = spec.left_slope
        if spec.left_tail.kind == "power":
            slope += spec.left_tail.coef * spec.left_tail.power \
                * (xs[0] - x) ** (spec.left_tail.power - 1.0)
        return slope
    if x >= xs[-1]:
        return spec.right_slope
    import bisect
    i = bisect.bisect_right(xs, x) - 1
    return (us[i + 1] - us[i]) / (xs[i + 1] - xs[i])


def sup_u(spec: UtilitySpec, leaf) -> float:
    """sup_x u(omega, x); this is v(omega, 0)."""
    if isinstance(spec, ExponentialUtility):
        return 0.0
    ks = spec.knots_at(leaf)
    return _INF if spec.right_slope > 0 else ks[-1][1]


def positive_gain(spec: UtilitySpec, leaf) -> float:
    """sup_{x >= 0} u(omega, x) - u(omega, 0)."""
    if isinstance(spec, ExponentialUtility):
        return 1.0
    u0 = eval_u(spec, leaf, 0.0)
    ks = spec.knots_at(leaf)
    best = eval_u(spec, leaf, max(ks[-1][0], 0.0))
    if spec.right_slope > 0:
        return _INF
    return max(best - u0, 0.0)


# --- conjugate ----------------------------------------------------------------


class Conjugate:
    """Exact convex conjugate v(omega, y) = sup_x { u(omega, x) - x y }."""

    def __init__(self, spec: UtilitySpec):
        self.spec = spec

    def value(self, leaf, y: float) -> float:
        if y < 0:
            raise NegativeSlope(f"conjugate argument must be >= 0, got {y}")
        spec = self.spec
        if isinstance(spec, ExponentialUtility):
            if y == 0.0:
                return 0.0
            lam = spec.lam_at(leaf)
            return (y / lam) * (math.log(y / lam) - 1.0)
        return self._tab_value_argmax(leaf, y)[0]

    def argmax_x(self, leaf, y: float) -> float:
        """A maximizer of u(x) - xy; finite whenever the supremum is."""
        if y < 0:
            raise NegativeSlope(f"conjugate argument must be >= 0, got {y}")
        spec = self.spec
        if isinstance(spec, ExponentialUtility):
            lam = spec.lam_at(leaf)
            y = max(y, 1e-300)
            return -math.log(y / lam) / lam
        return self._tab_value_argmax(leaf, y)[1]

    def _tab_value_argmax(self, leaf, y):
        spec = self.spec
        ks = spec.knots_at(leaf)
        if y < spec.right_slope - 1e-15:
            return _INF, _INF
        best_v, best_x = -_INF, ks[0][0]
        for x, u in ks:
            cand = u - x * y
            if cand > best_v:
                best_v, best_x = cand, x
        if y > spec.left_slope:
            x0, u0 = ks[0]
            if spec.left_tail.kind == "linear":
                return _INF, -_INF
            # stationary point of the superlinear tail minus xy
            tail = spec.left_tail
            z = ((y - spec.left_slope) / (tail.coef * tail.power)) ** (1.0 / (tail.power - 1.0))
            x_star = x0 - z
            cand = eval_u(spec, leaf, x_star) - x_star * y
            if cand > best_v:
                best_v, best_x = cand, x_star
        return best_v, best_x

    def derivative(self, leaf, y: float) -> float:
        """v'(y); equals minus a maximizing x."""
        return -self.argmax_x(leaf, y)

    def v0(self, leaf) -> float:
        return sup_u(self.spec, leaf)

    # -- perspective ----------------------------------------------------

    def perspective(self, leaf, r: float, p: float) -> float:
        """p * v(r / p) extended by its closure at p = 0."""
        if p < 0 or r < -1e-15:
            raise NegativeSlope("perspective needs r >= 0 and p >= 0")
        if p <= 0.0:
            return 0.0 if r <= 1e-15 else _INF
        return p * self.value(leaf, max(r, 0.0) / p)

    def perspective_grad(self, leaf, r: float, p: float):
        """(value, d/dr, d/dp) at an interior point p > 0.

        The gradient doubles as coefficients of a supporting plane, valid on
        the whole nonnegative orthant by convexity.
        """
        if p <= 0:
            raise NegativeSlope("gradient only at p > 0")
        y = max(r, 0.0) / p
        x_star = self.argmax_x(leaf, y)
        val = self.perspective(leaf, r, p)
        return val, -x_star, eval_u(self.spec, leaf, x_star)


def conjugate_v(conj: Conjugate, leaf, y: float) -> float:
    return conj.value(leaf, y)


# --- divergences ----------------------------------------------------------


def divergence_Dv(conj: Conjugate, q: float, Q: Measure, P: Measure) -> float:
    """E^P v(q dQ/dP), infinite unless q Q is absolutely continuous wrt P."""
    if q < 0:
        raise NegativeSlope(f"scale must be >= 0, got {q}")
    if not Q.lattice.same_as(P.lattice):
        raise LatticeMismatch("measures live on different lattices")
    if q > 0:
        for leaf, w in Q.weights.items():
            if w > 0 and P.weights.get(leaf, 0.0) <= 0:
                return _INF
    total = 0.0
    for leaf, pw in P.weights.items():
        if pw <= 0:
            continue
        ratio = q * Q.weights.get(leaf, 0.0) / pw
        total += pw * conj.value(leaf, ratio)
    return total


def robust_divergence(conj: Conjugate, q: float, Q: Measure, amb) -> float:
    """inf over the ambiguity set of the divergence plus penalty."""
    if q < 0:
        raise NegativeSlope(f"scale must be >= 0, got {q}")
    from .ambiguity import convex_inner_min
    lat = Q.lattice
    qq = {leaf: q * Q.weights.get(leaf, 0.0) for leaf in lat.leaf_ids}

    def term(leaf):
        r = qq[leaf]
        return (lambda p, leaf=leaf, r=r: conj.perspective(leaf, r, p),
                lambda p, leaf=leaf, r=r: conj.perspective_grad(leaf, r, p)[2])

    terms = {leaf: term(leaf) for leaf in lat.leaf_ids}
    res = convex_inner_min(amb, terms)
    return res.value


# --- condition audit --------------------------------------------------------


@dataclass
class ConditionCheck:
    name: str
    passed: bool
    witness: str | None = None


@dataclass
class ConditionReport:
    checks: list[ConditionCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> ConditionCheck:
        return next(c for c in self.checks if c.name == name)


def check_conditions(spec: UtilitySpec, grid, leaves=(None,)) -> ConditionReport:
    """Numeric audit of monotonicity, concavity, boundedness and the
    superlinear-loss condition, plus finiteness of the conjugate on [0, n]."""
    grid = np.sort(np.asarray(grid, dtype=float))
    checks = []

    mono_ok, mono_wit = True, None
    conc_ok, conc_wit = True, None
    for leaf in leaves:
        vals = np.array([eval_u(spec, leaf, float(x)) for x in grid])
        d = np.diff(vals)
        if (d < -1e-9).any():
            mono_ok = False
            i = int(np.argmin(d))
            mono_wit = f"leaf={leaf} decreasing on [{grid[i]:.6g}, {grid[i+1]:.6g}]"
        dx = np.diff(grid)
        slopes = d / dx
        dd = np.diff(slopes)
        if (dd > 1e-9).any():
            conc_ok = False
            i = int(np.argmax(dd))
            conc_wit = f"leaf={leaf} slope increases near x={grid[i+1]:.6g}"
    checks.append(ConditionCheck("monotone", mono_ok, mono_wit))
    checks.append(ConditionCheck("concave", conc_ok, conc_wit))

    bound_ok, bound_wit = True, None
    for leaf in leaves:
        if not math.isfinite(sup_u(spec, leaf)):
            bound_ok = False
            bound_wit = f"leaf={leaf} unbounded above"
    checks.append(ConditionCheck("bounded_on_half_lines", bound_ok, bound_wit))

    tail_ok, tail_wit = True, None
    for leaf in leaves:
        ratios = []
        for k in range(1, 7):
            x = -(10.0 ** k)
            u = eval_u(spec, leaf, x)
            ratios.append(u / abs(x))
        if not math.isfinite(ratios[-1]):
            continue  # diverged past float range
        if not (abs(ratios[-1]) >= 1.05 * abs(ratios[-2]) and ratios[-1] < ratios[-2]):
            tail_ok = False
            tail_wit = (f"leaf={leaf} loss ratio stalls: "
                        + ", ".join(f"{r:.4g}" for r in ratios))
    checks.append(ConditionCheck("superlinear_loss", tail_ok, tail_wit))

    conj = Conjugate(spec)
    cb_ok, cb_wit = True, None
    for leaf in leaves:
        for y in np.linspace(0.0, 10.0, 41):
            v = conj.value(leaf, float(y))
            if not math.isfinite(v):
                cb_ok = False
                cb_wit = f"leaf={leaf} conjugate infinite at y={y:.4g}"
                break
        if not cb_ok:
            break
    checks.append(ConditionCheck("conjugate_bounded", cb_ok, cb_wit))

    return ConditionReport(checks)
