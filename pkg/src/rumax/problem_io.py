"""Problem-file schema, validation, serialization and the instance generator.

Problem files are UTF-8 JSON.  All vectors are emitted in canonical path
order (ascending leaf id) and floats round-trip exactly through the default
encoder, so byte-identical inputs produce byte-identical outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .ambiguity import (AmbiguitySpec, FiniteHull, MomentConstraint, MomentSet,
                        WassersteinBall, WassersteinPenalty, ensure_nonempty)
from .errors import (InvalidShape, RumaxError, SchemaError, ValidationError)
from .lattice import Claim, Measure, ScenarioLattice, build_lattice
from .solver import Problem
from .transport import MetricParams
from .utility import (ExponentialUtility, LeftTail, TabulatedUtility,
                      check_conditions)


def _need(obj, key, pointer, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{pointer}/{key}", "missing required field")
    val = obj[key]
    if kind is not None and not isinstance(val, kind):
        raise SchemaError(f"{pointer}/{key}",
                          f"expected {getattr(kind, '__name__', kind)}")
    return val


def _number(obj, key, pointer):
    val = _need(obj, key, pointer)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise SchemaError(f"{pointer}/{key}", "expected a number")
    return float(val)


def _leaf_weights(raw, lattice, pointer) -> dict[int, float]:
    if not isinstance(raw, dict):
        raise SchemaError(pointer, "expected an object of leaf weights")
    out = {}
    for k, v in raw.items():
        try:
            leaf = int(k)
        except (TypeError, ValueError):
            raise SchemaError(f"{pointer}/{k}", "leaf key must be an integer")
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{pointer}/{k}", "expected a number")
        if leaf not in lattice.leaf_index:
            raise ValidationError(
                f"{pointer}/{k}: leaf {leaf} is not a leaf of this lattice")
        out[leaf] = float(v)
    return out


def _parse_measure(raw, lattice, pointer) -> Measure:
    weights = _leaf_weights(raw, lattice, pointer)
    try:
        return Measure(lattice, weights)
    except RumaxError as exc:
        raise ValidationError(f"{pointer}: {exc}") from exc


def _parse_utility(raw, pointer):
    kind = _need(raw, "type", pointer, str)
    if kind == "exponential":
        lam = _number(raw, "lambda", pointer)
        if lam <= 0:
            raise SchemaError(f"{pointer}/lambda", "must be positive")
        per_leaf = None
        if raw.get("per_leaf"):
            per_leaf = {int(k): float(v) for k, v in raw["per_leaf"].items()}
            if any(v <= 0 for v in per_leaf.values()):
                raise SchemaError(f"{pointer}/per_leaf", "must be positive")
        return ExponentialUtility(lam, per_leaf)
    if kind == "tabulated":
        knots_raw = _need(raw, "knots", pointer, list)
        knots = tuple((float(x), float(u)) for x, u in knots_raw)
        tail = LeftTail()
        if "left_tail" in raw:
            tr = raw["left_tail"]
            tail = LeftTail(_need(tr, "kind", f"{pointer}/left_tail", str),
                            float(tr.get("coef", 1.0)),
                            float(tr.get("power", 2.0)))
        per_leaf = None
        if raw.get("per_leaf"):
            per_leaf = {int(k): tuple((float(x), float(u)) for x, u in v)
                        for k, v in raw["per_leaf"].items()}
        return TabulatedUtility(knots,
                                left_slope=_number(raw, "left_slope", pointer),
                                right_slope=float(raw.get("right_slope", 0.0)),
                                left_tail=tail,
                                per_leaf=per_leaf)
    raise SchemaError(f"{pointer}/type", f"unknown utility type {kind!r}")


def _parse_metric(raw, pointer) -> MetricParams:
    try:
        return MetricParams(rho=_number(raw, "rho", pointer),
                            kappa=_number(raw, "kappa", pointer),
                            p=_number(raw, "p", pointer))
    except RumaxError as exc:
        raise SchemaError(pointer, str(exc)) from exc


def _parse_ambiguity(raw, lattice, pointer) -> AmbiguitySpec:
    kind = _need(raw, "type", pointer, str)
    try:
        if kind == "finite_hull":
            gens = _need(raw, "generators", pointer, list)
            if not gens:
                raise SchemaError(f"{pointer}/generators", "must be non-empty")
            return FiniteHull(tuple(
                _parse_measure(g, lattice, f"{pointer}/generators/{i}")
                for i, g in enumerate(gens)))
        if kind == "moment_set":
            cons_raw = _need(raw, "constraints", pointer, list)
            cons = []
            for i, c in enumerate(cons_raw):
                cp = f"{pointer}/constraints/{i}"
                cons.append(MomentConstraint(
                    _number(c, "exponent", cp),
                    tuple(float(b) for b in _need(c, "bounds", cp, list))))
            return MomentSet(lattice, tuple(cons),
                             bool(raw.get("undiscounted", False)))
        if kind in ("wasserstein_ball", "wasserstein_penalty"):
            metric = _parse_metric(raw, pointer)
            ref = _parse_measure(_need(raw, "reference", pointer, dict),
                                 lattice, f"{pointer}/reference")
            if kind == "wasserstein_ball":
                radius = _number(raw, "radius", pointer)
                return WassersteinBall(ref, radius, metric)
            weight = _number(raw, "weight", pointer)
            return WassersteinPenalty(ref, weight, metric)
    except (SchemaError, ValidationError):
        raise
    except RumaxError as exc:
        raise ValidationError(f"{pointer}: {exc}") from exc
    raise SchemaError(f"{pointer}/type", f"unknown ambiguity type {kind!r}")


def parse_problem_dict(doc: dict, source: str = "<dict>") -> Problem:
    try:
        lattice = build_lattice({"horizon": _need(doc, "horizon", ""),
                                 "nodes": _need(doc, "nodes", "", list)})
    except RumaxError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise ValidationError(f"/nodes: {exc}") from exc

    claim_w = _leaf_weights(_need(doc, "claim", "", dict), lattice, "/claim")
    try:
        claim = Claim(lattice, claim_w)
    except RumaxError as exc:
        raise ValidationError(f"/claim: {exc}") from exc

    utility = _parse_utility(_need(doc, "utility", "", dict), "/utility")
    report = check_conditions(utility, np.linspace(-6.0, 6.0, 25),
                              leaves=(None,))
    if not report.passed:
        bad = [c for c in report.checks if not c.passed]
        raise ValidationError(
            f"/utility: conditions fail: "
            + "; ".join(f"{c.name} ({c.witness})" for c in bad))

    ambiguity = _parse_ambiguity(_need(doc, "ambiguity", "", dict),
                                 lattice, "/ambiguity")
    ensure_nonempty(ambiguity)

    tol = doc.get("tolerances", {})
    return Problem(lattice, claim, utility, ambiguity,
                   primal_tol=float(tol.get("primal_tol", 1e-6)),
                   dual_tol=float(tol.get("dual_tol", 1e-6)),
                   max_iters=int(tol.get("max_iters", 600)))


def parse_problem(path: str) -> Problem:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("/", f"not valid JSON: {exc}") from exc
    return parse_problem_dict(doc, source=path)


# --- serialization helpers ------------------------------------------------


def measure_doc(mu: Measure | None) -> dict | None:
    if mu is None:
        return None
    lat = mu.lattice
    return {"leaf_order": list(lat.leaf_ids),
            "values": [mu.weights.get(l, 0.0) for l in lat.leaf_ids]}


def strategy_doc(th) -> dict:
    ids = th.lattice.nonterminal_ids()
    return {"node_order": list(ids),
            "values": [th.holdings.get(n, 0.0) for n in ids]}


def _coerce(obj):
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)}")


def dumps_canonical(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, default=_coerce) + "\n"


# --- instance generator -----------------------------------------------------


@dataclass(frozen=True)
class InstanceShape:
    horizon: int
    branching: int
    ambiguity: str = "finite_hull"
    utility: str = "exponential"

    def __post_init__(self):
        if not (1 <= self.horizon <= 4):
            raise InvalidShape(f"horizon {self.horizon} outside 1..4")
        if not (1 <= self.branching <= 4):
            raise InvalidShape(f"branching {self.branching} outside 1..4")
        if self.branching ** self.horizon > 256:
            raise InvalidShape("path count above 256")
        if self.ambiguity not in ("finite_hull", "moment_set",
                                  "wasserstein_ball", "wasserstein_penalty"):
            raise InvalidShape(f"unknown ambiguity kind {self.ambiguity!r}")
        if self.utility not in ("exponential", "tabulated"):
            raise InvalidShape(f"unknown utility kind {self.utility!r}")


def generate_instance(seed: int, shape: InstanceShape) -> dict:
    """Deterministic desk-scale instance; identical seeds give identical bytes.

    Lattices are arbitrage-free by construction: with branching above one,
    every node has children strictly above and strictly below its own price.
    """
    rng = np.random.default_rng(seed)
    T, b = shape.horizon, shape.branching
    growth = float(rng.uniform(0.0, 0.02))

    nodes = [{"id": 0, "parent": None, "t": 0, "m": 1.0,
              "s": float(rng.uniform(0.8, 1.25))}]
    frontier = [0]
    next_id = 1
    for t in range(1, T + 1):
        new_frontier = []
        for pid in frontier:
            parent_s = nodes[pid]["s"]
            if b == 1:
                factors = [1.0]
            else:
                factors = [float(rng.uniform(0.72, 0.92))]
                factors += [float(rng.uniform(0.85, 1.25)) for _ in range(b - 2)]
                factors += [float(rng.uniform(1.09, 1.38))]
            for f in factors:
                nodes.append({"id": next_id, "parent": pid, "t": t,
                              "m": float((1.0 + growth) ** t),
                              "s": float(parent_s * f)})
                new_frontier.append(next_id)
                next_id += 1
        frontier = new_frontier

    lattice = build_lattice({"horizon": T, "nodes": nodes})
    leaves = lattice.leaf_ids
    n = len(leaves)

    claim = {str(l): float(rng.uniform(-1.0, 1.0)) for l in leaves}

    if shape.utility == "exponential":
        utility = {"type": "exponential",
                   "lambda": float(rng.choice([0.5, 1.0, 1.5]))}
    else:
        xs = np.sort(rng.uniform(-2.0, 2.0, 4))
        xs = np.unique(np.round(xs, 6))
        if xs.size < 2:
            xs = np.append(xs, xs[-1] + 1.0)
        slopes = np.sort(rng.uniform(0.2, 2.5, len(xs) - 1))[::-1]
        us = [float(rng.uniform(-1.5, -0.5))]
        for sdx, slope in zip(np.diff(xs), slopes):
            us.append(us[-1] + float(slope * sdx))
        utility = {"type": "tabulated",
                   "knots": [[float(x), float(u)] for x, u in zip(xs, us)],
                   "left_slope": float(slopes[0] + rng.uniform(0.2, 1.0)),
                   "right_slope": 0.0,
                   "left_tail": {"kind": "power",
                                 "coef": float(rng.uniform(0.5, 2.0)),
                                 "power": 2.0}}

    def natural_measure():
        w = rng.dirichlet(np.ones(n)) + 0.02
        w = w / w.sum()
        return {str(l): float(w[i]) for i, l in enumerate(leaves)}

    if shape.ambiguity == "finite_hull":
        ambiguity = {"type": "finite_hull",
                     "generators": [natural_measure()
                                    for _ in range(int(rng.integers(2, 4)))]}
    elif shape.ambiguity == "moment_set":
        base = natural_measure()
        s0 = nodes[0]["s"]
        cons = []
        for expo in (-2.0, 2.0):
            bounds = []
            for t in range(1, T + 1):
                st = np.array([lattice.path_matrix[lattice.leaf_index[l], t, 1]
                               for l in leaves])
                ev = float(sum(base[str(l)] * st[i] ** expo
                               for i, l in enumerate(leaves)))
                bounds.append(float(max(ev, s0 ** expo) * 1.15))
            cons.append({"exponent": expo, "bounds": bounds})
        ambiguity = {"type": "moment_set", "constraints": cons}
    else:
        j = max(1, min(4, n // 2))
        picks = sorted(rng.choice(n, size=j, replace=False).tolist())
        w = rng.dirichlet(np.ones(j)) + 0.05
        w = w / w.sum()
        reference = {str(leaves[i]): float(w[k]) for k, i in enumerate(picks)}
        metric = {"rho": float(rng.choice([0.0, 0.05])),
                  "kappa": float(rng.choice([1.0, 2.0])),
                  "p": 2.0}
        from .transport import cost_matrix
        mp = MetricParams(metric["rho"], metric["kappa"], metric["p"])
        d = cost_matrix(lattice, mp)
        pos = d[d > 1e-12]
        scale = float(np.median(pos)) if pos.size else 1.0
        if shape.ambiguity == "wasserstein_ball":
            ambiguity = {"type": "wasserstein_ball",
                         "radius": float(scale * rng.uniform(0.25, 0.6)),
                         "reference": reference, **metric}
        else:
            ambiguity = {"type": "wasserstein_penalty",
                         "weight": float(rng.uniform(0.5, 2.0)
                                         / max(scale ** metric["p"], 0.05)),
                         "reference": reference, **metric}

    doc = {"horizon": T,
           "nodes": nodes,
           "claim": claim,
           "utility": utility,
           "ambiguity": ambiguity,
           "tolerances": {"primal_tol": 1e-6, "dual_tol": 1e-6,
                          "max_iters": 600},
           "meta": {"seed": int(seed),
                    "shape": {"horizon": T, "branching": b,
                              "ambiguity": shape.ambiguity,
                              "utility": shape.utility},
                    "degenerate": b == 1}}
    return doc


def write_instance(path: str, doc: dict):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(doc))
