"""Exception hierarchy shared across the package."""


class RumaxError(Exception):
    """Base class for all package errors."""


# --- lattice -----------------------------------------------------------------

class LatticeError(RumaxError):
    pass


class CyclicTree(LatticeError):
    """Node ancestry does not terminate at the root."""


class MultipleRoots(LatticeError):
    """More than one parentless node."""


class NonPositivePrice(LatticeError):
    """A money-market or asset value is not strictly positive."""


class TimeGap(LatticeError):
    """Child time is not parent time plus one, or a leaf sits before the horizon."""


class UnknownLeaf(LatticeError):
    """Leaf id not present in the lattice."""


class MissingHolding(LatticeError):
    """Strategy lacks a holding at a non-terminal node on the evaluated path."""


class LatticeMismatch(LatticeError):
    """Objects built over different lattices were combined."""


class InvalidMeasure(LatticeError):
    """Weights are negative or do not sum to one."""


class InvalidClaim(LatticeError):
    """Claim carries a non-finite value."""


# --- utility -----------------------------------------------------------------

class UtilityError(RumaxError):
    pass


class InvalidSpec(UtilityError):
    """Utility specification violates monotonicity/concavity requirements."""


class NegativeSlope(UtilityError):
    """Conjugate evaluated at a negative slope argument."""


# --- transport ---------------------------------------------------------------

class TransportError(RumaxError):
    pass


class NonPositiveInput(TransportError):
    """The price transform is only defined on (0, infinity)."""


class HorizonMismatch(TransportError):
    """Paths of different horizons compared."""


class InvalidMetricParams(TransportError):
    """Metric parameters outside their admissible ranges."""


class LPFailure(RumaxError):
    """The linear-programming kernel failed to produce a certified solution."""


# --- ambiguity ---------------------------------------------------------------

class AmbiguityError(RumaxError):
    pass


class InfeasibleSet(AmbiguityError):
    """The ambiguity set is empty."""


class InfeasibleAmbiguity(AmbiguityError):
    """A solve was requested against an empty ambiguity set."""


class NoConvergence(AmbiguityError):
    """Inner convex minimization hit its cut budget; best bound pair returned."""


# --- arbitrage ---------------------------------------------------------------

class InvalidEpsilon(RumaxError):
    """Perturbation size outside (0, 1)."""


# --- solver ------------------------------------------------------------------

class SolverError(RumaxError):
    pass


class NotConverged(SolverError):
    """Raised only in strict mode; results normally carry a status flag instead."""


class UnboundedBelow(SolverError):
    """Dual objective unbounded; impossible for a valid utility specification."""


class NotExponential(SolverError):
    """Entropic specialization requires a uniform exponential utility."""


class WeakDualityViolation(SolverError):
    """Primal value exceeded a feasible dual certificate; always a bug."""


# --- cli / io ----------------------------------------------------------------

class SchemaError(RumaxError):
    """Problem file violates the schema; carries a JSON-pointer-ish location."""

    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        super().__init__(f"{pointer}: {message}")


class ValidationError(RumaxError):
    """Problem file is schema-valid but internally inconsistent."""


class InvalidShape(RumaxError):
    """Instance generator shape outside the supported range."""
