"""Exception types shared across the solver."""


class InvalidGrid(ValueError):
    """Mesh construction parameters are unusable (nonpositive counts, bad bounds)."""


class OutOfDomain(ValueError):
    """Evaluation point lies outside the phase-space domain."""


class SingularMass(Exception):
    """A mass-matrix block failed its SPD factorization (assembly bug)."""


class NotPositive(ValueError):
    """A weight function was nonpositive at a quadrature node."""


class ShapeMismatch(ValueError):
    """Operand shapes are inconsistent with the block structure."""


class NotSPD(Exception):
    """Eigendecomposition found a nonpositive eigenvalue in a supposedly SPD block."""


class RankRequestTooLarge(ValueError):
    """Requested rank exceeds min(m, n)."""


class RankDeficient(Exception):
    """Orthogonalization hit a numerically dependent column."""


class SingularSystem(Exception):
    """A shifted SPD solve failed; inputs violated an invariant upstream."""


class SkipConditionViolated(Exception):
    """K-step skip was requested but the basis does not contain the equilibrium."""


class CaseUnavailable(Exception):
    """A basis-study case cannot be built from the available ingredients."""


class InvariantViolation(Exception):
    """A guaranteed property failed at runtime (corrupted state)."""
