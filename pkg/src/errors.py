"""Exception hierarchy for the quantization lab.

Every error a module can raise on bad geometric input derives from
:class:`QlabError`, so the CLI can record it as a failed check instead of
crashing.  Plain misuse (wrong argument shapes, unknown names) still raises
``ValueError``.
"""


class QlabError(Exception):
    """Base class for all domain errors."""


# ---- tensor-geometry ---- #

class SlotMismatch(QlabError):
    """Paired tensor slots have the wrong variance or count."""


class GridMismatch(QlabError):
    """Two fields live on different grids."""


class DegenerateMetric(QlabError):
    """Pointwise metric determinant or a leading minor fell below threshold."""


# ---- kahler-family ---- #

class NotInSiegel(QlabError):
    """Z is not symmetric or Im(Z) is not positive definite."""


class BoundaryPoint(QlabError):
    """Parameter point is not interior to the chart domain."""


class NonConvergedFiniteDifference(QlabError):
    """Richardson pair disagreed beyond the allowed tolerance."""


class NotTangent(QlabError):
    """V'[J] is not dbar-closed, so V is not tangent to the compatible structures."""


class ObstructionUnsolvable(QlabError):
    """The weakly restricted equation has no solution within tolerance."""


class PerturbationTooLarge(QlabError):
    """Perturbed structure left the admissible region (Im tau below guard)."""


# ---- prequantum-bundle / quantum-spaces ---- #

class LevelMismatch(QlabError):
    """Sections at different levels were combined."""


class TruncationInsufficient(QlabError):
    """Theta series needs Fourier modes the grid cannot represent."""


class AmbiguousDimension(QlabError):
    """No clear singular-value gap at the expected kernel dimension."""


class SingularGram(QlabError):
    """Gram matrix of a basis is numerically singular."""


# ---- hodge-solvers ---- #

class SolverStagnation(QlabError):
    """Iterative solver failed to reach its tolerance."""


class ClassObstruction(QlabError):
    """The right-hand side has a non-zero harmonic (cohomology) part."""


class ObstructionNonzero(QlabError):
    """Direction lies outside ker[Omega]; the gate blocks assembly."""


# ---- hitchin-core ---- #

class MissingIngredient(QlabError):
    """An ingredient of u(V) was not supplied or not solved."""


class ObstructionOnPath(QlabError):
    """A transport path crossed a direction outside ker[Omega]."""


class DriftExceeded(QlabError):
    """Transported sections drifted off the holomorphic subspace."""


# ---- qlab-cli ---- #

class ConfigInvalid(QlabError):
    """Run configuration failed schema validation."""
