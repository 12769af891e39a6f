"""Grid tensor calculus on the torus T^{2m} = R^{2m} / Z^{2m}.

Tensor fields are sampled on a uniform product grid and differentiated
spectrally.  Components are stored slot-axes first, grid axes last::

    values.shape == (2m,) * rank + (N,) * 2m

Real index ``a < m`` is ``x_{a+1}``; ``a >= m`` is ``y_{a-m+1}``.  A slot is
contravariant (``UP``, a vector index) or covariant (``DOWN``, a form index).

Usage::

    from tensor_geometry import GridDomain, standard_symplectic, contract

    domain = GridDomain(m=1, N=32)
    symp = standard_symplectic(domain)
    identity = contract(symp.omega, symp.omega_inv, [(1, 0)])
"""

import logging
import string
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from errors import DegenerateMetric, GridMismatch, SlotMismatch
from utils.spectral import derivative, gradient, grid_mean

logger = logging.getLogger(__name__)

UP = "up"
DOWN = "down"

HOLOMORPHIC = "1,0"
ANTIHOLOMORPHIC = "0,1"

MINOR_THRESHOLD = 1e-10


# ===================================================================
# Grid and tensor carriers
# ===================================================================

@dataclass(frozen=True)
class GridDomain:
    """Uniform product grid on the unit torus of complex dimension ``m``."""

    m: int
    N: int

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.N < 4 or self.N & (self.N - 1):
            raise ValueError(f"N must be a power of two >= 4, got {self.N}")

    @property
    def dim(self) -> int:
        """Real dimension 2m."""
        return 2 * self.m

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    @property
    def points(self) -> int:
        return self.N ** self.dim

    @cached_property
    def coordinates(self) -> np.ndarray:
        """Real coordinates, shape ``(2m,) + shape``, values in [0, 1)."""
        axis = np.arange(self.N) / self.N
        return np.stack(np.meshgrid(*([axis] * self.dim), indexing="ij"))

    def x(self, j: int = 0) -> np.ndarray:
        return self.coordinates[j]

    def y(self, j: int = 0) -> np.ndarray:
        return self.coordinates[self.m + j]

    def check_same(self, other: "GridDomain") -> None:
        if (self.m, self.N) != (other.m, other.N):
            raise GridMismatch(f"grid (m={self.m}, N={self.N}) vs (m={other.m}, N={other.N})")


@dataclass(frozen=True, eq=False)
class TensorField:
    """Complex tensor field with a variance signature.

    ``types`` optionally labels each slot as holomorphic (``"1,0"``),
    antiholomorphic (``"0,1"``) or unsplit (``None``).
    """

    domain: GridDomain
    signature: tuple[str, ...]
    values: np.ndarray
    types: tuple[str | None, ...] | None = None

    def __post_init__(self) -> None:
        expected = (self.domain.dim,) * len(self.signature) + self.domain.shape
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != expected {expected}")
        for variance in self.signature:
            if variance not in (UP, DOWN):
                raise ValueError(f"unknown slot variance {variance!r}")
        if self.types is not None and len(self.types) != len(self.signature):
            raise ValueError("types must label every slot")

    # ---- construction ---- #

    @classmethod
    def constant(cls, domain: GridDomain, signature, components) -> "TensorField":
        """Broadcast constant components over the grid."""
        components = np.asarray(components, dtype=complex)
        values = np.broadcast_to(
            components.reshape(components.shape + (1,) * domain.dim),
            components.shape + domain.shape,
        ).copy()
        return cls(domain, tuple(signature), values)

    @classmethod
    def scalar(cls, domain: GridDomain, values) -> "TensorField":
        return cls(domain, (), np.asarray(values, dtype=complex).reshape(domain.shape))

    @classmethod
    def zeros(cls, domain: GridDomain, signature) -> "TensorField":
        shape = (domain.dim,) * len(signature) + domain.shape
        return cls(domain, tuple(signature), np.zeros(shape, dtype=complex))

    # ---- algebra ---- #

    @property
    def rank(self) -> int:
        return len(self.signature)

    def with_values(self, values: np.ndarray) -> "TensorField":
        return TensorField(self.domain, self.signature, values, self.types)

    def _check_compatible(self, other: "TensorField") -> None:
        self.domain.check_same(other.domain)
        if self.signature != other.signature:
            raise SlotMismatch(f"signature {self.signature} vs {other.signature}")

    def __add__(self, other: "TensorField") -> "TensorField":
        self._check_compatible(other)
        return TensorField(self.domain, self.signature, self.values + other.values)

    def __sub__(self, other: "TensorField") -> "TensorField":
        self._check_compatible(other)
        return TensorField(self.domain, self.signature, self.values - other.values)

    def __neg__(self) -> "TensorField":
        return self.with_values(-self.values)

    def __mul__(self, factor) -> "TensorField":
        """Multiply by a complex number or a scalar grid function."""
        if isinstance(factor, TensorField):
            if factor.rank != 0:
                raise SlotMismatch("only scalar fields multiply tensors pointwise")
            factor = factor.values
        return self.with_values(self.values * factor)

    __rmul__ = __mul__

    def conj(self) -> "TensorField":
        return TensorField(self.domain, self.signature, self.values.conj())

    def norm(self) -> float:
        """Grid max-norm over all components."""
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def is_real(self, tolerance: float = 1e-12) -> bool:
        return float(np.max(np.abs(self.values.imag), initial=0.0)) <= tolerance * max(
            1.0, self.norm()
        )

    def mean(self) -> np.ndarray:
        """Grid average of every component."""
        return grid_mean(self.values, self.domain.dim)

    def is_constant(self, tolerance: float = 1e-13) -> bool:
        deviation = self.values - self.mean().reshape(
            self.mean().shape + (1,) * self.domain.dim
        )
        return float(np.max(np.abs(deviation), initial=0.0)) <= tolerance * max(1.0, self.norm())


# ===================================================================
# Contraction and type projection
# ===================================================================

def contract(a: TensorField, b: TensorField, pairs: list[tuple[int, int]]) -> TensorField:
    """Pointwise contraction of ``a`` and ``b`` over the slot ``pairs``.

    Each pair ``(i, j)`` contracts slot ``i`` of ``a`` with slot ``j`` of
    ``b``; paired slots must have opposite variance.  The result carries the
    unpaired slots of ``a`` followed by those of ``b``.
    """
    a.domain.check_same(b.domain)
    letters = iter(string.ascii_letters)
    sub_a = [next(letters) for _ in a.signature]
    sub_b = [next(letters) for _ in b.signature]
    paired_a: set[int] = set()
    paired_b: set[int] = set()
    for i, j in pairs:
        if not (0 <= i < a.rank and 0 <= j < b.rank):
            raise SlotMismatch(f"pair ({i}, {j}) out of range for ranks {a.rank}, {b.rank}")
        if i in paired_a or j in paired_b:
            raise SlotMismatch(f"slot paired twice in {pairs}")
        if a.signature[i] == b.signature[j]:
            raise SlotMismatch(f"slots ({i}, {j}) are both {a.signature[i]}")
        sub_b[j] = sub_a[i]
        paired_a.add(i)
        paired_b.add(j)

    free_a = [i for i in range(a.rank) if i not in paired_a]
    free_b = [j for j in range(b.rank) if j not in paired_b]
    out = "".join(sub_a[i] for i in free_a) + "".join(sub_b[j] for j in free_b)
    expr = f"{''.join(sub_a)}...,{''.join(sub_b)}...->{out}..."
    values = np.einsum(expr, a.values, b.values)
    signature = tuple(a.signature[i] for i in free_a) + tuple(b.signature[j] for j in free_b)
    return TensorField(a.domain, signature, values)


def _vector_projector(J: np.ndarray, target: str) -> np.ndarray:
    """Pointwise matrix of pi^{1,0} = (Id - iJ)/2 or pi^{0,1} = (Id + iJ)/2."""
    d = J.shape[0]
    eye = np.eye(d).reshape((d, d) + (1,) * (J.ndim - 2))
    sign = -1.0 if target == HOLOMORPHIC else 1.0
    return 0.5 * (eye + sign * 1j * J)


def type_project(
    field_: TensorField, structure: "ComplexStructureField", targets
) -> TensorField:
    """Apply the type projectors of ``structure`` slot by slot.

    ``targets`` gives ``"1,0"``, ``"0,1"`` or ``None`` (leave unsplit) per
    slot.  Vector slots use ``pi^{1,0} = (Id - iJ)/2``; form slots use the
    dual projector ``alpha -> alpha o pi``.
    """
    targets = tuple(targets)
    if len(targets) != field_.rank:
        raise ValueError(f"{len(targets)} targets for a rank-{field_.rank} field")
    field_.domain.check_same(structure.domain)
    values = field_.values
    for slot, target in enumerate(targets):
        if target is None:
            continue
        if target not in (HOLOMORPHIC, ANTIHOLOMORPHIC):
            raise ValueError(f"unknown type target {target!r}")
        proj = _vector_projector(structure.J.values, target)
        moved = np.moveaxis(values, slot, 0)
        if field_.signature[slot] == UP:
            moved = np.einsum("ab...,b...->a...", proj, moved)
        else:
            moved = np.einsum("ba...,b...->a...", proj, moved)
        values = np.moveaxis(moved, 0, slot)
    labels = list(field_.types or (None,) * field_.rank)
    for slot, target in enumerate(targets):
        if target is not None:
            labels[slot] = target
    return TensorField(field_.domain, field_.signature, values, tuple(labels))


# ===================================================================
# Symplectic and complex structures
# ===================================================================

@dataclass(frozen=True, eq=False)
class SymplecticData:
    """omega = 2 pi sum_j dx_j ^ dy_j and its inverse bivector."""

    omega: TensorField
    omega_inv: TensorField

    @property
    def domain(self) -> GridDomain:
        return self.omega.domain

    @property
    def matrix(self) -> np.ndarray:
        return self.omega.mean().real

    @property
    def inverse_matrix(self) -> np.ndarray:
        return self.omega_inv.mean().real


def symplectic_matrix(m: int) -> np.ndarray:
    eye = np.eye(m)
    zero = np.zeros((m, m))
    return 2.0 * np.pi * np.block([[zero, eye], [-eye, zero]])


def standard_symplectic(domain: GridDomain) -> SymplecticData:
    omega = symplectic_matrix(domain.m)
    return SymplecticData(
        omega=TensorField.constant(domain, (DOWN, DOWN), omega),
        omega_inv=TensorField.constant(domain, (UP, UP), np.linalg.inv(omega)),
    )


@dataclass(frozen=True)
class StructureDefects:
    """Pointwise max-norm defects of a candidate compatible complex structure."""

    j_squared: float
    compatibility: float
    metric_symmetry: float
    min_minor: float
    reality: float


@dataclass(frozen=True, eq=False)
class ComplexStructureField:
    """A real, omega-compatible complex structure J with derived metric data."""

    J: TensorField
    symplectic: SymplecticData
    defects: StructureDefects = field(compare=False, repr=False)

    @classmethod
    def from_field(
        cls,
        J: TensorField,
        symplectic: SymplecticData,
        tolerance: float = 1e-10,
    ) -> "ComplexStructureField":
        """Validate ``J`` and wrap it.

        Raises ``ValueError`` when J^2 != -Id or J is not omega-compatible
        and :class:`DegenerateMetric` when g = omega.J is not positive.
        """
        if J.signature != (UP, DOWN):
            raise SlotMismatch(f"J must be a (1,1)-tensor, got {J.signature}")
        J.domain.check_same(symplectic.domain)
        defects = structure_defects(J, symplectic)
        if defects.j_squared > tolerance or defects.reality > tolerance:
            raise ValueError(f"J is not a real almost complex structure: {defects}")
        if defects.compatibility > tolerance or defects.metric_symmetry > tolerance:
            raise ValueError(f"J is not omega-compatible: {defects}")
        if defects.min_minor <= MINOR_THRESHOLD:
            raise DegenerateMetric(
                f"metric g = omega.J has leading minor {defects.min_minor:.3e}"
            )
        return cls(J=J, symplectic=symplectic, defects=defects)

    @property
    def domain(self) -> GridDomain:
        return self.J.domain

    @cached_property
    def metric(self) -> TensorField:
        """g_{ab} = omega_{au} J^u_b."""
        return contract(self.symplectic.omega, self.J, [(1, 0)])

    @cached_property
    def inverse_metric(self) -> TensorField:
        """g~ = -J . omega~ (equal to g^{-1})."""
        return -contract(self.J, self.symplectic.omega_inv, [(1, 0)])

    @cached_property
    def is_constant(self) -> bool:
        return self.J.is_constant()

    @cached_property
    def levi_civita(self) -> "LeviCivita":
        return levi_civita(self.metric, self)


def structure_defects(J: TensorField, symplectic: SymplecticData) -> StructureDefects:
    j = J.values
    d = J.domain.dim
    eye = np.eye(d).reshape((d, d) + (1,) * d)
    j_sq = np.einsum("ab...,bc...->ac...", j, j) + eye
    omega = symplectic.omega.values
    # omega(JX, JY) - omega(X, Y)
    compat = np.einsum("ua...,uv...,vb...->ab...", j, omega, j) - omega
    g = np.einsum("au...,ub...->ab...", omega, j)
    sym = g - np.swapaxes(g, 0, 1)
    return StructureDefects(
        j_squared=float(np.max(np.abs(j_sq))),
        compatibility=float(np.max(np.abs(compat))),
        metric_symmetry=float(np.max(np.abs(sym))),
        min_minor=_min_leading_minor(g.real),
        reality=float(np.max(np.abs(j.imag))),
    )


def _min_leading_minor(g: np.ndarray) -> float:
    """Smallest leading principal minor of a pointwise symmetric matrix field."""
    d = g.shape[0]
    mats = np.moveaxis(np.moveaxis(g, 0, -1), 0, -1)  # (..., d, d)
    mats = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    return float(min(np.linalg.det(mats[..., :k, :k]).min() for k in range(1, d + 1)))


# ===================================================================
# Levi-Civita connection and curvature
# ===================================================================

@dataclass(frozen=True, eq=False)
class LeviCivita:
    """Christoffel symbols ``Gamma[c, a, b] = Gamma^c_{ab}`` of a metric.

    Derived quantities follow
    ``R^a_{bcd} = d_c Gamma^a_{db} - d_d Gamma^a_{cb} + Gamma^a_{ce} Gamma^e_{db}
    - Gamma^a_{de} Gamma^e_{cb}``, ``r_{bd} = R^a_{bad}`` and
    ``rho(X, Y) = r(JX, Y)``.
    """

    metric: TensorField
    structure: ComplexStructureField | None
    christoffel: np.ndarray

    @property
    def domain(self) -> GridDomain:
        return self.metric.domain

    # ---- curvature ---- #

    @cached_property
    def riemann(self) -> TensorField:
        d = self.domain.dim
        gam = self.christoffel
        dgam = gradient(gam, d)  # [c, a, d, b] = d_c Gamma^a_{db}
        values = (
            np.einsum("cadb...->abcd...", dgam)
            - np.einsum("dacb...->abcd...", dgam)
            + np.einsum("ace...,edb...->abcd...", gam, gam)
            - np.einsum("ade...,ecb...->abcd...", gam, gam)
        )
        return TensorField(self.domain, (UP, DOWN, DOWN, DOWN), values)

    @cached_property
    def ricci(self) -> TensorField:
        values = np.einsum("abad...->bd...", self.riemann.values)
        return TensorField(self.domain, (DOWN, DOWN), values)

    @cached_property
    def ricci_form(self) -> TensorField:
        """rho_{ab} = J^c_a r_{cb}; antisymmetric of type (1,1) for Kahler metrics."""
        if self.structure is None:
            raise ValueError("ricci_form needs the complex structure")
        values = np.einsum("ca...,cb...->ab...", self.structure.J.values, self.ricci.values)
        return TensorField(self.domain, (DOWN, DOWN), values)

    def metric_residual(self) -> float:
        """Max-norm of the covariant derivative of g (zero for Levi-Civita)."""
        return self.covariant_derivative(self.metric).norm()

    # ---- covariant derivatives ---- #

    def covariant_derivative(self, tensor: TensorField) -> TensorField:
        """nabla T with the derivative index as the new first slot."""
        self.domain.check_same(tensor.domain)
        d = self.domain.dim
        gam = self.christoffel
        result = gradient(tensor.values, d)
        for slot, variance in enumerate(tensor.signature):
            moved = np.moveaxis(tensor.values, slot, 0)
            if variance == UP:
                term = np.einsum("cae...,e...->ac...", gam, moved)
            else:
                term = -np.einsum("eac...,e...->ac...", gam, moved)
            result = result + np.moveaxis(term, 1, slot + 1)
        return TensorField(self.domain, (DOWN,) + tensor.signature, result)

    def divergence(self, tensor: TensorField, slot: int = 0) -> TensorField:
        """Contract the derivative index with contravariant ``slot``: (delta T) = nabla_u T^{u...}."""
        if tensor.signature[slot] != UP:
            raise SlotMismatch(f"divergence needs a contravariant slot, got {tensor.signature}")
        cov = self.covariant_derivative(tensor).values
        traced = np.trace(cov, axis1=0, axis2=slot + 1)
        signature = tensor.signature[:slot] + tensor.signature[slot + 1:]
        # np.trace moves the traced axes out; the remaining order is preserved
        return TensorField(self.domain, signature, traced)


def levi_civita(metric: TensorField, structure: ComplexStructureField | None = None) -> LeviCivita:
    """Christoffel symbols of ``metric`` by spectral differentiation.

    Raises :class:`DegenerateMetric` when a leading principal minor of g
    falls below the threshold anywhere on the grid.
    """
    if metric.signature != (DOWN, DOWN):
        raise SlotMismatch(f"metric must be covariant rank 2, got {metric.signature}")
    min_minor = _min_leading_minor(metric.values.real)
    if min_minor <= MINOR_THRESHOLD:
        raise DegenerateMetric(f"metric leading minor {min_minor:.3e} below threshold")

    d = metric.domain.dim
    g = metric.values
    g_inv = np.moveaxis(np.linalg.inv(np.moveaxis(np.moveaxis(g, 0, -1), 0, -1)), (-2, -1), (0, 1))
    dg = gradient(g, d)  # [c, a, b] = d_c g_{ab}
    lowered = 0.5 * (
        np.einsum("abd...->dab...", dg)     # d_a g_{bd}
        + np.einsum("bad...->dab...", dg)   # d_b g_{ad}
        - np.einsum("dab...->dab...", dg)   # d_d g_{ab}
    )
    christoffel = np.einsum("cd...,dab...->cab...", g_inv, lowered)
    return LeviCivita(metric=metric, structure=structure, christoffel=christoffel)


# ===================================================================
# Integrability and exterior calculus
# ===================================================================

def nijenhuis(structure: ComplexStructureField | TensorField) -> TensorField:
    """Nijenhuis tensor N^a_{bc} of J; vanishes iff J is integrable."""
    J = structure.J if isinstance(structure, ComplexStructureField) else structure
    d = J.domain.dim
    j = J.values
    dj = gradient(j, d)  # [e, a, c] = d_e J^a_c
    values = (
        np.einsum("db...,dac...->abc...", j, dj)
        - np.einsum("dc...,dab...->abc...", j, dj)
        - np.einsum("ad...,bdc...->abc...", j, dj)
        + np.einsum("ad...,cdb...->abc...", j, dj)
    )
    return TensorField(J.domain, (UP, DOWN, DOWN), values)


def exterior_derivative(form: TensorField) -> TensorField:
    """d of a function or a 1-form, spectrally."""
    d = form.domain.dim
    if form.rank == 0:
        return TensorField(form.domain, (DOWN,), gradient(form.values, d))
    if form.signature != (DOWN,):
        raise SlotMismatch(f"exterior_derivative handles functions and 1-forms, got {form.signature}")
    grad = gradient(form.values, d)  # [a, b] = d_a alpha_b
    return TensorField(form.domain, (DOWN, DOWN), grad - np.swapaxes(grad, 0, 1))


def directional_derivative(f: TensorField, direction: np.ndarray) -> TensorField:
    """Derivative of any field along a constant vector ``direction``."""
    d = f.domain.dim
    values = sum(
        direction[a] * derivative(f.values, a, d) for a in range(d) if direction[a] != 0
    )
    if isinstance(values, int):
        values = np.zeros_like(f.values)
    return f.with_values(values)
