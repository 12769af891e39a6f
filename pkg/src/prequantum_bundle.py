"""Level-k prequantum line bundle over the torus.

Sections are quasi-periodic functions on R^{2m} stored on the fundamental
domain.  The cocycle is::

    psi(x + a, y) = psi(x, y)
    psi(x, y + b) = exp(-2 pi i k b.x) psi(x, y)        a, b in Z^m

and the compatible connection is ``nabla = d + 2 pi i k y.dx``, so that
``nabla_{x_j} = d/dx_j + 2 pi i k y_j`` and ``nabla_{y_j} = d/dy_j``.  Its
curvature is ``-i k omega`` with ``omega = 2 pi sum dx_j ^ dy_j``.

x-derivatives act spectrally on psi itself (periodic in x).  y-derivatives
act on the gauge-transformed ``chi = exp(2 pi i k x.y) psi``, which is
periodic in y, and are transformed back.

Usage::

    from prequantum_bundle import SectionField, cov_deriv, inner_product

    s = random_section(domain, k=2, seed=7)
    grad = cov_deriv(s)                 # (2m,) + grid components
    norm2 = inner_product(s, s).real
"""

import logging
from dataclasses import dataclass

import numpy as np

from errors import LevelMismatch
from tensor_geometry import (
    ANTIHOLOMORPHIC,
    DOWN,
    HOLOMORPHIC,
    UP,
    ComplexStructureField,
    GridDomain,
    SymplecticData,
    TensorField,
    type_project,
)
from utils.spectral import derivative, gradient

logger = logging.getLogger(__name__)


# ===================================================================
# Sections
# ===================================================================

@dataclass(frozen=True, eq=False)
class SectionField:
    """A section of L^k sampled on the fundamental domain."""

    domain: GridDomain
    k: int
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.k < 0:
            raise ValueError(f"level k must be >= 0, got {self.k}")
        if self.values.shape != self.domain.shape:
            raise ValueError(f"section shape {self.values.shape} != grid {self.domain.shape}")

    def with_values(self, values: np.ndarray) -> "SectionField":
        return SectionField(self.domain, self.k, values)

    def _check_compatible(self, other: "SectionField") -> None:
        self.domain.check_same(other.domain)
        if self.k != other.k:
            raise LevelMismatch(f"level {self.k} vs level {other.k}")

    def __add__(self, other: "SectionField") -> "SectionField":
        self._check_compatible(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "SectionField") -> "SectionField":
        self._check_compatible(other)
        return self.with_values(self.values - other.values)

    def __neg__(self) -> "SectionField":
        return self.with_values(-self.values)

    def __mul__(self, factor) -> "SectionField":
        """Multiply by a complex number or a function (scalar TensorField or grid array)."""
        if isinstance(factor, TensorField):
            if factor.rank != 0:
                raise ValueError("sections multiply by scalar fields only")
            factor = factor.values
        return self.with_values(self.values * factor)

    __rmul__ = __mul__

    def norm(self) -> float:
        """Grid max-norm |psi|."""
        return float(np.max(np.abs(self.values)))


def _phase(domain: GridDomain, k: int) -> np.ndarray:
    """exp(2 pi i k x.y) on the grid."""
    coords = domain.coordinates
    xy = sum(coords[j] * coords[domain.m + j] for j in range(domain.m))
    return np.exp(2j * np.pi * k * xy)


# ===================================================================
# Connection
# ===================================================================

@dataclass(frozen=True)
class PrequantumConnection:
    """The level-k connection ``d + 2 pi i k y.dx`` and its curvature."""

    domain: GridDomain
    k: int

    def connection_form(self) -> TensorField:
        """The 1-form A with nabla = d + i A (A_{x_j} = 2 pi k y_j)."""
        m = self.domain.m
        values = np.zeros((self.domain.dim,) + self.domain.shape, dtype=complex)
        for j in range(m):
            values[j] = 2.0 * np.pi * self.k * self.domain.y(j)
        return TensorField(self.domain, (DOWN,), values)

    def curvature(self, symplectic: SymplecticData) -> TensorField:
        """-i k omega."""
        return symplectic.omega * (-1j * self.k)


def bundle_gradient(values: np.ndarray, domain: GridDomain, k: int) -> np.ndarray:
    """nabla_a applied to every component of an L^k-valued array.

    ``values`` has any number of leading component axes followed by the grid
    axes; the result gains a new leading axis ``a`` of length 2m.
    """
    m, d = domain.m, domain.dim
    grads = []
    coords = domain.coordinates
    for j in range(m):
        grads.append(derivative(values, j, d) + 2j * np.pi * k * coords[m + j] * values)
    phase = _phase(domain, k)
    chi = values * phase
    for j in range(m):
        # d/dy_j psi = exp(-2 pi i k x.y) d/dy_j chi - 2 pi i k x_j psi
        grads.append(
            derivative(chi, m + j, d) / phase - 2j * np.pi * k * coords[j] * values
        )
    return np.stack(grads)


def cov_deriv(s: SectionField, direction=None):
    """Covariant derivative of ``s``.

    Without ``direction`` returns the T*M-valued section as an array of
    shape ``(2m,) + grid``.  With a constant (possibly complex) vector
    ``direction`` returns ``nabla_X s`` as a :class:`SectionField`.
    """
    grad = bundle_gradient(s.values, s.domain, s.k)
    if direction is None:
        return grad
    direction = np.asarray(direction, dtype=complex)
    if direction.shape != (s.domain.dim,):
        raise ValueError(f"direction must have shape ({s.domain.dim},), got {direction.shape}")
    return s.with_values(np.tensordot(direction, grad, axes=(0, 0)))


def cov_deriv_along(s: SectionField, field_: TensorField) -> SectionField:
    """nabla_X s for a vector field X (contravariant rank 1)."""
    if field_.signature != (UP,):
        raise ValueError(f"expected a vector field, got signature {field_.signature}")
    s.domain.check_same(field_.domain)
    grad = bundle_gradient(s.values, s.domain, s.k)
    return s.with_values(np.einsum("a...,a...->...", field_.values, grad))


def cov_deriv_type(s: SectionField, structure: ComplexStructureField, target: str) -> TensorField:
    """The (1,0) or (0,1) part of nabla s as an L^k-valued 1-form."""
    if target not in (HOLOMORPHIC, ANTIHOLOMORPHIC):
        raise ValueError(f"unknown type target {target!r}")
    grad = TensorField(s.domain, (DOWN,), bundle_gradient(s.values, s.domain, s.k))
    return type_project(grad, structure, (target,))


# ===================================================================
# Inner product and prequantum operators
# ===================================================================

def inner_product(s1: SectionField, s2: SectionField) -> complex:
    """<s1, s2> = integral of h(s1, s2) omega^m / m!, trapezoidal on the grid.

    Linear in the first slot, conjugate-linear in the second.
    """
    s1._check_compatible(s2)
    volume = (2.0 * np.pi) ** s1.domain.m
    return complex(volume * np.mean(s1.values * np.conj(s2.values)))


def hamiltonian_vf(f, symplectic: SymplecticData) -> TensorField:
    """X_f with i_{X_f} omega = df, i.e. X_f^a = d_u f omega~^{ua}."""
    f = _as_function(f, symplectic.domain)
    df = gradient(f.values, symplectic.domain.dim)
    values = np.einsum("u...,ua...->a...", df, symplectic.omega_inv.values)
    return TensorField(symplectic.domain, (UP,), values)


def poisson_bracket(f, g, symplectic: SymplecticData) -> TensorField:
    """{f, g} = omega(X_f, X_g) = X_g(f)."""
    f = _as_function(f, symplectic.domain)
    g = _as_function(g, symplectic.domain)
    xg = hamiltonian_vf(g, symplectic)
    df = gradient(f.values, symplectic.domain.dim)
    return TensorField.scalar(symplectic.domain, np.einsum("a...,a...->...", xg.values, df))


def prequantum_apply(f, s: SectionField, symplectic: SymplecticData) -> SectionField:
    """P_k(f) s = -(1/k) nabla_{X_f} s + i f s."""
    if s.k == 0:
        raise ValueError("prequantum operators need level k >= 1")
    f = _as_function(f, s.domain)
    xf = hamiltonian_vf(f, symplectic)
    return cov_deriv_along(s, xf) * (-1.0 / s.k) + s * (1j * f.values)


def _as_function(f, domain: GridDomain) -> TensorField:
    if isinstance(f, TensorField):
        if f.rank != 0:
            raise ValueError("expected a function (rank-0 field)")
        domain.check_same(f.domain)
        return f
    if callable(f):
        return TensorField.scalar(domain, f(domain.coordinates))
    return TensorField.scalar(domain, np.broadcast_to(np.asarray(f, dtype=complex), domain.shape))


def skew_adjointness_defect(f, s1: SectionField, s2: SectionField, symplectic) -> float:
    """|<P s1, s2> + <s1, P s2>| / (|s1| |s2|); zero for real f."""
    p1 = prequantum_apply(f, s1, symplectic)
    p2 = prequantum_apply(f, s2, symplectic)
    scale = np.sqrt(inner_product(s1, s1).real * inner_product(s2, s2).real)
    return abs(inner_product(p1, s2) + inner_product(s1, p2)) / scale


# ===================================================================
# Translations and test sections
# ===================================================================

def cocycle_factor(domain: GridDomain, k: int, periods) -> np.ndarray:
    """exp(-2 pi i k b.x): psi(x, y + b) = factor * psi(x, y)."""
    periods = np.asarray(periods)
    xb = sum(periods[j] * domain.x(j) for j in range(domain.m))
    return np.exp(-2j * np.pi * k * xb)


def shift_section(s: SectionField, steps) -> np.ndarray:
    """Values of ``s`` at the grid points moved by ``steps`` grid spacings per axis.

    Returns the array ``psi(p + steps/N)`` for every grid point p, applying
    the cocycle whenever a y coordinate leaves [0, 1).  A full-period shift
    in ``y_j`` returns ``cocycle_factor * psi``.
    """
    domain = s.domain
    steps = [int(v) for v in steps]
    if len(steps) != domain.dim:
        raise ValueError(f"need {domain.dim} shifts, got {len(steps)}")
    n, m = domain.N, domain.m
    values = s.values
    index = np.arange(n)
    for j in range(m):
        q = steps[m + j]
        if q == 0:
            continue
        target = index + q
        wraps = np.floor_divide(target, n)
        values = np.take(values, np.mod(target, n), axis=m + j)
        shape = [1] * domain.dim
        shape[m + j] = n
        # psi(x, y' + b) = exp(-2 pi i k b x) psi(x, y')
        values = values * np.exp(
            -2j * np.pi * s.k * wraps.reshape(shape) * domain.x(j)
        )
    for j in range(m):
        if steps[j]:
            values = np.roll(values, -steps[j], axis=j)
    return values


def magnetic_translate(s: SectionField, lattice) -> SectionField:
    """Heisenberg translation ``T_{(u,v)} s = exp(-2 pi i k v.x) s(x - u, y - v)``.

    ``lattice`` gives (u, v) in units of 1/k; the grid size must be a
    multiple of k so the shift lands on grid points.
    """
    domain, k = s.domain, s.k
    if k == 0 or domain.N % k:
        raise ValueError(f"grid N={domain.N} does not support 1/k translations for k={k}")
    lattice = np.asarray(lattice, dtype=int)
    steps = -lattice * (domain.N // k)
    shifted = shift_section(s, steps)
    v = lattice[domain.m:] / k
    vx = sum(v[j] * domain.x(j) for j in range(domain.m))
    return s.with_values(np.exp(-2j * np.pi * k * vx) * shifted)


def random_section(
    domain: GridDomain,
    k: int,
    seed: int = 0,
    degree: int = 2,
    width: float = 1.0,
) -> SectionField:
    """A smooth random section of L^k.

    Periodizes ``u(x, y) = a(x, y) exp(-pi width |y|^2)`` with a random
    trigonometric polynomial ``a`` of the given degree::

        s(x, y) = sum_n exp(2 pi i k n.x) u(x, y + n)

    which satisfies the cocycle exactly.
    """
    rng = np.random.default_rng(seed)
    coords = domain.coordinates
    m = domain.m
    modes = np.arange(-degree, degree + 1)
    freq = np.stack(np.meshgrid(*([modes] * domain.dim), indexing="ij")).reshape(domain.dim, -1)
    coeffs = (rng.standard_normal(freq.shape[1]) + 1j * rng.standard_normal(freq.shape[1]))
    coeffs /= np.sqrt(freq.shape[1])

    def envelope_poly(y_shifted):
        phase = np.tensordot(freq[:m], coords[:m], axes=(0, 0)) + np.tensordot(
            freq[m:], y_shifted, axes=(0, 0)
        )
        return np.tensordot(coeffs, np.exp(2j * np.pi * phase), axes=(0, 0))

    reach = int(np.ceil(np.sqrt(40.0 / (np.pi * width)))) + 1
    total = np.zeros(domain.shape, dtype=complex)
    shifts = np.stack(
        np.meshgrid(*([np.arange(-reach, reach + 1)] * m), indexing="ij")
    ).reshape(m, -1)
    for n in shifts.T:
        y_shifted = coords[m:] + n.reshape((m,) + (1,) * domain.dim)
        gauss = np.exp(-np.pi * width * np.sum(y_shifted ** 2, axis=0))
        nx = sum(n[j] * coords[j] for j in range(m))
        total += np.exp(2j * np.pi * k * nx) * envelope_poly(y_shifted) * gauss
    return SectionField(domain, k, total)


def curvature_defect(s: SectionField, x_dir, y_dir, symplectic: SymplecticData) -> float:
    """Max |([nabla_X, nabla_Y] + i k omega(X, Y)) s| for constant X, Y.

    Relative to the size of the curvature term k |omega(X, Y)| |s|.
    """
    x_dir = np.asarray(x_dir, dtype=complex)
    y_dir = np.asarray(y_dir, dtype=complex)
    xy = cov_deriv(cov_deriv(s, y_dir), x_dir)
    yx = cov_deriv(cov_deriv(s, x_dir), y_dir)
    omega_xy = x_dir @ symplectic.matrix @ y_dir
    defect = float(np.max(np.abs(xy.values - yx.values + 1j * s.k * omega_xy * s.values)))
    return defect / max(1.0, s.k * abs(omega_xy) * s.norm())

