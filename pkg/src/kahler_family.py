"""Families of omega-compatible complex structures on the torus.

Two charts are provided:

* the linear (Siegel) family ``Z -> J_Z`` with holomorphic coordinates
  ``w = x + Z y``, in real coordinates ``(Re Z_ij, Im Z_ij)`` for ``i <= j``;
* a non-linear family on the 2-torus, ``tau_t = Z + t mu_Z`` pointwise, with
  ``mu_Z = (i / 4 pi) e_Z^2 f0`` and ``e_Z = -Z d/dx + d/dy``.  Its
  t-derivative is dbar-exact, so G_beta vanishes at t = 0 and beta carries
  the whole variation.

A direction V is a complex vector in chart coordinates; ``V[J]`` is
complex-linear in V.  Coordinates paired as (Re, Im) carry the parameter
complex structure, and ``V'`` is the (1,0) part of V on those pairs.

Usage::

    chart = linear_family(GridDomain(1, 32))
    var = var_j(chart, [0.0, 1.0], [0.5, -0.5j])     # V = d/dZ at Z = i
    wr = weakly_restricted_solve(var, chart.structure_at([0.0, 1.0]))
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from errors import (
    BoundaryPoint,
    NotInSiegel,
    NotTangent,
    ObstructionUnsolvable,
    PerturbationTooLarge,
)
from hodge_solvers import (
    augmented_solve,
    dbar_vector,
    frame_vector_operator,
    holomorphic_vector_field,
    solve_dbar_scalar,
    solve_dbar_vector,
)
from tensor_geometry import (
    ANTIHOLOMORPHIC,
    DOWN,
    HOLOMORPHIC,
    UP,
    ComplexStructureField,
    GridDomain,
    SymplecticData,
    TensorField,
    contract,
    exterior_derivative,
    standard_symplectic,
    type_project,
)
from utils.finite_diff import DEFAULT_STEP, DEFAULT_TOLERANCE, complex_direction_derivative
from utils.spectral import derivative, gradient

logger = logging.getLogger(__name__)

LINEAR_CHART = "linear"
PERTURBED_CHART = "perturbed"

HOLOMORPHIC_MODE = "holomorphic"
SMOOTH_MODE = "smooth"
MODES = (HOLOMORPHIC_MODE, SMOOTH_MODE)

SIEGEL_TOLERANCE = 1e-12
WEAK_RESIDUAL_LIMIT = 1e-8
IM_TAU_GUARD = 0.05


# ===================================================================
# Siegel space
# ===================================================================

@dataclass(frozen=True, eq=False)
class SiegelPoint:
    """Z symmetric with positive definite imaginary part."""

    Z: np.ndarray

    def __post_init__(self) -> None:
        Z = np.atleast_2d(np.asarray(self.Z, dtype=complex))
        object.__setattr__(self, "Z", Z)
        if Z.shape[0] != Z.shape[1]:
            raise NotInSiegel(f"Z must be square, got shape {Z.shape}")
        if np.max(np.abs(Z - Z.T)) > SIEGEL_TOLERANCE:
            raise NotInSiegel("Z is not symmetric")
        if np.min(np.linalg.eigvalsh(Z.imag)) <= 0.0:
            raise NotInSiegel(f"Im Z is not positive definite: {Z.imag.tolist()}")

    @property
    def m(self) -> int:
        return self.Z.shape[0]


def _frame_matrix(Z: np.ndarray) -> np.ndarray:
    """Rows dw_j = dx_j + Z_jl dy_l followed by their conjugates."""
    m = Z.shape[0]
    eye = np.eye(m)
    return np.block([[eye, Z], [eye, np.conj(Z)]])


def _eigen_matrix(m: int) -> np.ndarray:
    return np.diag(np.concatenate([np.full(m, 1j), np.full(m, -1j)]))


def siegel_structure_matrix(Z: np.ndarray) -> np.ndarray:
    """Real 2m x 2m matrix J_Z = M^{-1} D M (dw o J = i dw)."""
    M = _frame_matrix(Z)
    return (np.linalg.solve(M, _eigen_matrix(Z.shape[0]) @ M)).real


def siegel_structure_variation(Z: np.ndarray, dZ: np.ndarray, dZ_bar: np.ndarray) -> np.ndarray:
    """dJ = M^{-1} [D, dM M^{-1}] M with dM = [[0, dZ], [0, dZ_bar]].

    ``dZ`` and ``dZ_bar`` are independent, so complex directions are exact.
    Arrays may carry trailing grid axes.
    """
    m = Z.shape[0]
    D = _eigen_matrix(m)
    M = _frame_matrix(Z)
    M_inv = np.linalg.inv(M)
    zeros = np.zeros_like(dZ)
    dM = np.concatenate(
        [np.concatenate([zeros, dZ], axis=1), np.concatenate([zeros, dZ_bar], axis=1)], axis=0
    )
    inner = np.einsum("ab...,bc->ac...", dM, M_inv)
    commutator = np.einsum("ab,bc...->ac...", D, inner) - np.einsum("ab...,bc->ac...", inner, D)
    return np.einsum("ab,bc...,cd->ad...", M_inv, commutator, M)


def linear_family_j(Z, domain: GridDomain, symplectic: SymplecticData | None = None):
    """The constant structure J_Z.

    Raises
    ------
    NotInSiegel
        Z is not symmetric or Im Z is not positive definite.
    """
    point = Z if isinstance(Z, SiegelPoint) else SiegelPoint(np.asarray(Z, dtype=complex))
    if point.m != domain.m:
        raise ValueError(f"Z is {point.m}x{point.m} but the torus has m={domain.m}")
    symplectic = symplectic or standard_symplectic(domain)
    J = TensorField.constant(domain, (UP, DOWN), siegel_structure_matrix(point.Z))
    return ComplexStructureField.from_field(J, symplectic)


def _surface_structure(tau: np.ndarray) -> np.ndarray:
    """J of the modulus field tau: [[-a/b, -|tau|^2/b], [1/b, a/b]]."""
    a, b = tau.real, tau.imag
    return np.stack([
        np.stack([-a / b, -(a ** 2 + b ** 2) / b]),
        np.stack([1.0 / b, a / b]),
    ]).astype(complex)


def _surface_structure_variation(tau: np.ndarray, dtau: np.ndarray,
                                 dtau_bar: np.ndarray) -> np.ndarray:
    """Pointwise dJ of the modulus field for independent (dtau, dtau_bar)."""
    one = np.ones_like(tau)
    M = np.array([[one, tau], [one, np.conj(tau)]])
    det = np.conj(tau) - tau
    M_inv = np.array([[np.conj(tau), -tau], [-one, one]]) / det
    D = np.array([[1j, 0.0], [0.0, -1j]])
    zeros = np.zeros_like(tau)
    dM = np.array([[zeros, dtau], [zeros, dtau_bar]])
    inner = np.einsum("ab...,bc...->ac...", dM, M_inv)
    commutator = np.einsum("ab,bc...->ac...", D, inner) - np.einsum("ab...,bc->ac...", inner, D)
    return np.einsum("ab...,bc...,cd...->ad...", M_inv, commutator, M)


# ===================================================================
# Charts
# ===================================================================

@dataclass(frozen=True, eq=False)
class FamilyChart:
    """A parametrized family sigma -> J_sigma over an open box.

    ``tangent(sigma, V)`` returns the components of V[J] when an analytic
    derivative is known; otherwise V[J] comes from Richardson differences.
    """

    name: str
    domain: GridDomain
    symplectic: SymplecticData
    lower: np.ndarray
    upper: np.ndarray
    complex_pairs: tuple[tuple[int, int], ...]
    evaluator: Callable[[np.ndarray], ComplexStructureField]
    tangent: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    holomorphic: bool = False
    translation_invariant: bool = False
    fd_step: float = DEFAULT_STEP
    fd_tolerance: float = DEFAULT_TOLERANCE
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    def check_interior(self, sigma) -> np.ndarray:
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape != (self.dimension,):
            raise ValueError(f"{self.name}: expected {self.dimension} coordinates, got {sigma.shape}")
        if np.any(sigma <= self.lower) or np.any(sigma >= self.upper):
            raise BoundaryPoint(f"{self.name}: {sigma.tolist()} is not interior to the chart")
        return sigma

    def structure_at(self, sigma) -> ComplexStructureField:
        sigma = self.check_interior(sigma)
        key = tuple(np.round(sigma, 15))
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        structure = self.evaluator(sigma)
        with self._lock:
            if len(self._cache) > 256:
                self._cache.clear()
            self._cache[key] = structure
        return structure

    def prime(self, direction) -> np.ndarray:
        """V' on paired coordinates; unpaired coordinates are kept whole."""
        direction = np.asarray(direction, dtype=complex)
        out = direction.copy()
        for p, q in self.complex_pairs:
            a = direction[p] + 1j * direction[q]
            out[p], out[q] = a / 2.0, -1j * a / 2.0
        return out

    def var_j_values(self, sigma, direction) -> np.ndarray:
        sigma = self.check_interior(sigma)
        direction = np.asarray(direction, dtype=complex)
        if self.tangent is not None:
            return self.tangent(sigma, direction)
        return complex_direction_derivative(
            lambda p: self.structure_at(p).J.values, sigma, direction,
            self.fd_step, self.fd_tolerance, label=f"{self.name} J",
        )


def _siegel_indices(m: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(m) for j in range(i, m)]


def siegel_coordinates(Z) -> np.ndarray:
    """Chart coordinates (Re Z_ij, Im Z_ij), i <= j, of a Siegel point."""
    Z = np.atleast_2d(np.asarray(Z, dtype=complex))
    coords = []
    for i, j in _siegel_indices(Z.shape[0]):
        coords.extend([Z[i, j].real, Z[i, j].imag])
    return np.array(coords)


def siegel_matrix(sigma, m: int) -> np.ndarray:
    Z = np.zeros((m, m), dtype=complex)
    for p, (i, j) in enumerate(_siegel_indices(m)):
        Z[i, j] = Z[j, i] = sigma[2 * p] + 1j * sigma[2 * p + 1]
    return Z


def _symmetric_unit(m: int, i: int, j: int) -> np.ndarray:
    unit = np.zeros((m, m), dtype=complex)
    unit[i, j] = unit[j, i] = 1.0
    return unit


def linear_family(domain: GridDomain, bound: float = 8.0) -> FamilyChart:
    """The Siegel chart: holomorphic and translation invariant."""
    m = domain.m
    symplectic = standard_symplectic(domain)
    pairs = tuple((2 * p, 2 * p + 1) for p in range(len(_siegel_indices(m))))
    lower = np.full(2 * len(pairs), -bound)
    upper = np.full(2 * len(pairs), bound)
    for p, (i, j) in enumerate(_siegel_indices(m)):
        if i == j:
            lower[2 * p + 1] = 0.0

    def evaluator(sigma: np.ndarray) -> ComplexStructureField:
        return linear_family_j(siegel_matrix(sigma, m), domain, symplectic)

    def tangent(sigma: np.ndarray, direction: np.ndarray) -> np.ndarray:
        Z = siegel_matrix(sigma, m)
        dZ = np.zeros((m, m), dtype=complex)
        dZ_bar = np.zeros((m, m), dtype=complex)
        for p, (i, j) in enumerate(_siegel_indices(m)):
            re, im = direction[2 * p], direction[2 * p + 1]
            unit = _symmetric_unit(m, i, j)
            dZ += (re + 1j * im) * unit
            dZ_bar += (re - 1j * im) * unit
        dj = siegel_structure_variation(Z, dZ, dZ_bar)
        return np.broadcast_to(
            dj.reshape(dj.shape + (1,) * domain.dim), dj.shape + domain.shape
        ).copy()

    return FamilyChart(
        name=LINEAR_CHART, domain=domain, symplectic=symplectic, lower=lower, upper=upper,
        complex_pairs=pairs, evaluator=evaluator, tangent=tangent, holomorphic=True,
        translation_invariant=True,
    )


def trig_function(domain: GridDomain, modes) -> np.ndarray:
    """sum of c * exp(2 pi i freq.x) + conj, i.e. a real trig polynomial.

    ``modes`` is a list of ``(freq, coeff)`` with integer frequency vectors of
    length 2m; the conjugate mode is added so the result is real.
    """
    coords = domain.coordinates
    total = np.zeros(domain.shape, dtype=complex)
    for freq, coeff in modes:
        freq = np.asarray(freq, dtype=float)
        phase = np.tensordot(freq, coords, axes=(0, 0))
        wave = complex(coeff) * np.exp(2j * np.pi * phase)
        total += wave + np.conj(wave)
    return total.real.astype(complex)


def perturbed_family(
    domain: GridDomain,
    f0_modes,
    t_bound: float = 0.1,
    re_bound: float = 2.0,
    im_bounds: tuple[float, float] = (0.3, 4.0),
    guard: float = IM_TAU_GUARD,
) -> FamilyChart:
    """Chart (Re Z, Im Z, t) -> J with modulus ``tau = Z + t mu_Z`` on a 2-torus.

    ``mu_Z = (i / 4 pi)(Z^2 f_xx - 2 Z f_xy + f_yy)`` for the planted
    potential ``f0``.  The chart is holomorphic in Z but not in t.

    Raises
    ------
    PerturbationTooLarge
        At evaluation, when Im tau falls below ``guard`` somewhere on the grid.
    """
    if domain.m != 1:
        raise ValueError("perturbed families are built on 2-tori (m = 1)")
    symplectic = standard_symplectic(domain)
    f0 = trig_function(domain, f0_modes)
    d = domain.dim
    f_xx = derivative(f0, 0, d, order=2)
    f_yy = derivative(f0, 1, d, order=2)
    f_xy = derivative(derivative(f0, 0, d), 1, d)
    prefactor = 1j / (4.0 * np.pi)

    def mu(Z: complex) -> np.ndarray:
        return prefactor * (Z ** 2 * f_xx - 2.0 * Z * f_xy + f_yy)

    def dmu_dz(Z: complex) -> np.ndarray:
        return prefactor * (2.0 * Z * f_xx - 2.0 * f_xy)

    def modulus(sigma: np.ndarray) -> np.ndarray:
        Z = sigma[0] + 1j * sigma[1]
        tau = Z + sigma[2] * mu(Z)
        low = float(np.min(tau.imag))
        if low <= guard:
            raise PerturbationTooLarge(
                f"Im tau reaches {low:.3e} (guard {guard}) at sigma={sigma.tolist()}"
            )
        return tau

    def evaluator(sigma: np.ndarray) -> ComplexStructureField:
        tau = modulus(sigma)
        J = TensorField(domain, (UP, DOWN), _surface_structure(tau))
        return ComplexStructureField.from_field(J, symplectic, tolerance=1e-9)

    def tangent(sigma: np.ndarray, direction: np.ndarray) -> np.ndarray:
        tau = modulus(sigma)
        Z = sigma[0] + 1j * sigma[1]
        t = sigma[2]
        a = direction[0] + 1j * direction[1]
        b = direction[0] - 1j * direction[1]
        slope = 1.0 + t * dmu_dz(Z)
        dtau = a * slope + direction[2] * mu(Z)
        dtau_bar = b * np.conj(slope) + direction[2] * np.conj(mu(Z))
        return _surface_structure_variation(tau, dtau, dtau_bar)

    lower = np.array([-re_bound, im_bounds[0], -t_bound])
    upper = np.array([re_bound, im_bounds[1], t_bound])
    return FamilyChart(
        name=PERTURBED_CHART, domain=domain, symplectic=symplectic, lower=lower, upper=upper,
        complex_pairs=((0, 1),), evaluator=evaluator, tangent=tangent, holomorphic=False,
        translation_invariant=not f0_modes,
    )


# ===================================================================
# Variations
# ===================================================================

@dataclass(frozen=True, eq=False)
class FamilyVariation:
    """V[J] with its type split and the bivectors G~(V) = V[J].omega~, G(V), conj-G(V).

    ``v_prime_j`` is V'[J], the derivative along the (1,0) part of V in
    parameter space; ``v_j_prime`` is the T' (x) (0,1) type component V[J]'.
    """

    v_j: TensorField
    v_j_prime: TensorField
    v_j_double_prime: TensorField
    v_prime_j: TensorField
    g_tilde: TensorField
    g: TensorField
    g_bar: TensorField
    anticommutation: float
    symmetry: float
    mixed_part: float
    metric_identity: float

    def source(self, mode: str) -> TensorField:
        """The driving T'-valued (0,1)-form: V'[J] (holomorphic) or V[J]' (smooth)."""
        if mode == HOLOMORPHIC_MODE:
            return self.v_prime_j
        if mode == SMOOTH_MODE:
            return self.v_j_prime
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")


def var_j(chart: FamilyChart, sigma, direction) -> FamilyVariation:
    """All first-order data of the family along V at sigma.

    Raises
    ------
    BoundaryPoint
        sigma is not interior to the chart.
    NonConvergedFiniteDifference
        The chart has no analytic tangent and the Richardson pair disagrees.
    """
    structure = chart.structure_at(sigma)
    domain = chart.domain
    omega_inv = chart.symplectic.omega_inv
    v_j = TensorField(domain, (UP, DOWN), chart.var_j_values(sigma, direction))
    v_prime_j = TensorField(domain, (UP, DOWN), chart.var_j_values(sigma, chart.prime(direction)))
    v_j_prime = type_project(v_j, structure, (HOLOMORPHIC, ANTIHOLOMORPHIC))
    v_j_double_prime = type_project(v_j, structure, (ANTIHOLOMORPHIC, HOLOMORPHIC))

    g_tilde = contract(v_j, omega_inv, [(1, 0)])
    g = contract(v_j_prime, omega_inv, [(1, 0)])
    g_bar = contract(v_j_double_prime, omega_inv, [(1, 0)])

    j = structure.J.values
    anti = np.einsum("ab...,bc...->ac...", v_j.values, j) + np.einsum(
        "ab...,bc...->ac...", j, v_j.values
    )
    metric = structure.metric.values
    v_g = np.einsum("au...,ub...->ab...", chart.symplectic.omega.values, v_j.values)
    sandwich = np.einsum("au...,uv...,vb...->ab...", metric, g_tilde.values, metric)
    return FamilyVariation(
        v_j=v_j,
        v_j_prime=v_j_prime,
        v_j_double_prime=v_j_double_prime,
        v_prime_j=v_prime_j,
        g_tilde=g_tilde,
        g=g,
        g_bar=g_bar,
        anticommutation=float(np.max(np.abs(anti))),
        symmetry=float(np.max(np.abs(g_tilde.values - np.swapaxes(g_tilde.values, 0, 1)))),
        mixed_part=(g_tilde - g - g_bar).norm(),
        metric_identity=float(np.max(np.abs(v_g - sandwich))),
    )


def inverse_metric_variation_defect(chart: FamilyChart, sigma, direction) -> float:
    """|G~(V) + V[g~]| with V[g~] by Richardson differences of g~ = -J.omega~."""
    variation = var_j(chart, sigma, direction)
    sigma = chart.check_interior(sigma)
    fd = complex_direction_derivative(
        lambda p: chart.structure_at(p).inverse_metric.values, sigma,
        np.asarray(direction, dtype=complex), chart.fd_step, chart.fd_tolerance,
        label="inverse metric",
    )
    return float(np.max(np.abs(variation.g_tilde.values + fd)))


def holomorphic_defect(chart: FamilyChart, sigma, direction) -> float:
    """|V'[J] - V[J]'|, zero for holomorphic charts."""
    variation = var_j(chart, sigma, direction)
    return (variation.v_prime_j - variation.v_j_prime).norm()


# ===================================================================
# Weakly restricted data
# ===================================================================

@dataclass(frozen=True, eq=False)
class WeaklyRestrictedData:
    """G_beta(V) and beta(V) with V'[J] = G_beta.omega - dbar beta."""

    g_beta: TensorField
    beta: TensorField
    residual: float
    harmonic_defect: float
    tangency: float


def _tangency_defect(mu: TensorField, structure: ComplexStructureField) -> float:
    """|dbar mu| for a T'-valued (0,1)-form and constant J (m >= 2)."""
    d = mu.domain.dim
    grad = gradient(mu.values, d)  # [b, a, c] = d_b mu^a_c
    field_ = TensorField(mu.domain, (DOWN, UP, DOWN), grad)
    projected = type_project(field_, structure, (ANTIHOLOMORPHIC, None, ANTIHOLOMORPHIC)).values
    return float(np.max(np.abs(projected - np.swapaxes(projected, 0, 2))))


def weakly_restricted_solve(
    variation: FamilyVariation,
    structure: ComplexStructureField,
    mode: str = HOLOMORPHIC_MODE,
) -> WeaklyRestrictedData:
    """Solve V'[J] = G_beta.omega - dbar beta with the harmonic part of omega.beta zero.

    Constant structures split V'[J].omega~ into its grid average (G_beta) and
    a mean-free part inverted by Fourier division.  Non-constant structures
    on 2-tori solve two augmented frame problems and fix G_beta as the
    multiple of the holomorphic bivector that cancels the cokernel part.

    Raises
    ------
    NotTangent
        V'[J] is not dbar-closed.
    ObstructionUnsolvable
        The equation cannot be met to tolerance.
    """
    mu = variation.source(mode)
    domain = structure.domain
    omega = structure.symplectic.omega
    omega_inv = structure.symplectic.omega_inv
    scale = max(1.0, mu.norm())

    tangency = 0.0
    if domain.m > 1:
        tangency = _tangency_defect(mu, structure) / scale
        if tangency > 1e-8:
            raise NotTangent(f"V'[J] is not dbar-closed (defect {tangency:.2e})")

    if structure.is_constant:
        mean = TensorField.constant(domain, (UP, DOWN), mu.mean())
        g_beta = contract(mean, omega_inv, [(1, 0)])
        solution = solve_dbar_vector(mean - mu, structure)
        beta = solution.potential
    else:
        g_beta, beta = _variable_weakly_restricted(mu, structure)

    harmonic = solve_dbar_scalar(contract(omega, beta, [(1, 0)]), structure)
    beta = _normalize_beta(beta, harmonic, structure)
    harmonic = solve_dbar_scalar(contract(omega, beta, [(1, 0)]), structure)

    lhs = contract(g_beta, omega, [(1, 0)]) - mu - dbar_vector(beta, structure)
    residual = lhs.norm() / scale
    logger.debug("weakly restricted solve (%s): residual=%.2e |G_beta|=%.2e |beta|=%.2e",
                 mode, residual, g_beta.norm(), beta.norm())
    if residual > WEAK_RESIDUAL_LIMIT:
        raise ObstructionUnsolvable(f"weakly restricted residual {residual:.2e}")
    return WeaklyRestrictedData(
        g_beta=g_beta,
        beta=beta,
        residual=residual,
        harmonic_defect=harmonic.harmonic_norm,
        tangency=tangency,
    )


def _normalize_beta(beta: TensorField, harmonic, structure: ComplexStructureField) -> TensorField:
    """Add a holomorphic vector field so that omega.beta has no harmonic part."""
    if harmonic.harmonic_norm == 0.0:
        return beta
    domain = structure.domain
    if structure.is_constant:
        # omega.c = -mean(omega.beta) for a constant c
        shift = -np.linalg.solve(structure.symplectic.matrix, harmonic.harmonic.mean())
        return beta + TensorField.constant(domain, (UP,), shift)
    h_field = holomorphic_vector_field(structure)
    h_class = solve_dbar_scalar(
        contract(structure.symplectic.omega, h_field, [(1, 0)]), structure
    ).coefficients[0]
    return beta + h_field * (-harmonic.coefficients[0] / h_class)


def _variable_weakly_restricted(mu: TensorField, structure: ComplexStructureField):
    domain = structure.domain
    omega = structure.symplectic.omega
    frame, apply_op = frame_vector_operator(structure)
    tau_mean = complex(np.mean(frame.tau))

    h_field = holomorphic_vector_field(structure)
    h_coeff = frame.vector_coefficient(h_field.values)
    holo_bivector = TensorField(domain, (UP, UP), frame.bivector_from_coefficient(h_coeff ** 2))
    lam = frame.endo_coefficient(contract(holo_bivector, omega, [(1, 0)]).values)
    v = frame.endo_coefficient(mu.values)

    b_part, s, _ = augmented_solve(apply_op, -v, domain, tau_mean, label="weak beta")
    q_part, s_g, _ = augmented_solve(apply_op, -lam, domain, tau_mean, label="weak G")
    if abs(s_g) < 1e-14:
        raise ObstructionUnsolvable("holomorphic bivector lies in the image of dbar")
    gamma = s / s_g
    beta = TensorField(domain, (UP,), frame.vector_from_coefficient(b_part - gamma * q_part))
    return holo_bivector * gamma, beta


# ===================================================================
# Variation checks
# ===================================================================

def var_ricci_check(chart: FamilyChart, sigma, direction,
                    tolerance: float = DEFAULT_TOLERANCE) -> float:
    """|V[rho] - d(delta G~(V).omega)/2|, V[rho] by Richardson differences.

    Relative to max(1, |V[rho]|).
    """
    sigma = chart.check_interior(sigma)
    direction = np.asarray(direction, dtype=complex)
    structure = chart.structure_at(sigma)
    variation = var_j(chart, sigma, direction)
    lc = structure.levi_civita
    div = lc.divergence(variation.g_tilde, slot=0)
    one_form = contract(div, chart.symplectic.omega, [(0, 0)])
    predicted = exterior_derivative(one_form) * 0.5
    fd = complex_direction_derivative(
        lambda p: chart.structure_at(p).levi_civita.ricci_form.values, sigma, direction,
        chart.fd_step, tolerance, label="ricci form",
    )
    return float(np.max(np.abs(fd - predicted.values))) / max(1.0, float(np.max(np.abs(fd))))


def var_levi_civita_check(chart: FamilyChart, sigma, direction,
                          tolerance: float = DEFAULT_TOLERANCE) -> float:
    """|V[Gamma] - predicted| with the prediction from nabla G~(V).

    ``2 V[Gamma]^c_{ab} = nabla_a G~^{cu} g_{ub} + g_{au} nabla_b G~^{uc}
    - g_{au} g~^{cw} nabla_w G~^{uv} g_{vb}``.
    """
    sigma = chart.check_interior(sigma)
    direction = np.asarray(direction, dtype=complex)
    structure = chart.structure_at(sigma)
    variation = var_j(chart, sigma, direction)
    g = structure.metric.values
    g_inv = structure.inverse_metric.values
    dG = structure.levi_civita.covariant_derivative(variation.g_tilde).values  # [w, u, v]
    predicted = 0.5 * (
        np.einsum("acu...,ub...->cab...", dG, g)
        + np.einsum("au...,buc...->cab...", g, dG)
        - np.einsum("au...,cw...,wuv...,vb...->cab...", g, g_inv, dG, g)
    )
    fd = complex_direction_derivative(
        lambda p: chart.structure_at(p).levi_civita.christoffel, sigma, direction,
        chart.fd_step, tolerance, label="christoffel",
    )
    return float(np.max(np.abs(fd - predicted))) / max(1.0, float(np.max(np.abs(fd))))
