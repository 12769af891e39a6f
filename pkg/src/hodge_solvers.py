"""dbar inversion with harmonic obstructions on the torus.

Constant complex structures are inverted exactly, mode by mode, in Fourier
space; the zero mode is the harmonic part.  Non-constant structures (2-tori
only) are handled on frame coefficients: the unknown potential with zero
mean and one constant harmonic unknown form a square system

    A(u) = L(u - mean u) + mean(u)

solved by GMRES, preconditioned with the exact Fourier inverse of the
operator frozen at the mean modulus.  The Ricci potential solves the
metric-trace Poisson problem by preconditioned CG and is then checked on the
full 2-form.

Usage::

    from hodge_solvers import solve_dbar_scalar, ricci_potential

    sol = solve_dbar_scalar(alpha, structure)
    sol.potential, sol.harmonic, sol.residual
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg, gmres

from errors import ClassObstruction, ObstructionNonzero, SolverStagnation
from tensor_geometry import (
    ANTIHOLOMORPHIC,
    DOWN,
    HOLOMORPHIC,
    UP,
    ComplexStructureField,
    GridDomain,
    TensorField,
    contract,
    exterior_derivative,
    type_project,
)
from utils.finite_diff import DEFAULT_STEP, DEFAULT_TOLERANCE, complex_direction_derivative
from utils.frames import surface_frame
from utils.spectral import (
    derivative,
    fftn_grid,
    frequency_grid,
    gradient,
    grid_mean,
    ifftn_grid,
)

logger = logging.getLogger(__name__)

SOLVER_RTOL = 1e-12
STAGNATION_LIMIT = 1e-9
CLASS_TOLERANCE = 1e-8
GATE_TOLERANCE = 1e-7


# ===================================================================
# Result types
# ===================================================================

@dataclass(frozen=True, eq=False)
class DbarSolution:
    """potential with zero average, harmonic remainder and the defining-equation residual.

    ``coefficients`` are the harmonic part in the antiholomorphic frame
    (``d conj(w_j)`` for constant structures, ``conj(theta)`` on a 2-torus).
    """

    potential: TensorField
    harmonic: TensorField
    coefficients: np.ndarray
    residual: float
    iterations: int = 0

    @property
    def harmonic_norm(self) -> float:
        return self.harmonic.norm()


@dataclass(frozen=True, eq=False)
class RicciPotential:
    potential: TensorField
    residual: float
    class_defect: float
    iterations: int = 0


@dataclass(frozen=True, eq=False)
class OmegaData:
    """Omega(V) with its closedness and type diagnostics.

    In smooth mode ``closed_form`` adds the conj(G) terms that make the form
    closed; in holomorphic mode it is Omega itself.
    """

    omega: TensorField
    closed_form: TensorField
    d_residual: float
    purity: float
    solution: DbarSolution

    @property
    def harmonic_norm(self) -> float:
        return self.solution.harmonic_norm


# ===================================================================
# Forward operators
# ===================================================================

def dbar_function(phi: TensorField, structure: ComplexStructureField) -> TensorField:
    """(dbar phi)_b = (d_b phi + i J^d_b d_d phi) / 2."""
    return type_project(exterior_derivative(phi), structure, (ANTIHOLOMORPHIC,))


def dbar_vector(beta: TensorField, structure: ComplexStructureField) -> TensorField:
    """dbar of a T'-valued field as the (0,1) part of its Levi-Civita derivative.

    Returns ``(dbar beta)^a_b`` with signature (up, down).
    """
    if beta.signature != (UP,):
        raise ValueError(f"expected a vector field, got {beta.signature}")
    cov = structure.levi_civita.covariant_derivative(beta)  # [b, a] = nabla_b beta^a
    swapped = TensorField(beta.domain, (UP, DOWN), np.swapaxes(cov.values, 0, 1))
    return type_project(swapped, structure, (None, ANTIHOLOMORPHIC))


# ===================================================================
# Constant structures: Fourier division
# ===================================================================

def _dbar_symbols(structure: ComplexStructureField) -> list[np.ndarray]:
    """sigma_b(xi) with dbar e^{2 pi i xi.x} = sigma_b e^{2 pi i xi.x} dx^b."""
    domain = structure.domain
    n, d = domain.N, domain.dim
    freqs = frequency_grid(n, d)
    ik = []
    for f in freqs:
        kappa = 2j * np.pi * f
        kappa = np.where(f == -(n // 2), 0.0, kappa)
        ik.append(kappa)
    j = structure.J.mean().real
    return [0.5 * (ik[b] + 1j * sum(j[dd, b] * ik[dd] for dd in range(d))) for b in range(d)]


def _fourier_dbar_inverse(components: np.ndarray, structure: ComplexStructureField) -> np.ndarray:
    """Least-squares inverse of dbar on mean-free data, one scalar problem per leading index.

    ``components`` has shape ``lead + (2m,) + grid``; the returned potentials
    have shape ``lead + grid`` and zero mean.
    """
    d = structure.domain.dim
    symbols = _dbar_symbols(structure)
    denom = sum(np.abs(s) ** 2 for s in symbols)
    safe = np.where(denom > 0, denom, 1.0)
    spectrum = fftn_grid(components, d)
    numer = sum(
        np.take(spectrum, b, axis=components.ndim - d - 1) * np.conj(symbols[b])
        for b in range(d)
    )
    return ifftn_grid(np.where(denom > 0, numer / safe, 0.0), d)


# ===================================================================
# Variable structures on 2-tori: augmented GMRES on frame coefficients
# ===================================================================

def _resolved_mask(domain: GridDomain) -> np.ndarray:
    """True for modes that are neither the zero mode nor on a Nyquist line."""
    freqs = frequency_grid(domain.N, domain.dim)
    mask = np.ones(domain.shape, dtype=bool)
    for f in freqs:
        mask &= f != -(domain.N // 2)
    zero = np.all([f == 0 for f in freqs], axis=0)
    return mask & ~zero


def _frame_symbol(domain: GridDomain, tau: complex) -> np.ndarray:
    """Fourier symbol of u -> e(u) / conj(theta)(e) for constant tau."""
    fx, fy = frequency_grid(domain.N, domain.dim)
    return (2j * np.pi * fy - tau * 2j * np.pi * fx) / (np.conj(tau) - tau)


def augmented_solve(
    apply_op: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    domain: GridDomain,
    tau_mean: complex,
    label: str = "",
    rtol: float = SOLVER_RTOL,
) -> tuple[np.ndarray, complex, int]:
    """Solve ``L(u') + h = rhs`` for mean-free ``u'`` and constant ``h``.

    ``apply_op`` maps a grid array to a grid array (the frame-coefficient
    form of a dbar operator).  Returns ``(u', h, iterations)``.
    """
    shape = rhs.shape
    mask = _resolved_mask(domain)
    d = domain.dim
    symbol = _frame_symbol(domain, tau_mean)
    precond = np.where(mask, symbol, 1.0)

    def split(u: np.ndarray) -> tuple[np.ndarray, complex, np.ndarray]:
        spectrum = fftn_grid(u, d)
        resolved = ifftn_grid(np.where(mask, spectrum, 0.0), d)
        return resolved, complex(np.mean(u)), u - resolved

    def matvec(vec: np.ndarray) -> np.ndarray:
        resolved, mean, rest = split(vec.reshape(shape))
        rest = rest - mean
        return (apply_op(resolved) + mean + rest).ravel()

    def psolve(vec: np.ndarray) -> np.ndarray:
        return ifftn_grid(fftn_grid(vec.reshape(shape), d) / precond, d).ravel()

    n = rhs.size
    op = LinearOperator((n, n), matvec=matvec, dtype=complex)
    pre = LinearOperator((n, n), matvec=psolve, dtype=complex)
    counter = {"iterations": 0}

    def _count(_residual) -> None:
        counter["iterations"] += 1

    solution, info = gmres(
        op, rhs.ravel().astype(complex), rtol=rtol, atol=0.0, restart=60, maxiter=40,
        M=pre, callback=_count, callback_type="pr_norm",
    )
    achieved = np.linalg.norm(matvec(solution) - rhs.ravel()) / max(np.linalg.norm(rhs), 1e-300)
    logger.debug("gmres %s: info=%d iterations=%d residual=%.2e",
                 label, info, counter["iterations"], achieved)
    if achieved > STAGNATION_LIMIT:
        raise SolverStagnation(
            f"GMRES for {label or 'dbar'} stalled at relative residual {achieved:.2e}"
        )
    resolved, mean, _ = split(solution.reshape(shape))
    return resolved, mean, counter["iterations"]


def _frame_scalar_operator(structure: ComplexStructureField):
    frame = surface_frame(structure.J.values)
    d = structure.domain.dim

    def apply_op(u: np.ndarray) -> np.ndarray:
        grad = gradient(u, d)
        return np.einsum("b...,b...->...", grad, frame.e) / frame.theta_bar_e

    return frame, apply_op


def frame_vector_operator(structure: ComplexStructureField):
    """b -> coefficient of dbar(b f) on conj(theta) (x) f, for a 2-torus."""
    frame = surface_frame(structure.J.values)
    domain = structure.domain

    def apply_op(b: np.ndarray) -> np.ndarray:
        beta = TensorField(domain, (UP,), frame.vector_from_coefficient(b))
        return frame.endo_coefficient(dbar_vector(beta, structure).values)

    return frame, apply_op


def _require_surface(structure: ComplexStructureField) -> None:
    if structure.domain.m != 1:
        raise ValueError("non-constant complex structures are supported on 2-tori only")


# ===================================================================
# Public solvers
# ===================================================================

def solve_dbar_scalar(alpha: TensorField, structure: ComplexStructureField) -> DbarSolution:
    """Potential phi (zero mean) and harmonic h with dbar phi + h = alpha.

    Raises
    ------
    SolverStagnation
        The iterative solve for a non-constant structure did not converge.
    """
    if alpha.signature != (DOWN,):
        raise ValueError(f"expected a 1-form, got {alpha.signature}")
    domain = alpha.domain
    m = domain.m
    iterations = 0
    if structure.is_constant:
        mean = alpha.mean()
        phi = _fourier_dbar_inverse(alpha.values, structure)
        harmonic = TensorField.constant(domain, (DOWN,), mean)
        coefficients = np.asarray(mean[:m], dtype=complex)
    else:
        _require_surface(structure)
        frame, apply_op = _frame_scalar_operator(structure)
        rhs = frame.form_coefficient(alpha.values)
        phi, h, iterations = augmented_solve(
            apply_op, rhs, domain, complex(np.mean(frame.tau)), label="dbar scalar"
        )
        harmonic = TensorField(domain, (DOWN,), frame.form_from_coefficient(h * np.ones(domain.shape)))
        coefficients = np.array([h])
    potential = TensorField.scalar(domain, phi)
    residual = (dbar_function(potential, structure) + harmonic - alpha).norm()
    return DbarSolution(potential, harmonic, coefficients, residual, iterations)


def solve_dbar_vector(mu: TensorField, structure: ComplexStructureField) -> DbarSolution:
    """T'-valued potential beta (zero mean) and harmonic h with dbar beta + h = mu."""
    if mu.signature != (UP, DOWN):
        raise ValueError(f"expected a T'-valued 1-form, got {mu.signature}")
    domain = mu.domain
    m = domain.m
    iterations = 0
    if structure.is_constant:
        mean = mu.mean()
        beta = _fourier_dbar_inverse(mu.values, structure)
        harmonic = TensorField.constant(domain, (UP, DOWN), mean)
        coefficients = np.asarray(mean[:, :m], dtype=complex)
    else:
        _require_surface(structure)
        frame, apply_op = frame_vector_operator(structure)
        rhs = frame.endo_coefficient(mu.values)
        b, h, iterations = augmented_solve(
            apply_op, rhs, domain, complex(np.mean(frame.tau)), label="dbar vector"
        )
        beta = frame.vector_from_coefficient(b)
        harmonic = TensorField(
            domain, (UP, DOWN), frame.endo_from_coefficient(h * np.ones(domain.shape))
        )
        coefficients = np.array([h])
    potential = TensorField(domain, (UP,), beta)
    residual = (dbar_vector(potential, structure) + harmonic - mu).norm()
    return DbarSolution(potential, harmonic, coefficients, residual, iterations)


def holomorphic_vector_field(structure: ComplexStructureField) -> TensorField:
    """The holomorphic section of T' normalized to mean frame coefficient 1 (2-tori)."""
    domain = structure.domain
    _require_surface(structure)
    if structure.is_constant:
        frame = surface_frame(structure.J.values)
        return TensorField(domain, (UP,), frame.f.astype(complex))
    frame, apply_op = frame_vector_operator(structure)
    ones = np.ones(domain.shape, dtype=complex)
    correction, slack, _ = augmented_solve(
        apply_op, -apply_op(ones), domain, complex(np.mean(frame.tau)), label="holomorphic field"
    )
    logger.debug("holomorphic field slack %.2e", abs(slack))
    return TensorField(domain, (UP,), frame.vector_from_coefficient(ones + correction))


# ===================================================================
# Ricci potential
# ===================================================================

def ricci_potential(structure: ComplexStructureField, n: int = 0) -> RicciPotential:
    """Real F with zero mean and rho = n omega + 2i d dbar F.

    Uses ``2i d dbar F = -d(dF o J)`` and solves its trace against
    omega~, ``-2 d_c(g~^{ac} d_a F) = (rho - n omega)_{ab} omega~^{ab}``,
    by preconditioned CG.  The residual is measured on the full 2-form.

    Raises
    ------
    ClassObstruction
        The trace of rho - n omega has a non-zero average.
    """
    domain = structure.domain
    d = domain.dim
    omega = structure.symplectic.omega
    rho = structure.levi_civita.ricci_form
    target = rho - omega * n
    rhs = np.einsum("ab...,ab...->...", target.values, structure.symplectic.omega_inv.values).real
    scale = max(1.0, float(np.max(np.abs(rhs))))
    class_defect = abs(float(np.mean(rhs))) / scale
    if class_defect > CLASS_TOLERANCE:
        raise ClassObstruction(
            f"rho - {n} omega has non-zero class (trace mean {class_defect:.2e})"
        )

    g_inv = structure.inverse_metric.values.real
    mask = _resolved_mask(domain)
    freqs = frequency_grid(domain.N, d)
    g_mean = grid_mean(g_inv, d)
    symbol = 8.0 * np.pi ** 2 * sum(
        g_mean[a, c] * freqs[a] * freqs[c] for a in range(d) for c in range(d)
    )
    precond = np.where(mask, symbol, 1.0)
    shape = domain.shape

    def project(u: np.ndarray) -> np.ndarray:
        return ifftn_grid(np.where(mask, fftn_grid(u, d), 0.0), d).real

    def apply_k(u: np.ndarray) -> np.ndarray:
        grad = gradient(u, d).real
        flux = np.einsum("ac...,a...->c...", g_inv, grad)
        return -2.0 * sum(derivative(flux[c], c, d).real for c in range(d))

    def matvec(vec: np.ndarray) -> np.ndarray:
        u = vec.reshape(shape)
        pu = project(u)
        return (project(apply_k(pu)) + (u - pu)).ravel()

    def psolve(vec: np.ndarray) -> np.ndarray:
        return ifftn_grid(fftn_grid(vec.reshape(shape), d) / precond, d).real.ravel()

    size = domain.points
    op = LinearOperator((size, size), matvec=matvec, dtype=float)
    pre = LinearOperator((size, size), matvec=psolve, dtype=float)
    counter = {"iterations": 0}

    def _count(_xk) -> None:
        counter["iterations"] += 1

    b = project(rhs).ravel()
    solution, info = cg(op, b, rtol=SOLVER_RTOL, atol=0.0, maxiter=500, M=pre, callback=_count)
    achieved = np.linalg.norm(matvec(solution) - b) / max(np.linalg.norm(b), 1e-300)
    if np.linalg.norm(b) > 0 and achieved > STAGNATION_LIMIT:
        raise SolverStagnation(f"CG for the Ricci potential stalled at {achieved:.2e}")
    logger.debug("ricci potential: info=%d iterations=%d", info, counter["iterations"])

    potential = TensorField.scalar(domain, project(solution.reshape(shape)).astype(complex))
    residual = (target + ricci_form_of_potential(potential, structure)).norm() / max(
        1.0, rho.norm()
    )
    return RicciPotential(potential, residual, class_defect, counter["iterations"])


def ricci_form_of_potential(F: TensorField, structure: ComplexStructureField) -> TensorField:
    """d(dF o J), which equals -2i d dbar F."""
    dF = exterior_derivative(F)
    dfj = contract(dF, structure.J, [(0, 0)])
    return exterior_derivative(dfj)


def ricci_potential_variation(chart, sigma, direction, n: int = 0,
                              step: float = DEFAULT_STEP,
                              tolerance: float = DEFAULT_TOLERANCE) -> TensorField:
    """V[F] by Richardson differences of the zero-mean Ricci potential along ``chart``."""
    sigma = np.asarray(sigma, dtype=float)
    direction = np.asarray(direction, dtype=complex)
    if not np.any(direction):
        return TensorField.zeros(chart.domain, ())

    def potential_at(point: np.ndarray) -> np.ndarray:
        return ricci_potential(chart.structure_at(point), n).potential.values

    values = complex_direction_derivative(
        potential_at, sigma, direction, step, tolerance, label="ricci potential"
    )
    return TensorField.scalar(chart.domain, values)


# ===================================================================
# Omega(V), obstruction map and potentials
# ===================================================================

def omega_form(
    weakly_restricted,
    structure: ComplexStructureField,
    F: TensorField,
    variation_of_f: TensorField,
    g_bar: TensorField | None = None,
) -> OmegaData:
    """Assemble Omega(V) and its diagnostics.

    ``Omega = -delta(G_b).omega + delta(dbar b) - 2 dF.G_b.omega + 2 dbar b.dF
    + 4i dbar V[F]``.  With ``g_bar`` (smooth families) the closedness check
    runs on ``Omega - delta(conj G).omega - 2 dF.conj(G).omega``.
    """
    lc = structure.levi_civita
    omega = structure.symplectic.omega
    g_beta = weakly_restricted.g_beta
    beta = weakly_restricted.beta
    dF = exterior_derivative(F)

    def bivector_terms(bivector: TensorField) -> TensorField:
        div = lc.divergence(bivector, slot=0)
        lowered = contract(div, omega, [(0, 0)])
        flow = contract(contract(dF, bivector, [(0, 0)]), omega, [(0, 0)])
        return -lowered - flow * 2.0

    dbar_beta = dbar_vector(beta, structure)
    value = (
        bivector_terms(g_beta)
        + lc.divergence(dbar_beta, slot=0)
        + contract(dbar_beta, dF, [(0, 0)]) * 2.0
        + dbar_function(variation_of_f, structure) * 4j
    )
    closed = value if g_bar is None else value + bivector_terms(g_bar)
    scale = max(1.0, value.norm())
    d_residual = exterior_derivative(closed).norm() / scale
    purity = type_project(value, structure, (HOLOMORPHIC,)).norm() / scale
    solution = solve_dbar_scalar(value, structure)
    logger.debug("omega form: |Omega|=%.2e dOmega=%.2e purity=%.2e harmonic=%.2e",
                 value.norm(), d_residual, purity, solution.harmonic_norm)
    return OmegaData(value, closed, d_residual, purity, solution)


def obstruction_map(omega: OmegaData) -> np.ndarray:
    """The harmonic class [Omega](V) in the antiholomorphic frame."""
    return omega.solution.coefficients


def phi_of(weakly_restricted, structure: ComplexStructureField) -> DbarSolution:
    """phi(V) with dbar phi = omega.beta(V), zero average."""
    omega = structure.symplectic.omega
    return solve_dbar_scalar(contract(omega, weakly_restricted.beta, [(1, 0)]), structure)


def psi_of(omega: OmegaData, gate: float = GATE_TOLERANCE) -> DbarSolution:
    """psi(V) with dbar psi = Omega(V), only inside ker[Omega].

    Raises
    ------
    ObstructionNonzero
        The harmonic class of Omega(V) exceeds ``gate``.
    """
    norm = omega.harmonic_norm
    if norm > gate:
        logger.warning("obstruction gate closed: |[Omega]| = %.3e > %.1e", norm, gate)
        raise ObstructionNonzero(f"|[Omega](V)| = {norm:.3e} exceeds gate {gate:.1e}")
    return omega.solution
