"""Holomorphic section spaces H^(k)_J and their quantum operators.

Two independent constructions of a basis of ker nabla^{0,1}:

* ``theta_basis``: closed-form theta sections for the linear structure J_Z,
  ``theta_j = sum_{l = j mod k} exp(pi i k q^T Z q) exp(2 pi i l.x)`` with
  ``q = y + l/k``;
* ``numerical_kernel``: the smallest right singular vectors of the dense
  matrix of ``s -> (nabla s)^{0,1}`` on the grid, valid for any structure.

Quantum operators are ``Q_k(f) = pi_J o P_k(f)`` written in a basis
through its Gram matrix.

Usage::

    basis = theta_basis(1j, k=2, domain=GridDomain(1, 64))
    q = quantum_operator(TrigPolynomial.cosine((1, 0)), basis)
    q.orthonormal()          # matrix in a Gram-orthonormal frame
"""

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky, solve_triangular, svd
from scipy.linalg import subspace_angles
from scipy.sparse.linalg import LinearOperator, lobpcg

from config import config
from errors import AmbiguousDimension, SingularGram, TruncationInsufficient
from kahler_family import SiegelPoint, linear_family_j
from prequantum_bundle import (
    SectionField,
    bundle_gradient,
    cov_deriv_type,
    inner_product,
    poisson_bracket,
    prequantum_apply,
)
from tensor_geometry import ANTIHOLOMORPHIC, ComplexStructureField, GridDomain

logger = logging.getLogger(__name__)

THETA_CUTOFF = 1e-16
GAP_RATIO = 1e3
GRAM_CONDITION_LIMIT = 1e12
MAX_STUDY_GRID = 512
WARM_GUARD = 2
WARM_MAXITER = 60
WARM_TOLERANCE = 1e-10

THETA_ORACLE = "theta-oracle"
NUMERICAL_KERNEL = "numerical-kernel"


# ===================================================================
# Observables
# ===================================================================

@dataclass(frozen=True)
class TrigPolynomial:
    """Real trigonometric polynomial ``sum a cos(2 pi n.x) + b sin(2 pi n.x)``.

    ``terms`` holds ``(n, a, b)`` with integer frequency vectors over all 2m
    real coordinates.
    """

    terms: tuple[tuple[tuple[int, ...], float, float], ...]
    label: str = ""

    @classmethod
    def cosine(cls, freq, amplitude: float = 1.0) -> "TrigPolynomial":
        return cls(((tuple(freq), amplitude, 0.0),), label=f"cos{tuple(freq)}")

    @classmethod
    def sine(cls, freq, amplitude: float = 1.0) -> "TrigPolynomial":
        return cls(((tuple(freq), 0.0, amplitude),), label=f"sin{tuple(freq)}")

    @classmethod
    def constant(cls, value: float, dim: int) -> "TrigPolynomial":
        return cls((((0,) * dim, value, 0.0),), label=f"const{value}")

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        total = np.zeros(coords.shape[1:])
        for freq, a, b in self.terms:
            phase = 2.0 * np.pi * np.tensordot(np.asarray(freq, dtype=float), coords, axes=(0, 0))
            total = total + a * np.cos(phase) + b * np.sin(phase)
        return total

    @property
    def descriptor(self) -> str:
        if self.label:
            return self.label
        return " + ".join(f"{a}cos{n}+{b}sin{n}" for n, a, b in self.terms)


# ===================================================================
# Bases
# ===================================================================

@dataclass(frozen=True, eq=False)
class HolomorphicBasis:
    """A basis of holomorphic sections of L^k with its Gram matrix.

    ``gram[i, j] = <s_j, s_i>`` so that coefficient vectors pair as
    ``<u, v> = d^H gram c``.
    """

    structure: ComplexStructureField
    k: int
    sections: tuple[SectionField, ...]
    gram: np.ndarray
    method: str

    @property
    def domain(self) -> GridDomain:
        return self.structure.domain

    @property
    def dimension(self) -> int:
        return len(self.sections)

    @property
    def matrix(self) -> np.ndarray:
        """Section values stacked as rows, shape ``(dimension, points)``."""
        return np.stack([s.values.ravel() for s in self.sections])

    def cholesky_factor(self) -> np.ndarray:
        """Lower-triangular L with gram = L L^H."""
        try:
            return cholesky(self.gram, lower=True)
        except LinAlgError as exc:
            raise SingularGram(f"Gram matrix is not positive definite: {exc}") from exc

    def combine(self, coefficients) -> SectionField:
        """sum_j c_j s_j."""
        coefficients = np.asarray(coefficients, dtype=complex)
        values = np.tensordot(coefficients, np.stack([s.values for s in self.sections]), axes=1)
        return SectionField(self.domain, self.k, values)

    def holomorphic_residual(self) -> float:
        return max(dbar_residual(s, self.structure) for s in self.sections)


@dataclass(frozen=True, eq=False)
class QuantumOperatorMatrix:
    """Q_k(f) in a HolomorphicBasis: ``Q s_j = sum_i matrix[i, j] s_i``."""

    matrix: np.ndarray
    k: int
    descriptor: str
    basis: HolomorphicBasis

    def orthonormal(self) -> np.ndarray:
        """L^H Q L^{-H} for gram = L L^H."""
        L = self.basis.cholesky_factor()
        right = solve_triangular(L, np.eye(L.shape[0]), lower=True).conj().T
        return L.conj().T @ self.matrix @ right

    def skew_defect(self) -> float:
        """|Q + Q^H| / |Q| in the orthonormal frame; zero for real f."""
        q = self.orthonormal()
        return float(np.linalg.norm(q + q.conj().T) / max(np.linalg.norm(q), 1e-300))


def gram_matrix(sections) -> np.ndarray:
    first = sections[0]
    weight = (2.0 * np.pi) ** first.domain.m / first.domain.points
    rows = np.stack([s.values.ravel() for s in sections])
    return weight * (rows.conj() @ rows.T)


def _checked_gram(sections) -> np.ndarray:
    gram = gram_matrix(sections)
    gram = 0.5 * (gram + gram.conj().T)
    condition = np.linalg.cond(gram)
    if not np.isfinite(condition) or condition > GRAM_CONDITION_LIMIT:
        raise SingularGram(f"Gram matrix condition number {condition:.3e}")
    return gram


def dbar_residual(s: SectionField, structure: ComplexStructureField) -> float:
    """|nabla^{0,1} s| / (k |s|), grid max-norms."""
    grad = cov_deriv_type(s, structure, ANTIHOLOMORPHIC)
    return grad.norm() / max(1.0, s.k) / max(s.norm(), 1e-300)


# ===================================================================
# Theta oracle
# ===================================================================

def _theta_support(point: SiegelPoint, k: int, domain: GridDomain) -> list[np.ndarray]:
    """Lattice vectors l whose theta terms exceed the cutoff somewhere on the grid."""
    m = domain.m
    im_z = point.Z.imag
    lam = float(np.min(np.linalg.eigvalsh(im_z)))
    reach = int(np.ceil(k * (np.sqrt(m) + np.sqrt(-np.log(THETA_CUTOFF) / (np.pi * k * lam))))) + 1
    ys = domain.coordinates[m:].reshape(m, -1)
    # y values repeat across x, keep the distinct ones
    ys = np.unique(ys.T, axis=0).T
    kept = []
    for ell in product(range(-reach, reach + 1), repeat=m):
        ell = np.asarray(ell, dtype=float)
        q = ys + (ell / k)[:, None]
        exponent = -np.pi * k * np.einsum("ap,ab,bp->p", q, im_z, q)
        if np.max(exponent) > np.log(THETA_CUTOFF):
            kept.append(ell.astype(int))
    return kept


def theta_basis(Z, k: int, domain: GridDomain, structure: ComplexStructureField | None = None
                ) -> HolomorphicBasis:
    """The k^m theta sections of L^k for J_Z.

    Raises
    ------
    NotInSiegel
        Z is not in the Siegel upper half-space.
    TruncationInsufficient
        A retained term has an x-frequency the grid cannot represent.
    """
    if k < 1:
        raise ValueError(f"theta sections need k >= 1, got {k}")
    point = Z if isinstance(Z, SiegelPoint) else SiegelPoint(np.asarray(Z, dtype=complex))
    structure = structure or linear_family_j(point, domain)
    m = domain.m
    support = _theta_support(point, k, domain)
    limit = domain.N // 2
    too_wide = [ell for ell in support if np.max(np.abs(ell)) >= limit]
    if too_wide:
        raise TruncationInsufficient(
            f"theta series at k={k} needs x-frequency {int(np.max(np.abs(too_wide)))} "
            f"but N={domain.N} resolves |l| < {limit}"
        )

    coords = domain.coordinates
    x, y = coords[:m], coords[m:]
    sections = {residue: np.zeros(domain.shape, dtype=complex)
                for residue in product(range(k), repeat=m)}
    for ell in support:
        q = y + (ell / k).reshape((m,) + (1,) * domain.dim)
        quad = np.einsum("a...,ab,b...->...", q, point.Z, q)
        phase = np.tensordot(ell.astype(float), x, axes=(0, 0))
        term = np.exp(1j * np.pi * k * quad + 2j * np.pi * phase)
        sections[tuple(int(v) for v in np.mod(ell, k))] += term

    fields = tuple(SectionField(domain, k, sections[r]) for r in sorted(sections))
    gram = _checked_gram(fields)
    logger.debug("theta basis: k=%d terms=%d", k, len(support))
    return HolomorphicBasis(structure, k, fields, gram, THETA_ORACLE)


# ===================================================================
# Numerical kernel
# ===================================================================

def dbar_matrix(structure: ComplexStructureField, k: int) -> np.ndarray:
    """Dense matrix of s -> x-components of (nabla s)^{0,1}.

    The x-components determine a (0,1)-form, so the kernel is unchanged.
    """
    domain = structure.domain
    m, points = domain.m, domain.points
    identity = np.eye(points, dtype=complex).reshape((points,) + domain.shape)
    grad = bundle_gradient(identity, domain, k)  # [d, p] + grid
    j = structure.J.values
    eye = np.eye(domain.dim).reshape((domain.dim, domain.dim) + (1,) * domain.dim)
    proj = 0.5 * (eye + 1j * j)
    projected = np.einsum("db...,dp...->bp...", proj[:, :m], grad)
    return np.moveaxis(projected.reshape(m, points, points), 1, -1).reshape(m * points, points)


def _dense_kernel(matrix: np.ndarray, structure: ComplexStructureField, k: int, gap: float
                  ) -> tuple[HolomorphicBasis, np.ndarray, np.ndarray]:
    """Kernel basis from a full SVD, plus the singular values and right vectors."""
    expected = k ** structure.domain.m
    _, singular, vh = svd(matrix, full_matrices=False, lapack_driver="gesdd")
    ascending = singular[::-1]
    ratios = ascending[1:] / np.maximum(ascending[:-1], 1e-300)
    window = min(len(ratios), 4 * expected + 4)
    observed = int(np.argmax(ratios[:window])) + 1
    ratio = float(ratios[expected - 1])
    logger.debug("kernel k=%d: sv[%d]=%.2e sv[%d]=%.2e ratio=%.2e observed=%d",
                 k, expected - 1, ascending[expected - 1], expected, ascending[expected],
                 ratio, observed)
    if ratio < gap or observed != expected:
        raise AmbiguousDimension(
            f"expected dim {expected}, singular-value gap ratio {ratio:.2e} "
            f"(largest gap after index {observed})"
        )
    basis = _kernel_basis(structure, k, vh[-expected:][::-1].conj())
    return basis, singular, vh


def _kernel_basis(structure: ComplexStructureField, k: int, vectors: np.ndarray
                  ) -> HolomorphicBasis:
    domain = structure.domain
    scale = np.sqrt(domain.points / (2.0 * np.pi) ** domain.m)
    fields = tuple(SectionField(domain, k, v.reshape(domain.shape)) for v in vectors * scale)
    return HolomorphicBasis(structure, k, fields, _checked_gram(fields), NUMERICAL_KERNEL)


def numerical_kernel(structure: ComplexStructureField, k: int, gap: float = GAP_RATIO
                     ) -> HolomorphicBasis:
    """Orthonormal basis of the numerical kernel of nabla^{0,1}.

    Raises
    ------
    AmbiguousDimension
        The singular values show no gap of ratio ``gap`` at index k^m.
    """
    if k < 1:
        raise ValueError(f"numerical kernels need k >= 1, got {k}")
    basis, _, _ = _dense_kernel(dbar_matrix(structure, k), structure, k, gap)
    return basis


class KernelTracker:
    """Numerical kernels at a sequence of nearby structures.

    The first call (and any call whose warm solve does not settle) runs the
    dense SVD.  Later calls run LOBPCG on ``A^H A`` seeded with the previous
    kernel, preconditioned by the pseudo-inverse of the last dense normal
    matrix.  A warm result is kept only if its kernel singular values sit
    ``gap`` below the guard Ritz values.
    """

    def __init__(self, k: int, gap: float = GAP_RATIO, maxiter: int = WARM_MAXITER):
        if k < 1:
            raise ValueError(f"numerical kernels need k >= 1, got {k}")
        self.k, self.gap, self.maxiter = k, gap, maxiter
        self.dense_solves = 0
        self.warm_solves = 0
        self._previous: HolomorphicBasis | None = None
        self._preconditioner: LinearOperator | None = None
        self._first_gap = 0.0

    def __call__(self, structure: ComplexStructureField) -> HolomorphicBasis:
        matrix = dbar_matrix(structure, self.k)
        basis = None
        if self._previous is not None and self._previous.domain == structure.domain:
            basis = self._warm(matrix, structure)
        if basis is None:
            basis, singular, vh = _dense_kernel(matrix, structure, self.k, self.gap)
            self._refactor(singular, vh, basis.dimension)
            self.dense_solves += 1
        else:
            self.warm_solves += 1
        self._previous = basis
        return basis

    def _refactor(self, singular: np.ndarray, vh: np.ndarray, expected: int) -> None:
        self._first_gap = float(singular[::-1][expected]) ** 2
        weights = 1.0 / (singular ** 2 + self._first_gap)
        basis_h = vh.conj().T

        def apply(x):
            coeffs = vh @ x
            return basis_h @ (coeffs * (weights if coeffs.ndim == 1 else weights[:, None]))

        size = vh.shape[1]
        self._preconditioner = LinearOperator((size, size), matvec=apply, matmat=apply,
                                              dtype=complex)

    def _warm(self, matrix: np.ndarray, structure: ComplexStructureField
              ) -> HolomorphicBasis | None:
        expected = self._previous.dimension
        size = matrix.shape[1]
        adjoint = matrix.conj().T

        def normal(x):
            return adjoint @ (matrix @ x)

        operator = LinearOperator((size, size), matvec=normal, matmat=normal, dtype=complex)
        rng = np.random.default_rng(size)
        shape = (size, WARM_GUARD)
        guard = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        start, _ = np.linalg.qr(np.hstack([self._previous.matrix.T, guard]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                values, vectors = lobpcg(
                    operator, start, M=self._preconditioner, largest=False,
                    tol=WARM_TOLERANCE * self._first_gap, maxiter=self.maxiter,
                )
            except (LinAlgError, ValueError) as exc:
                logger.debug("warm kernel solve failed: %s", exc)
                return None
        values = np.real(values)
        order = np.argsort(values)
        vectors = vectors[:, order]
        kernel = vectors[:, :expected]
        kernel_sv = float(np.max(np.linalg.norm(matrix @ kernel, axis=0)))
        guard_sv = float(np.sqrt(max(values[order][expected], 0.0)))
        if kernel_sv * self.gap > guard_sv:
            logger.debug("warm kernel rejected: kernel sv %.2e, guard sv %.2e",
                         kernel_sv, guard_sv)
            return None
        try:
            return _kernel_basis(structure, self.k, kernel.T)
        except SingularGram:
            return None


def kernel_singular_values(structure: ComplexStructureField, k: int, count: int) -> np.ndarray:
    """The ``count`` smallest singular values, ascending."""
    singular = svd(dbar_matrix(structure, k), compute_uv=False)
    return singular[::-1][:count]


def principal_angles(a: HolomorphicBasis, b: HolomorphicBasis) -> np.ndarray:
    """Principal angles between the spans; the grid inner product is Euclidean up to scale."""
    a.domain.check_same(b.domain)
    return subspace_angles(a.matrix.T, b.matrix.T)


# ===================================================================
# Projection and quantum operators
# ===================================================================

def projection_coefficients(s: SectionField, basis: HolomorphicBasis) -> np.ndarray:
    rhs = np.array([inner_product(s, member) for member in basis.sections])
    try:
        return cho_solve(cho_factor(basis.gram, lower=True), rhs)
    except LinAlgError as exc:
        raise SingularGram(f"Gram solve failed: {exc}") from exc


def project_holomorphic(s: SectionField, basis: HolomorphicBasis) -> SectionField:
    """Orthogonal projection of ``s`` onto span(basis)."""
    return basis.combine(projection_coefficients(s, basis))


def quantum_operator(f, basis: HolomorphicBasis, descriptor: str | None = None
                     ) -> QuantumOperatorMatrix:
    """Q_k(f) = pi o P_k(f) with matrix gram^{-1} B, ``B[i, j] = <P s_j, s_i>``."""
    symplectic = basis.structure.symplectic
    images = [prequantum_apply(f, s, symplectic) for s in basis.sections]
    b = np.array([[inner_product(img, s_i) for img in images] for s_i in basis.sections])
    try:
        matrix = cho_solve(cho_factor(basis.gram, lower=True), b)
    except LinAlgError as exc:
        raise SingularGram(f"Gram solve failed: {exc}") from exc
    if descriptor is None:
        descriptor = getattr(f, "descriptor", repr(f))
    return QuantumOperatorMatrix(matrix, basis.k, descriptor, basis)


def commutator_defect(f, g, basis: HolomorphicBasis) -> float:
    """Operator norm of [Q(f), Q(g)] - (1/k) Q({f, g}) in an orthonormal frame."""
    symplectic = basis.structure.symplectic
    qf = quantum_operator(f, basis).orthonormal()
    qg = quantum_operator(g, basis).orthonormal()
    bracket = poisson_bracket(f, g, symplectic)
    qfg = quantum_operator(bracket, basis, descriptor="{f,g}").orthonormal()
    return float(np.linalg.norm(qf @ qg - qg @ qf - qfg / basis.k, 2))


@dataclass(frozen=True)
class CommutatorStudy:
    levels: tuple[int, ...]
    defects: tuple[float, ...]
    grids: tuple[int, ...]
    slope: float


def _study_level(f, g, k: int, Z, m: int, start_grid: int) -> tuple[float, int]:
    n = start_grid
    while True:
        domain = GridDomain(m, n)
        try:
            basis = theta_basis(Z, k, domain)
        except TruncationInsufficient:
            if 2 * n > MAX_STUDY_GRID:
                raise
            n *= 2
            continue
        return commutator_defect(f, g, basis), n


def asymptotic_commutator_study(f, g, levels, Z=1j, m: int = 1, start_grid: int = 32,
                                max_workers: int | None = None) -> CommutatorStudy:
    """Commutator defects over ``levels`` and their log-log slope.

    Each level picks the smallest grid (from ``start_grid`` upward) on which
    the theta series fits.
    """
    levels = tuple(sorted(int(k) for k in levels))
    results: dict[int, tuple[float, int]] = {}
    workers = max_workers or config.qlab_threads
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(_study_level, f, g, k, Z, m, start_grid): k for k in levels}
        for future in as_completed(futures):
            results[futures[future]] = future.result()

    defects = tuple(results[k][0] for k in levels)
    grids = tuple(results[k][1] for k in levels)
    positive = [(k, d) for k, d in zip(levels, defects) if d > 0]
    slope = float("nan")
    if len(positive) >= 2:
        ks, ds = zip(*positive)
        slope = float(np.polyfit(np.log(ks), np.log(ds), 1)[0])
    logger.info("commutator study: levels=%s slope=%.3f", list(levels), slope)
    return CommutatorStudy(levels, defects, grids, slope)
