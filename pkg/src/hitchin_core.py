"""The Hitchin connection u(V), its identities, transport and holonomy.

For a direction V at sigma the operator is::

    u(V) = 1/(2(2k+n)) (Delta_{G_b} + 2 nabla_{G_b.dF} - i(2k+n) nabla_b
                        + 4k V'[F] - 2ik dF.b - ik delta(b)
                        + 2k(k+n) phi + ik psi)

with ``G_b, b`` from the weakly restricted solve, F the Ricci potential,
``phi`` and ``psi`` the dbar potentials of omega.b and Omega(V).  Smooth
families use V[F] and the potential of the non-closed form instead of
V'[F] and psi.  Internally every operator is stored as

    u = c0 (Delta_G + nabla_Y + c)

so operators for different directions combine linearly.

Transport integrates ds/dt = -u(gamma'(t)) s with classical RK4 on the
trivial bundle of grid sections, re-projecting onto the holomorphic space
after each step unless asked not to.

Usage::

    chart = linear_family(GridDomain(1, 64))
    ing = gather_ingredients(chart, [0.0, 1.0], [0.5, -0.5j], k=2)
    op = assemble_u(ing)
    hitchin_residual(op, theta_basis(1j, 2, chart.domain))
"""

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from errors import DriftExceeded, MissingIngredient, ObstructionNonzero, ObstructionOnPath
from hodge_solvers import (
    GATE_TOLERANCE,
    OmegaData,
    dbar_function,
    omega_form,
    phi_of,
    psi_of,
    ricci_potential,
    ricci_potential_variation,
)
from kahler_family import (
    HOLOMORPHIC_MODE,
    LINEAR_CHART,
    MODES,
    SMOOTH_MODE,
    FamilyChart,
    FamilyVariation,
    WeaklyRestrictedData,
    siegel_matrix,
    var_j,
    weakly_restricted_solve,
)
from prequantum_bundle import SectionField, bundle_gradient, inner_product, magnetic_translate
from quantum_spaces import (
    HolomorphicBasis,
    KernelTracker,
    projection_coefficients,
    theta_basis,
)
from tensor_geometry import (
    ANTIHOLOMORPHIC,
    HOLOMORPHIC,
    ComplexStructureField,
    TensorField,
    contract,
    exterior_derivative,
)

logger = logging.getLogger(__name__)

DRIFT_TOLERANCE = 1e-4
PROGRESS_EVERY = 50


# ===================================================================
# Array helpers on L^k-valued fields (leading axes allowed)
# ===================================================================

def _projector(structure: ComplexStructureField, sign: float) -> np.ndarray:
    d = structure.domain.dim
    eye = np.eye(d).reshape((d, d) + (1,) * d)
    return 0.5 * (eye + sign * 1j * structure.J.values)


def _form_part(form: np.ndarray, structure: ComplexStructureField, target: str) -> np.ndarray:
    """(1,0) or (0,1) part of an L^k-valued 1-form ``form[b, ...]``."""
    sign = -1.0 if target == HOLOMORPHIC else 1.0
    return np.einsum("db...,d...->b...", _projector(structure, sign), form)


def _nabla(values: np.ndarray, structure: ComplexStructureField, k: int) -> np.ndarray:
    return bundle_gradient(values, structure.domain, k)


def _nabla_10(values, structure, k):
    return _form_part(_nabla(values, structure, k), structure, HOLOMORPHIC)


def _nabla_01(values, structure, k):
    return _form_part(_nabla(values, structure, k), structure, ANTIHOLOMORPHIC)


def _along(vector: np.ndarray, form: np.ndarray) -> np.ndarray:
    return np.einsum("a...,a...->...", vector, form)


def _two_form_bivector(two_form: np.ndarray, bivector: np.ndarray, form: np.ndarray) -> np.ndarray:
    """(X.G.alpha)_b = X_{bu} G^{uv} alpha_v."""
    return np.einsum("bu...,uv...,v...->b...", two_form, bivector, form)


def _max_abs(values: np.ndarray) -> float:
    return float(np.max(np.abs(values))) if values.size else 0.0


def _relative(lhs: np.ndarray, rhs: np.ndarray, floor: float) -> float:
    scale = max(_max_abs(lhs), _max_abs(rhs), floor, 1e-300)
    return _max_abs(lhs - rhs) / scale


def laplacian_g(G: TensorField, s, structure: ComplexStructureField, k: int | None = None):
    """Delta_G s = nabla_u (G^{uv} nabla_v s) with the tensor-product connection.

    ``s`` is a SectionField, or an array with leading axes when ``k`` is
    given; the result has the same kind.
    """
    values = s.values if isinstance(s, SectionField) else s
    level = s.k if isinstance(s, SectionField) else k
    flux = np.einsum("uv...,v...->u...", G.values, _nabla(values, structure, level))
    outer = _nabla(flux, structure, level)  # [c, u]
    gamma_trace = np.einsum("uuc...->c...", structure.levi_civita.christoffel)
    result = np.einsum("uu...->...", outer) + np.einsum("c...,c...->...", gamma_trace, flux)
    return s.with_values(result) if isinstance(s, SectionField) else result


# ===================================================================
# Ingredients and assembly
# ===================================================================

@dataclass(frozen=True, eq=False)
class HitchinIngredients:
    """Everything u(V) needs at (sigma, V)."""

    chart: FamilyChart
    sigma: np.ndarray
    direction: np.ndarray
    k: int
    n: int
    mode: str
    structure: ComplexStructureField
    variation: FamilyVariation | None
    weakly_restricted: WeaklyRestrictedData | None
    F: TensorField | None
    variation_of_f: TensorField | None
    phi: TensorField | None
    omega: OmegaData | None
    gate: float = GATE_TOLERANCE

    @property
    def obstruction(self) -> float:
        return self.omega.harmonic_norm if self.omega is not None else float("nan")

    @property
    def gate_passed(self) -> bool:
        return self.omega is not None and self.obstruction <= self.gate

    @property
    def source(self) -> TensorField:
        """The endomorphism driving the Hitchin condition for this mode."""
        return self.variation.source(self.mode)


def _zero_ricci(chart: FamilyChart, n: int) -> bool:
    """Constant structures are flat, so F = 0 when n = 0."""
    return chart.translation_invariant and n == 0


def gather_ingredients(
    chart: FamilyChart,
    sigma,
    direction,
    k: int,
    n: int = 0,
    mode: str | None = None,
    gate: float = GATE_TOLERANCE,
    overrides: dict | None = None,
) -> HitchinIngredients:
    """Solve for every ingredient of u(V).

    ``overrides`` may replace ``F``, ``variation_of_f``, ``g_beta`` or
    ``beta`` before Omega(V) is assembled, which is how inconsistent data is
    injected to exercise the obstruction gate.
    """
    if k < 1 or 2 * k + n <= 0:
        raise ValueError(f"need k >= 1 and 2k + n > 0, got k={k}, n={n}")
    mode = mode or (HOLOMORPHIC_MODE if chart.holomorphic else SMOOTH_MODE)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == HOLOMORPHIC_MODE and not chart.holomorphic:
        raise ValueError(f"chart {chart.name!r} is not holomorphic; use mode={SMOOTH_MODE!r}")
    overrides = dict(overrides or {})
    unknown = set(overrides) - {"F", "variation_of_f", "g_beta", "beta"}
    if unknown:
        raise ValueError(f"unknown overrides {sorted(unknown)}")

    sigma = chart.check_interior(sigma)
    direction = np.asarray(direction, dtype=complex)
    structure = chart.structure_at(sigma)
    variation = var_j(chart, sigma, direction)
    weakly = weakly_restricted_solve(variation, structure, mode)
    if "g_beta" in overrides or "beta" in overrides:
        weakly = replace(
            weakly,
            g_beta=overrides.get("g_beta", weakly.g_beta),
            beta=overrides.get("beta", weakly.beta),
        )

    domain = chart.domain
    if _zero_ricci(chart, n):
        F = TensorField.zeros(domain, ())
        variation_of_f = TensorField.zeros(domain, ())
    else:
        F = ricci_potential(structure, n).potential
        f_direction = chart.prime(direction) if mode == HOLOMORPHIC_MODE else direction
        variation_of_f = ricci_potential_variation(
            chart, sigma, f_direction, n, chart.fd_step, chart.fd_tolerance
        )
    F = overrides.get("F", F)
    variation_of_f = overrides.get("variation_of_f", variation_of_f)

    g_bar = variation.g_bar if mode == SMOOTH_MODE else None
    omega = omega_form(weakly, structure, F, variation_of_f, g_bar=g_bar)
    phi = phi_of(weakly, structure).potential
    logger.debug("ingredients at %s: mode=%s |G_b|=%.2e |b|=%.2e |[Omega]|=%.2e",
                 sigma.tolist(), mode, weakly.g_beta.norm(), weakly.beta.norm(),
                 omega.harmonic_norm)
    return HitchinIngredients(
        chart=chart, sigma=sigma, direction=direction, k=k, n=n, mode=mode,
        structure=structure, variation=variation, weakly_restricted=weakly, F=F,
        variation_of_f=variation_of_f, phi=phi, omega=omega, gate=gate,
    )


@dataclass(frozen=True, eq=False)
class HitchinOperator:
    """u = prefactor * (Delta_G + nabla_Y + potential) acting on L^k sections."""

    structure: ComplexStructureField
    k: int
    n: int
    prefactor: float
    bivector: TensorField
    drift: TensorField
    potential: TensorField
    ingredients: HitchinIngredients | None = field(default=None, repr=False)

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        """u applied to an array of sections with optional leading axes."""
        grad = _nabla(values, self.structure, self.k)
        lap = laplacian_g(self.bivector, values, self.structure, self.k)
        first = _along(self.drift.values, grad)
        return self.prefactor * (lap + first + self.potential.values * values)

    def apply(self, s: SectionField) -> SectionField:
        if s.k != self.k:
            raise ValueError(f"operator at level {self.k} applied to a level-{s.k} section")
        return s.with_values(self.apply_values(s.values))

    __call__ = apply

    def combine(self, others: Sequence["HitchinOperator"], weights) -> "HitchinOperator":
        """sum_i w_i u_i over operators sharing sigma, k and n (self included first)."""
        ops = [self, *others]
        weights = list(weights)
        if len(weights) != len(ops):
            raise ValueError("one weight per operator")
        return HitchinOperator(
            structure=self.structure, k=self.k, n=self.n, prefactor=self.prefactor,
            bivector=_weighted([op.bivector for op in ops], weights),
            drift=_weighted([op.drift for op in ops], weights),
            potential=_weighted([op.potential for op in ops], weights),
        )


def _weighted(fields: list[TensorField], weights) -> TensorField:
    total = fields[0] * weights[0]
    for f, w in zip(fields[1:], weights[1:]):
        total = total + f * w
    return total


def assemble_u(ingredients: HitchinIngredients) -> HitchinOperator:
    """Build u(V) from gathered ingredients.

    Raises
    ------
    MissingIngredient
        An ingredient is absent.
    ObstructionNonzero
        V lies outside ker[Omega].
    """
    for name in ("variation", "weakly_restricted", "F", "variation_of_f", "phi", "omega"):
        if getattr(ingredients, name) is None:
            raise MissingIngredient(f"u(V) needs {name}")
    psi = psi_of(ingredients.omega, ingredients.gate).potential

    k, n = ingredients.k, ingredients.n
    structure = ingredients.structure
    weakly = ingredients.weakly_restricted
    g_beta, beta = weakly.g_beta, weakly.beta
    dF = exterior_derivative(ingredients.F)
    g_df = contract(g_beta, dF, [(1, 0)])
    df_beta = contract(dF, beta, [(0, 0)])
    div_beta = structure.levi_civita.divergence(beta, slot=0)

    drift = g_df * 2.0 + beta * (-1j * (2 * k + n))
    potential = (
        ingredients.variation_of_f * (4.0 * k)
        + df_beta * (-2j * k)
        + div_beta * (-1j * k)
        + ingredients.phi * (2.0 * k * (k + n))
        + psi * (1j * k)
    )
    return HitchinOperator(
        structure=structure, k=k, n=n, prefactor=1.0 / (2.0 * (2 * k + n)),
        bivector=g_beta, drift=drift, potential=potential, ingredients=ingredients,
    )


def rigid_operator(structure: ComplexStructureField, g: TensorField, k: int) -> HitchinOperator:
    """(1/4k) Delta_G, the closed form of u(V) for rigid torus directions."""
    zero_vec = TensorField.zeros(structure.domain, g.signature[:1])
    zero_fn = TensorField.zeros(structure.domain, ())
    return HitchinOperator(structure, k, 0, 1.0 / (4.0 * k), g, zero_vec, zero_fn)


def operator_matrix(apply: Callable[[SectionField], SectionField], basis: HolomorphicBasis
                    ) -> np.ndarray:
    """Matrix of pi o A in ``basis``: column j holds the coefficients of pi A s_j."""
    return np.stack(
        [projection_coefficients(apply(s), basis) for s in basis.sections], axis=1
    )


# ===================================================================
# Residuals and identities
# ===================================================================

def hitchin_residual(operator: HitchinOperator, sections) -> float:
    """max_s |nabla^{0,1}(u s) - (i/2) mu.nabla^{1,0} s|, relative.

    ``mu`` is V'[J] for holomorphic families and the type component V[J]'
    for smooth ones; ``sections`` is a basis or a list of sections.
    """
    ingredients = operator.ingredients
    if ingredients is None:
        raise MissingIngredient("hitchin_residual needs an assembled operator")
    sections = sections.sections if isinstance(sections, HolomorphicBasis) else sections
    structure = operator.structure
    mu = ingredients.source.values
    worst = 0.0
    for s in sections:
        lhs = _nabla_01(operator.apply_values(s.values), structure, s.k)
        rhs = 0.5j * np.einsum("ab...,a...->b...", mu, _nabla_10(s.values, structure, s.k))
        worst = max(worst, _relative(lhs, rhs, s.k * s.norm()))
    return worst


def identity_suite(ingredients: HitchinIngredients, sections) -> dict[str, float]:
    """Relative residuals of the commutation identities behind u(V).

    Keys:

    ``dbar_beta_derivative``
        nabla^{0,1} nabla_b s = dbar b . nabla^{1,0} s - ik omega.b s
    ``dbar_laplacian``
        nabla^{0,1} Delta_G s = -2ik omega.G.nabla s - i rho.G.nabla s - ik omega.delta(G) s
    ``dbar_laplacian_potential``
        the same with rho = n omega + 2i d dbar F
    ``dbar_potential_derivative``
        nabla^{0,1} nabla_{G.dF} s = -ik omega.G.dF s - (d dbar F).G.nabla s
    ``dbar_combined``
        nabla^{0,1}(Delta_G + 2 nabla_{G.dF}) s
        = -i(2k+n) omega.G.nabla s - ik omega.delta(G) s - 2ik omega.G.dF s
    ``omega_potential``
        delta(G).omega + 2 dF.G.omega
        = 4i dbar V'[F] + 2 dbar(dF.b) + in omega.b + dbar delta(b) - dbar psi
    ``omega_closed`` and ``omega_type``
        d Omega(V) and the (1,0)-part of Omega(V)
    ``naturality``
        magnetic translations commute with u(V); absent when
        ``naturality_skip_reason`` gives a reason

    The section identities hold for holomorphic ``s`` and ``G = G_b``.
    """
    sections = sections.sections if isinstance(sections, HolomorphicBasis) else list(sections)
    structure = ingredients.structure
    k, n = ingredients.k, ingredients.n
    lc = structure.levi_civita
    omega = structure.symplectic.omega
    weakly = ingredients.weakly_restricted
    G, beta = weakly.g_beta, weakly.beta
    F = ingredients.F

    dF = exterior_derivative(F)
    ddbar_f = exterior_derivative(dbar_function(F, structure)).values
    rho = lc.ricci_form.values
    g_df = contract(G, dF, [(1, 0)]).values
    div_g = lc.divergence(G, slot=0).values
    omega_beta = np.einsum("ba...,a...->b...", omega.values, beta.values)
    omega_div_g = np.einsum("bv...,v...->b...", omega.values, div_g)
    omega_g_df = np.einsum("bu...,u...->b...", omega.values, g_df)
    dbar_beta = np.einsum(
        "db...,ad...->ab...", _projector(structure, 1.0),
        np.swapaxes(lc.covariant_derivative(beta).values, 0, 1),
    )

    report = {
        "dbar_beta_derivative": 0.0,
        "dbar_laplacian": 0.0,
        "dbar_laplacian_potential": 0.0,
        "dbar_potential_derivative": 0.0,
        "dbar_combined": 0.0,
    }
    for s in sections:
        v = s.values
        floor = k * s.norm()
        grad10 = _nabla_10(v, structure, k)
        lap = laplacian_g(G, v, structure, k)
        omega_g_grad = _two_form_bivector(omega.values, G.values, grad10)
        lhs7 = _nabla_01(_along(beta.values, _nabla(v, structure, k)), structure, k)
        rhs7 = np.einsum("ab...,a...->b...", dbar_beta, grad10) - 1j * k * omega_beta * v
        lhs9 = _nabla_01(lap, structure, k)
        rhs9 = (-2j * k * omega_g_grad
                - 1j * _two_form_bivector(rho, G.values, grad10)
                - 1j * k * omega_div_g * v)
        rhs10 = (-1j * (2 * k + n) * omega_g_grad
                 + 2.0 * _two_form_bivector(ddbar_f, G.values, grad10)
                 - 1j * k * omega_div_g * v)
        lhs11 = _nabla_01(_along(g_df, _nabla(v, structure, k)), structure, k)
        rhs11 = -1j * k * omega_g_df * v - _two_form_bivector(ddbar_f, G.values, grad10)
        lhs12 = lhs9 + 2.0 * lhs11
        rhs12 = (-1j * (2 * k + n) * omega_g_grad - 1j * k * omega_div_g * v
                 - 2j * k * omega_g_df * v)
        for key, lhs, rhs in (
            ("dbar_beta_derivative", lhs7, rhs7),
            ("dbar_laplacian", lhs9, rhs9),
            ("dbar_laplacian_potential", lhs9, rhs10),
            ("dbar_potential_derivative", lhs11, rhs11),
            ("dbar_combined", lhs12, rhs12),
        ):
            report[key] = max(report[key], _relative(lhs, rhs, floor))

    report["omega_potential"] = omega_potential_defect(ingredients)
    report["omega_closed"] = ingredients.omega.d_residual
    report["omega_type"] = ingredients.omega.purity
    if sections and naturality_skip_reason(ingredients) is None:
        operator = assemble_u(ingredients)
        lattice = np.zeros(structure.domain.dim, dtype=int)
        lattice[0] = 1
        report["naturality"] = max(naturality_defect(operator, s, lattice) for s in sections)
    return report


def omega_potential_defect(ingredients: HitchinIngredients) -> float:
    """Relative defect of the 1-form identity tying G_b and b to psi(V)."""
    structure = ingredients.structure
    omega = structure.symplectic.omega
    lc = structure.levi_civita
    weakly = ingredients.weakly_restricted
    G, beta = weakly.g_beta, weakly.beta
    dF = exterior_derivative(ingredients.F)
    psi = ingredients.omega.solution.potential

    lhs = (contract(lc.divergence(G, slot=0), omega, [(0, 0)])
           + contract(contract(dF, G, [(0, 0)]), omega, [(0, 0)]) * 2.0)
    rhs = (dbar_function(ingredients.variation_of_f, structure) * 4j
           + dbar_function(contract(dF, beta, [(0, 0)]), structure) * 2.0
           + contract(omega, beta, [(1, 0)]) * (1j * ingredients.n)
           + dbar_function(lc.divergence(beta, slot=0), structure)
           - dbar_function(psi, structure))
    return _relative(lhs.values, rhs.values, 1.0)


def naturality_skip_reason(ingredients: HitchinIngredients) -> str | None:
    """Why the naturality identity does not apply here, or None when it does."""
    domain, k = ingredients.structure.domain, ingredients.k
    if not ingredients.chart.translation_invariant:
        return "family is not translation invariant"
    if not ingredients.gate_passed:
        return "obstruction gate not passed"
    if domain.N % k:
        return f"grid N={domain.N} has no 1/{k} translations"
    return None


def naturality_defect(operator: HitchinOperator, s: SectionField, lattice) -> float:
    """|T u s - u T s| / |u s| for the magnetic translation T by ``lattice / k``."""
    translated_after = magnetic_translate(operator.apply(s), lattice)
    translated_before = operator.apply(magnetic_translate(s, lattice))
    return _relative(translated_after.values, translated_before.values, s.norm())


# ===================================================================
# Transport and holonomy
# ===================================================================

def projective_defect(matrix: np.ndarray) -> float:
    """min_c |T - c Id|_F / |T|_F, attained at c = tr(T)/n."""
    matrix = np.asarray(matrix, dtype=complex)
    size = matrix.shape[0]
    scalar = np.trace(matrix) / size
    return float(np.linalg.norm(matrix - scalar * np.eye(size)) / np.linalg.norm(matrix))


def projective_discrepancy(a: np.ndarray, b: np.ndarray) -> float:
    """Projective defect of b^{-1} a: zero when the two agree up to a scalar."""
    return projective_defect(np.linalg.solve(b, a))


def default_basis_factory(chart: FamilyChart, k: int) -> Callable[[np.ndarray], HolomorphicBasis]:
    """Theta bases on the Siegel chart, numerical kernels elsewhere.

    Numerical kernels share one ``KernelTracker`` per factory, so successive
    points along a path are warm-started from the previous kernel.
    """
    tracker = None if chart.name == LINEAR_CHART else KernelTracker(k)

    def factory(sigma: np.ndarray) -> HolomorphicBasis:
        structure = chart.structure_at(sigma)
        if tracker is None:
            return theta_basis(siegel_matrix(sigma, chart.domain.m), k, chart.domain, structure)
        return tracker(structure)

    factory.tracker = tracker
    return factory


@dataclass(frozen=True, eq=False)
class TransportResult:
    """Transported sections expressed in the endpoint basis.

    ``matrix[:, j]`` holds the coefficients of the j-th transported start
    section; ``drift`` has one entry per step (the projection defect).
    """

    path: tuple[tuple[float, ...], ...]
    steps: int
    matrix: np.ndarray
    drift: tuple[float, ...]
    end_basis: HolomorphicBasis
    sections: tuple[SectionField, ...]
    reprojected: bool

    @property
    def max_drift(self) -> float:
        return max(self.drift, default=0.0)


class _OperatorCache:
    """u(e_i) per (sigma, coordinate), combined linearly for any tangent."""

    def __init__(self, chart: FamilyChart, k: int, n: int, gate: float, mode: str | None):
        self.chart, self.k, self.n, self.gate, self.mode = chart, k, n, gate, mode
        self._ops: dict[tuple, HitchinOperator] = {}

    def coordinate(self, sigma: np.ndarray, index: int) -> HitchinOperator:
        key = (tuple(np.round(sigma, 14)), index)
        op = self._ops.get(key)
        if op is None:
            unit = np.zeros(self.chart.dimension, dtype=complex)
            unit[index] = 1.0
            ingredients = gather_ingredients(
                self.chart, sigma, unit, self.k, self.n, self.mode, self.gate
            )
            try:
                op = assemble_u(ingredients)
            except ObstructionNonzero as exc:
                raise ObstructionOnPath(
                    f"coordinate direction {index} at sigma={sigma.tolist()}: {exc}"
                ) from exc
            self._ops[key] = op
        return op

    def along(self, sigma: np.ndarray, tangent: np.ndarray) -> HitchinOperator | None:
        active = [i for i in range(len(tangent)) if tangent[i] != 0.0]
        if not active:
            return None
        ops = [self.coordinate(sigma, i) for i in active]
        return ops[0].combine(ops[1:], [tangent[i] for i in active])


def _rk4_step(values: np.ndarray, start: np.ndarray, tangent: np.ndarray, h: float,
              cache: _OperatorCache) -> np.ndarray:
    def rate(sigma, v):
        op = cache.along(sigma, tangent)
        return np.zeros_like(v) if op is None else -op.apply_values(v)

    k1 = rate(start, values)
    k2 = rate(start + 0.5 * h * tangent, values + 0.5 * h * k1)
    k3 = rate(start + 0.5 * h * tangent, values + 0.5 * h * k2)
    k4 = rate(start + h * tangent, values + h * k3)
    return values + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _project_batch(values: np.ndarray, basis: HolomorphicBasis) -> tuple[np.ndarray, np.ndarray, float]:
    """Coefficients, projected values and the worst relative projection defect."""
    coefficients = []
    projected = []
    worst = 0.0
    for v in values:
        s = SectionField(basis.domain, basis.k, v)
        c = projection_coefficients(s, basis)
        p = basis.combine(c)
        defect = np.sqrt(abs(inner_product(s - p, s - p)) / max(abs(inner_product(s, s)), 1e-300))
        worst = max(worst, float(defect))
        coefficients.append(c)
        projected.append(p.values)
    return np.stack(coefficients, axis=1), np.stack(projected), worst


def parallel_transport(
    chart: FamilyChart,
    path,
    start_basis: HolomorphicBasis,
    steps: int,
    n: int = 0,
    mode: str | None = None,
    reproject: bool = True,
    drift_tolerance: float = DRIFT_TOLERANCE,
    gate: float = GATE_TOLERANCE,
    basis_factory: Callable[[np.ndarray], HolomorphicBasis] | None = None,
    cache: _OperatorCache | None = None,
) -> TransportResult:
    """Transport ``start_basis`` along the polyline ``path`` with ``steps`` RK4 steps per segment.

    Raises
    ------
    ObstructionOnPath
        A tangent direction fails the obstruction gate.
    DriftExceeded
        A step leaves the holomorphic space by more than ``drift_tolerance``.
    """
    points = [chart.check_interior(p) for p in path]
    if len(points) < 1:
        raise ValueError("a path needs at least one point")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    k = start_basis.k
    factory = basis_factory or default_basis_factory(chart, k)
    cache = cache or _OperatorCache(chart, k, n, gate, mode)

    values = np.stack([s.values for s in start_basis.sections])
    basis = start_basis
    drift: list[float] = []
    total = 0
    h = 1.0 / steps
    for a, b in zip(points[:-1], points[1:]):
        tangent = b - a
        if not np.any(tangent):
            continue
        for i in range(steps):
            start = a + i * h * tangent
            values = _rk4_step(values, start, tangent, h, cache)
            end = a + (i + 1) * h * tangent
            basis = factory(end)
            _, projected, defect = _project_batch(values, basis)
            drift.append(defect)
            total += 1
            if defect > drift_tolerance:
                logger.warning("transport drift %.3e exceeds %.1e at step %d", defect,
                               drift_tolerance, total)
                raise DriftExceeded(
                    f"holomorphic drift {defect:.3e} at step {total} (limit {drift_tolerance:.1e})"
                )
            if reproject:
                values = projected
            if total % PROGRESS_EVERY == 0:
                logger.info(json.dumps({
                    "event": "transport_progress", "step": total, "drift": defect,
                    "sigma": [float(x) for x in end],
                }))

    if total == 0:
        basis = start_basis
    matrix, _, _ = _project_batch(values, basis)
    sections = tuple(SectionField(basis.domain, k, v) for v in values)
    return TransportResult(
        path=tuple(tuple(float(x) for x in p) for p in points),
        steps=total,
        matrix=matrix,
        drift=tuple(drift),
        end_basis=basis,
        sections=sections,
        reprojected=reproject,
    )


@dataclass(frozen=True, eq=False)
class HolonomyResult:
    matrix: np.ndarray
    projective_deviation: float
    transport: TransportResult


def holonomy_loop(
    chart: FamilyChart,
    corners,
    k: int,
    steps_per_side: int,
    n: int = 0,
    mode: str | None = None,
    start_basis: HolomorphicBasis | None = None,
    reproject: bool = True,
    drift_tolerance: float = DRIFT_TOLERANCE,
    gate: float = GATE_TOLERANCE,
) -> HolonomyResult:
    """Holonomy of the closed polygon through ``corners`` in the start basis."""
    corners = [np.asarray(c, dtype=float) for c in corners]
    loop = corners + [corners[0]]
    factory = default_basis_factory(chart, k)
    basis = start_basis or factory(chart.check_interior(corners[0]))
    result = parallel_transport(
        chart, loop, basis, steps_per_side, n=n, mode=mode, reproject=reproject,
        drift_tolerance=drift_tolerance, gate=gate, basis_factory=factory,
    )
    # the loop ends where it started: express the result in the start basis
    holonomy, _, _ = _project_batch(np.stack([s.values for s in result.sections]), basis)
    deviation = projective_defect(holonomy)
    logger.info(json.dumps({
        "event": "holonomy", "chart": chart.name, "corners": [c.tolist() for c in corners],
        "steps_per_side": steps_per_side, "projective_deviation": deviation,
    }))
    return HolonomyResult(holonomy, deviation, result)


def loop_area(corners) -> float:
    """Signed shoelace area of a planar polygon given in two active coordinates."""
    pts = np.asarray(corners, dtype=float)
    active = [i for i in range(pts.shape[1]) if np.ptp(pts[:, i]) > 0]
    if len(active) != 2:
        raise ValueError("loop area needs a polygon spanning exactly two coordinates")
    x, y = pts[:, active[0]], pts[:, active[1]]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
