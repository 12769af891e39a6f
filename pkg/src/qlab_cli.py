"""Batch verification of the Hitchin connection on torus families.

Runs groups of numerical checks described by a YAML run config and writes
a JSON report (plus binary sidecars for section grids).  Checks run in a
thread pool capped by ``QLAB_THREADS``; a domain error inside a check is
recorded as a failed check, never a crash.

Usage::

    qlab verify --config runs/rigid.yaml --out out/ [--check 'hitchin.*'] \
        [--seed 3] [--tol-scale 10]
    qlab transport | holonomy | obstruction | convergence ...

Exit codes: 0 all checks passed, 1 a check failed, 2 config error,
3 internal error.
"""

import argparse
import fnmatch
import json
import logging
import os
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from typing import Callable

import numpy as np
import yaml

from config import config
from errors import ConfigInvalid, QlabError
from hitchin_core import (
    assemble_u,
    default_basis_factory,
    gather_ingredients,
    hitchin_residual,
    holonomy_loop,
    identity_suite,
    loop_area,
    naturality_skip_reason,
    parallel_transport,
    projective_defect,
    projective_discrepancy,
)
from hodge_solvers import obstruction_map, ricci_potential
from kahler_family import (
    HOLOMORPHIC_MODE,
    LINEAR_CHART,
    SMOOTH_MODE,
    FamilyChart,
    holomorphic_defect,
    linear_family,
    var_j,
    var_levi_civita_check,
    var_ricci_check,
    weakly_restricted_solve,
)
from prequantum_bundle import (
    curvature_defect,
    poisson_bracket,
    prequantum_apply,
    random_section,
)
from quantum_spaces import (
    TrigPolynomial,
    asymptotic_commutator_study,
    numerical_kernel,
    principal_angles,
    project_holomorphic,
    quantum_operator,
)
from report import ReportBuilder, build_record, complex_pairs, write_sidecar
from run_config import RunConfig, load_run_config
from tensor_geometry import exterior_derivative, nijenhuis

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_INTERNAL = 3

CONTRAST_RATIO = 10.0

COMMANDS = ("verify", "transport", "holonomy", "obstruction", "convergence")

# Every record names the identity it tests.
ANCHORS = {
    "geometry.structure": "J^2 = -Id and omega-compatibility",
    "geometry.levi_civita": "Levi-Civita connection preserves g",
    "geometry.nijenhuis": "integrability: Nijenhuis tensor vanishes",
    "geometry.ricci_potential": "Ricci potential: rho = n omega + 2i d dbar F",
    "bundle.curvature": "prequantum curvature F = -ik omega",
    "bundle.commutator": "prequantum commutator [P(f), P(g)] = P({f,g})/k",
    "quantum.dimension": "dim ker nabla^{0,1} = k^m, theta and kernel agree",
    "quantum.projection": "orthogonal projection is idempotent",
    "quantum.constant": "Q_k(1) = i Id",
    "family.variation": "V[J] anticommutes with J; G~(V) symmetric; V[g] = g G~ g",
    "family.holomorphic_chart": "holomorphic chart: V'[J] = V[J]'",
    "family.weakly_restricted": "V'[J] = G_b.omega - dbar b",
    "family.ricci_variation": "V[rho] = d(delta G~(V).omega)/2",
    "family.levi_civita_variation": "V[Gamma] from nabla G~(V)",
    "hodge.gate": "obstruction class [Omega](V) vanishes",
    "hodge.linearity": "[Omega] is linear in V",
    "hitchin.dbar_beta_derivative": "dbar of nabla_b s",
    "hitchin.dbar_laplacian": "dbar of Delta_G s with the Ricci form",
    "hitchin.dbar_laplacian_potential": "dbar of Delta_G s with the Ricci potential",
    "hitchin.dbar_potential_derivative": "dbar of nabla_{G.dF} s",
    "hitchin.dbar_combined": "dbar of (Delta_G + 2 nabla_{G.dF}) s",
    "hitchin.omega_potential": "G_b, b and psi(V) tie to V[F] and F",
    "hitchin.omega_closed": "Omega(V) is closed",
    "hitchin.omega_type": "Omega(V) has type (0,1)",
    "hitchin.naturality": "magnetic translations commute with u(V)",
    "hitchin.residual": "Hitchin condition dbar u(V)s = (i/2) V'[J].nabla s",
    "transport.endpoint": "parallel transport reaches the endpoint space up to scale",
    "transport.path_independence": "homotopic paths agree projectively",
    "holonomy.loop": "holonomy is projectively trivial",
    "holonomy.contrast": "perturbed holonomy deviates beyond the rigid baseline",
    "convergence.hitchin": "Hitchin residual under grid refinement",
    "convergence.commutator": "quantum commutator defect decays at least like 1/k^2",
}

COMMUTATOR_FUNCTIONS = (
    TrigPolynomial.cosine((1, 0)),
    TrigPolynomial.sine((1, 0)),
    TrigPolynomial.cosine((0, 1)),
    TrigPolynomial.sine((0, 1)),
    TrigPolynomial.cosine((1, 1)),
)


# ===================================================================
# JSON structured logging
# ===================================================================

class _JsonFormatter(logging.Formatter):
    """Emit each log record as a single JSON line."""

    def format(self, record: logging.LogRecord) -> str:
        entry: dict = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        if record.exc_info and record.exc_info[0]:
            entry["exception"] = self.formatException(record.exc_info)
        return json.dumps(entry, default=str)


def _configure_logging() -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter())
    root = logging.getLogger()
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(getattr(logging, config.log_level.upper(), logging.INFO))


logger = logging.getLogger(__name__)


# ===================================================================
# Checks and the thread-safe result collector
# ===================================================================

@dataclass
class CheckOutcome:
    residual: float | None
    tolerance: float | None
    passed: bool | None = None
    data: dict = field(default_factory=dict)

    def verdict(self) -> bool:
        if self.passed is not None:
            return self.passed
        return self.residual is not None and bool(self.residual <= self.tolerance)


@dataclass
class Check:
    check_id: str
    anchor: str
    inputs: dict
    run: Callable[[], CheckOutcome]


class _Stats:
    """Collects check records from worker threads."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.records: list[dict] = []
        self.timings: dict[str, float] = {}
        self.failed = 0

    def record(self, record: dict, elapsed: float) -> None:
        with self._lock:
            self.records.append(record)
            self.timings[record["check_id"]] = elapsed
            if not record["passed"]:
                self.failed += 1

    def snapshot(self) -> dict:
        with self._lock:
            return {"completed": len(self.records), "failed": self.failed}


def _run_check(check: Check, stats: _Stats) -> None:
    start = time.monotonic()
    try:
        outcome = check.run()
        record = build_record(
            check.check_id, check.anchor, check.inputs, outcome.residual, outcome.tolerance,
            outcome.verdict(), data=outcome.data,
        )
    except QlabError as exc:
        logger.warning("check %s failed with %s: %s", check.check_id, type(exc).__name__, exc)
        record = build_record(
            check.check_id, check.anchor, check.inputs, None, None, False,
            error=f"{type(exc).__name__}: {exc}",
        )
    except Exception as exc:
        logger.exception("check %s raised unexpectedly", check.check_id)
        record = build_record(
            check.check_id, check.anchor, check.inputs, None, None, False,
            error=f"{type(exc).__name__}: {exc}",
        )
    elapsed = time.monotonic() - start
    stats.record(record, elapsed)
    logger.info(json.dumps({
        "event": "check_complete",
        "check_id": check.check_id,
        "passed": record["passed"],
        "residual": record["residual"],
        "seconds": round(elapsed, 3),
    }))


def _anchor(check_id: str) -> str:
    for prefix in sorted(ANCHORS, key=len, reverse=True):
        if check_id.startswith(prefix):
            return ANCHORS[prefix]
    raise KeyError(f"no anchor for check {check_id}")


# ===================================================================
# Run context
# ===================================================================

@dataclass
class RunContext:
    run: RunConfig
    out_dir: str

    @cached_property
    def chart(self) -> FamilyChart:
        return self.run.chart()

    @cached_property
    def sigma(self) -> np.ndarray:
        return self.chart.check_interior(self.run.family.sigma())

    @property
    def tol(self):
        return self.run.tolerances

    def structure(self):
        return self.chart.structure_at(self.sigma)

    def basis(self, k: int):
        return default_basis_factory(self.chart, k)(self.sigma)

    def inputs(self, **extra) -> dict:
        payload = {
            "grid": self.run.grid.model_dump(),
            "family": self.run.family.model_dump(),
            "n": self.run.n,
            "seed": self.run.seed,
        }
        payload.update(extra)
        return payload

    def make(self, check_id: str, run: Callable[[], CheckOutcome], **inputs) -> Check:
        return Check(check_id, _anchor(check_id), self.inputs(**inputs), run)


# ---- verify ---- #

def _geometry_checks(ctx: RunContext) -> list[Check]:
    tol = ctx.tol

    def structure() -> CheckOutcome:
        defects = ctx.structure().defects
        worst = max(defects.j_squared, defects.compatibility, defects.metric_symmetry)
        return CheckOutcome(worst, tol.spectral, data={"min_minor": defects.min_minor})

    def levi_civita() -> CheckOutcome:
        s = ctx.structure()
        return CheckOutcome(s.levi_civita.metric_residual() / max(1.0, s.metric.norm()),
                            tol.spectral)

    def integrable() -> CheckOutcome:
        return CheckOutcome(nijenhuis(ctx.structure()).norm(), tol.spectral)

    def potential() -> CheckOutcome:
        result = ricci_potential(ctx.structure(), ctx.run.n)
        return CheckOutcome(result.residual, tol.spectral * 10.0,
                            data={"iterations": result.iterations})

    return [
        ctx.make("geometry.structure", structure),
        ctx.make("geometry.levi_civita", levi_civita),
        ctx.make("geometry.nijenhuis", integrable),
        ctx.make("geometry.ricci_potential", potential),
    ]


def _bundle_checks(ctx: RunContext, k: int) -> list[Check]:
    tol = ctx.tol
    domain = ctx.chart.domain
    symplectic = ctx.chart.symplectic
    d = domain.dim

    def curvature() -> CheckOutcome:
        s = random_section(domain, k, seed=ctx.run.seed)
        worst = 0.0
        for a in range(d):
            for b in range(a + 1, d):
                x_dir, y_dir = np.eye(d)[a], np.eye(d)[b]
                worst = max(worst, curvature_defect(s, x_dir, y_dir, symplectic))
        return CheckOutcome(worst, tol.roundoff * 10.0)

    def commutator() -> CheckOutcome:
        s = random_section(domain, k, seed=ctx.run.seed + 1)
        worst = 0.0
        for i, f in enumerate(COMMUTATOR_FUNCTIONS):
            for g in COMMUTATOR_FUNCTIONS[i + 1:]:
                worst = max(worst, prequantum_commutator_defect(f, g, s, symplectic))
        return CheckOutcome(worst, tol.spectral * 0.1)

    checks = [ctx.make(f"bundle.curvature.k{k}", curvature, k=k)]
    if domain.m == 1:
        checks.append(ctx.make(f"bundle.commutator.k{k}", commutator, k=k))
    return checks


def prequantum_commutator_defect(f, g, s, symplectic) -> float:
    """|([P f, P g] - P({f, g})/k) s| relative to |P f P g s|."""
    pf_pg = prequantum_apply(f, prequantum_apply(g, s, symplectic), symplectic)
    pg_pf = prequantum_apply(g, prequantum_apply(f, s, symplectic), symplectic)
    bracket = prequantum_apply(poisson_bracket(f, g, symplectic), s, symplectic)
    defect = (pf_pg - pg_pf - bracket * (1.0 / s.k)).norm()
    return defect / max(pf_pg.norm(), 1e-300)


def _quantum_checks(ctx: RunContext, k: int) -> list[Check]:
    tol = ctx.tol

    def dimension() -> CheckOutcome:
        structure = ctx.structure()
        kernel = numerical_kernel(structure, k)
        data = {"dimension": kernel.dimension, "method": kernel.method}
        if ctx.chart.name == LINEAR_CHART:
            angles = principal_angles(kernel, ctx.basis(k))
            return CheckOutcome(float(np.max(angles)), tol.spectral, data=data)
        return CheckOutcome(kernel.holomorphic_residual(), tol.spectral * 100.0, data=data)

    def projection() -> CheckOutcome:
        basis = ctx.basis(k)
        s = random_section(ctx.chart.domain, k, seed=ctx.run.seed + 2)
        once = project_holomorphic(s, basis)
        twice = project_holomorphic(once, basis)
        return CheckOutcome((once - twice).norm() / max(once.norm(), 1e-300), tol.roundoff * 100)

    def constant() -> CheckOutcome:
        basis = ctx.basis(k)
        q = quantum_operator(TrigPolynomial.constant(1.0, ctx.chart.domain.dim), basis)
        eye = np.eye(basis.dimension)
        return CheckOutcome(float(np.max(np.abs(q.matrix - 1j * eye))), tol.roundoff * 100,
                            data={"matrix": complex_pairs(q.matrix)})

    return [
        ctx.make(f"quantum.dimension.k{k}", dimension, k=k),
        ctx.make(f"quantum.projection.k{k}", projection, k=k),
        ctx.make(f"quantum.constant.k{k}", constant, k=k),
    ]


def _direction_checks(ctx: RunContext, direction) -> list[Check]:
    tol = ctx.tol
    name = direction.name
    vector = direction.vector()
    chart = ctx.chart

    def variation() -> CheckOutcome:
        var = var_j(chart, ctx.sigma, vector)
        worst = max(var.anticommutation, var.symmetry, var.mixed_part, var.metric_identity)
        return CheckOutcome(worst / max(1.0, var.v_j.norm()), tol.spectral)

    def holomorphic_chart() -> CheckOutcome:
        value = holomorphic_defect(chart, ctx.sigma, vector)
        if chart.holomorphic:
            return CheckOutcome(value, tol.spectral)
        return CheckOutcome(value, None, passed=True, data={"reported_only": True})

    def weakly() -> CheckOutcome:
        mode = HOLOMORPHIC_MODE if chart.holomorphic else SMOOTH_MODE
        var = var_j(chart, ctx.sigma, vector)
        wr = weakly_restricted_solve(var, ctx.structure(), mode)
        return CheckOutcome(wr.residual, tol.spectral,
                            data={"g_beta": wr.g_beta.norm(), "beta": wr.beta.norm()})

    def ricci_variation() -> CheckOutcome:
        return CheckOutcome(var_ricci_check(chart, ctx.sigma, vector, tol.finite_difference),
                            tol.finite_difference)

    def lc_variation() -> CheckOutcome:
        return CheckOutcome(
            var_levi_civita_check(chart, ctx.sigma, vector, tol.finite_difference),
            tol.finite_difference,
        )

    return [
        ctx.make(f"family.variation.{name}", variation, direction=name),
        ctx.make(f"family.holomorphic_chart.{name}", holomorphic_chart, direction=name),
        ctx.make(f"family.weakly_restricted.{name}", weakly, direction=name),
        ctx.make(f"family.ricci_variation.{name}", ricci_variation, direction=name),
        ctx.make(f"family.levi_civita_variation.{name}", lc_variation, direction=name),
    ]


def _hitchin_checks(ctx: RunContext, direction, k: int) -> list[Check]:
    tol = ctx.tol
    name = direction.name
    vector = direction.vector()
    residual_tol = tol.spectral if ctx.chart.translation_invariant else tol.finite_difference
    identity_tol = {
        "dbar_beta_derivative": tol.spectral * 10.0,
        "dbar_laplacian": tol.spectral,
        "dbar_laplacian_potential": tol.finite_difference,
        "dbar_potential_derivative": tol.finite_difference,
        "dbar_combined": tol.finite_difference,
        "omega_potential": tol.finite_difference,
        "omega_closed": tol.finite_difference,
        "omega_type": tol.spectral,
        "naturality": tol.spectral,
    }
    lock = threading.Lock()
    cache: dict = {}

    def suite() -> dict:
        with lock:
            if "report" not in cache:
                ingredients = gather_ingredients(
                    ctx.chart, ctx.sigma, vector, k, ctx.run.n, gate=tol.gate
                )
                cache["ingredients"] = ingredients
                cache["report"] = identity_suite(ingredients, ctx.basis(k))
            return cache["report"]

    def identity(key: str) -> Callable[[], CheckOutcome]:
        def run() -> CheckOutcome:
            report = suite()
            if key not in report:
                reason = "not applicable"
                if key == "naturality":
                    reason = naturality_skip_reason(cache["ingredients"])
                return CheckOutcome(None, None, passed=True, data={"skipped": reason})
            return CheckOutcome(report[key], identity_tol[key])
        return run

    def residual() -> CheckOutcome:
        suite()
        ingredients = cache["ingredients"]
        operator = assemble_u(ingredients)
        # psi(V) is measured, not asserted
        psi = ingredients.omega.solution.potential
        data = {"psi_norm": psi.norm(), "dpsi_norm": exterior_derivative(psi).norm(),
                "obstruction": ingredients.obstruction}
        return CheckOutcome(hitchin_residual(operator, ctx.basis(k)), residual_tol, data=data)

    checks = [
        ctx.make(f"hitchin.{key}.{name}.k{k}", identity(key), direction=name, k=k)
        for key in identity_tol
    ]
    checks.append(ctx.make(f"hitchin.residual.{name}.k{k}", residual, direction=name, k=k))
    return checks


def verify_checks(ctx: RunContext) -> list[Check]:
    checks = _geometry_checks(ctx)
    for k in ctx.run.levels:
        checks += _bundle_checks(ctx, k)
        checks += _quantum_checks(ctx, k)
    for direction in ctx.run.directions:
        checks += _direction_checks(ctx, direction)
        for k in ctx.run.levels:
            checks += _hitchin_checks(ctx, direction, k)
    return checks


# ---- obstruction ---- #

def obstruction_checks(ctx: RunContext) -> list[Check]:
    tol = ctx.tol
    k = ctx.run.levels[0]

    def class_of(vector) -> np.ndarray:
        ingredients = gather_ingredients(ctx.chart, ctx.sigma, vector, k, ctx.run.n, gate=tol.gate)
        return np.atleast_1d(obstruction_map(ingredients.omega))

    def gate(vector) -> Callable[[], CheckOutcome]:
        def run() -> CheckOutcome:
            value = class_of(vector)
            norm = float(np.max(np.abs(value)))
            return CheckOutcome(norm, tol.gate, data={"class": complex_pairs(value)})
        return run

    checks = [
        ctx.make(f"hodge.gate.{d.name}", gate(d.vector()), direction=d.name)
        for d in ctx.run.directions
    ]
    if len(ctx.run.directions) >= 2:
        first, second = ctx.run.directions[:2]

        def linearity() -> CheckOutcome:
            a, b = first.vector(), second.vector()
            defect = class_of(a + b) - class_of(a) - class_of(b)
            return CheckOutcome(float(np.max(np.abs(defect))), tol.spectral * 0.1)

        checks.append(ctx.make(f"hodge.linearity.{first.name}+{second.name}", linearity))
    return checks


# ---- transport and holonomy ---- #

def transport_checks(ctx: RunContext) -> list[Check]:
    tol = ctx.tol
    results: dict = {}
    lock = threading.Lock()
    checks = []

    def transport(path, k: int):
        key = (path.name, k)
        with lock:
            if key in results:
                return results[key]
        start = default_basis_factory(ctx.chart, k)(np.asarray(path.waypoints[0], dtype=float))
        result = parallel_transport(
            ctx.chart, path.waypoints, start, path.steps, n=ctx.run.n,
            reproject=path.reproject, drift_tolerance=tol.drift, gate=tol.gate,
        )
        with lock:
            results[key] = result
        return result

    for path in ctx.run.paths:
        for k in ctx.run.levels:
            def run(path=path, k=k) -> CheckOutcome:
                result = transport(path, k)
                write_sidecar(
                    os.path.join(ctx.out_dir, f"transport-{path.name}-k{k}.bin"),
                    np.stack([s.values for s in result.sections]),
                    ctx.chart.domain.m, ctx.chart.domain.N,
                )
                defect = projective_defect(result.matrix)
                data = {
                    "matrix": complex_pairs(result.matrix),
                    "steps": result.steps,
                    "max_drift": result.max_drift,
                    "projective_defect": defect,
                }
                if ctx.chart.name == LINEAR_CHART:
                    return CheckOutcome(defect, tol.spectral * 100.0, data=data)
                return CheckOutcome(result.max_drift, tol.drift, data=data)

            checks.append(ctx.make(f"transport.endpoint.{path.name}.k{k}", run,
                                   path=path.model_dump(), k=k))

    paths = ctx.run.paths
    for i, a in enumerate(paths):
        for b in paths[i + 1:]:
            if a.waypoints[0] != b.waypoints[0] or a.waypoints[-1] != b.waypoints[-1]:
                continue
            for k in ctx.run.levels:
                def compare(a=a, b=b, k=k) -> CheckOutcome:
                    first, second = transport(a, k), transport(b, k)
                    value = projective_discrepancy(first.matrix, second.matrix)
                    return CheckOutcome(value, tol.spectral * 100.0)

                checks.append(ctx.make(
                    f"transport.path_independence.{a.name}~{b.name}.k{k}", compare, k=k
                ))
    return checks


def holonomy_checks(ctx: RunContext) -> list[Check]:
    tol = ctx.tol
    checks = []
    rigid = ctx.chart.name == LINEAR_CHART
    for loop in ctx.run.loops:
        for k in ctx.run.levels:
            def run(loop=loop, k=k) -> CheckOutcome:
                area = loop_area(loop.corners)
                if not rigid and k ** ctx.chart.domain.m == 1:
                    # a one-dimensional space has scalar holonomy
                    return CheckOutcome(None, None, passed=True,
                                        data={"skipped": "dim H_k = 1", "area": area})
                result = holonomy_loop(
                    ctx.chart, loop.corners, k, loop.steps_per_side, n=ctx.run.n,
                    drift_tolerance=tol.drift, gate=tol.gate,
                )
                deviation = result.projective_deviation
                data = {"matrix": complex_pairs(result.matrix), "area": area}
                if rigid:
                    return CheckOutcome(deviation, tol.drift * 0.1, data=data)
                return contrast_outcome(deviation, rigid_baseline(ctx, loop, k), tol.spectral,
                                        data)

            check_id = "holonomy.loop" if rigid else "holonomy.contrast"
            checks.append(ctx.make(f"{check_id}.{loop.name}.k{k}", run,
                                   loop=loop.model_dump(), k=k))
    return checks


def contrast_outcome(deviation: float, baseline: float, floor: float, data: dict
                     ) -> CheckOutcome:
    """Perturbed deviation against the rigid baseline, never below ``floor``."""
    reference = max(baseline, floor)
    ratio = deviation / reference
    data = {**data, "rigid": baseline, "reference": reference, "ratio": ratio}
    return CheckOutcome(deviation, None, passed=bool(ratio >= CONTRAST_RATIO), data=data)


def rigid_baseline(ctx: RunContext, loop, k: int) -> float:
    """Projective deviation of a square Siegel loop with the same area at the base Z."""
    side = float(np.sqrt(abs(loop_area(loop.corners))))
    Z = ctx.run.family.z_matrix()[0, 0]
    corners = [
        [Z.real, Z.imag], [Z.real + side, Z.imag],
        [Z.real + side, Z.imag + side], [Z.real, Z.imag + side],
    ]
    chart = linear_family(ctx.chart.domain)
    return holonomy_loop(chart, corners, k, loop.steps_per_side, drift_tolerance=ctx.tol.drift
                         ).projective_deviation


# ---- convergence ---- #

def convergence_checks(ctx: RunContext) -> list[Check]:
    tol = ctx.tol
    checks = []
    k = ctx.run.levels[0]
    grids = ctx.run.convergence.grids
    residual_tol = tol.spectral if ctx.chart.translation_invariant else tol.finite_difference

    for direction in ctx.run.directions[:1]:
        def refine(direction=direction) -> CheckOutcome:
            table = []
            for N in grids:
                chart = ctx.run.chart(N)
                sigma = chart.check_interior(ctx.run.family.sigma())
                ingredients = gather_ingredients(chart, sigma, direction.vector(), k, ctx.run.n,
                                                 gate=tol.gate)
                basis = default_basis_factory(chart, k)(sigma)
                table.append(hitchin_residual(assemble_u(ingredients), basis))
            ratios = [a / max(b, 1e-300) for a, b in zip(table, table[1:])]
            return CheckOutcome(max(table), residual_tol,
                                data={"grids": grids, "residuals": table, "ratios": ratios})

        checks.append(ctx.make(f"convergence.hitchin.{direction.name}.k{k}", refine,
                               direction=direction.name, grids=grids))

    asym = ctx.run.asymptotic
    if ctx.chart.domain.m == 1:
        def slope() -> CheckOutcome:
            study = asymptotic_commutator_study(
                asym.f.polynomial(), asym.g.polynomial(), asym.levels,
                Z=ctx.run.family.z_matrix()[0, 0],
            )
            return CheckOutcome(
                study.slope, asym.max_slope, passed=bool(study.slope <= asym.max_slope),
                data={"levels": list(study.levels), "defects": list(study.defects),
                      "grids": list(study.grids)},
            )

        checks.append(ctx.make("convergence.commutator", slope,
                               f=asym.f.label, g=asym.g.label, levels=asym.levels))
    return checks


CHECK_BUILDERS = {
    "verify": verify_checks,
    "transport": transport_checks,
    "holonomy": holonomy_checks,
    "obstruction": obstruction_checks,
    "convergence": convergence_checks,
}


# ===================================================================
# Main routine
# ===================================================================

def execute(command: str, run: RunConfig, out_dir: str, check_filter: str | None = None
            ) -> dict:
    """Run one command's checks and write its report.  Returns the report."""
    start_time = time.monotonic()
    ctx = RunContext(run, out_dir)
    checks = CHECK_BUILDERS[command](ctx)
    if check_filter:
        checks = [c for c in checks if fnmatch.fnmatch(c.check_id, check_filter)]

    logger.info(json.dumps({
        "event": "run_start",
        "command": command,
        "checks": len(checks),
        "threads": config.qlab_threads,
        "out_dir": out_dir,
    }))

    stats = _Stats()
    with ThreadPoolExecutor(max_workers=max(1, config.qlab_threads)) as pool:
        futures = [pool.submit(_run_check, check, stats) for check in checks]
        for future in as_completed(futures):
            future.result()

    report = ReportBuilder.build_report(
        command, run.model_dump(mode="json"), stats.records, stats.timings
    )
    path = ReportBuilder.write_report(report, out_dir)
    snap = stats.snapshot()
    logger.info(json.dumps({
        "event": "run_complete",
        "command": command,
        "completed": snap["completed"],
        "failed": snap["failed"],
        "duration_seconds": round(time.monotonic() - start_time, 1),
        "report": path,
    }))
    for record in report["checks"]:
        if not record["passed"]:
            logger.error("FAILED %s (%s): residual=%s tolerance=%s %s", record["check_id"],
                         record["anchor"], record["residual"], record["tolerance"],
                         record["error"] or "")
    return report


def cmd_verify(run: RunConfig, out_dir: str, check_filter: str | None = None) -> dict:
    return execute("verify", run, out_dir, check_filter)


def cmd_transport(run: RunConfig, out_dir: str, check_filter: str | None = None) -> dict:
    return execute("transport", run, out_dir, check_filter)


def cmd_holonomy(run: RunConfig, out_dir: str, check_filter: str | None = None) -> dict:
    return execute("holonomy", run, out_dir, check_filter)


def cmd_obstruction(run: RunConfig, out_dir: str, check_filter: str | None = None) -> dict:
    return execute("obstruction", run, out_dir, check_filter)


def cmd_convergence(run: RunConfig, out_dir: str, check_filter: str | None = None) -> dict:
    return execute("convergence", run, out_dir, check_filter)


COMMAND_HANDLERS = {
    "verify": cmd_verify,
    "transport": cmd_transport,
    "holonomy": cmd_holonomy,
    "obstruction": cmd_obstruction,
    "convergence": cmd_convergence,
}


def run_command(command: str, run: RunConfig, out_dir: str, check_filter: str | None = None
                ) -> int:
    """Run one command and return the process exit code."""
    report = COMMAND_HANDLERS[command](run, out_dir, check_filter)
    return EXIT_CHECK_FAILED if report["summary"]["failed"] else EXIT_OK


# ===================================================================
# CLI entry point
# ===================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qlab",
        description="Numerical verification of the Hitchin connection on torus families.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", metavar="PATH", default=None,
                        help="YAML run config (default: the packaged rigid run).")
    parser.add_argument("--out", metavar="DIR", default=None,
                        help="Output directory for the report and sidecars.")
    parser.add_argument("--check", metavar="PATTERN", default=None,
                        help="Run only checks whose id matches this glob.")
    parser.add_argument("--seed", type=int, default=None,
                        help="Seed for random test sections.")
    parser.add_argument("--tol-scale", type=float, default=None,
                        help="Multiply every tolerance by this factor.")
    return parser


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    _configure_logging()
    try:
        run = load_run_config(args.config)
        run = run.with_overrides(seed=args.seed, tol_scale=args.tol_scale, out_dir=args.out)
    except (ConfigInvalid, FileNotFoundError, yaml.YAMLError) as exc:
        logger.error("Config error: %s", exc)
        sys.exit(EXIT_CONFIG)

    out_dir = run.out_dir or config.default_out_dir
    try:
        code = run_command(args.command, run, out_dir, args.check)
    except Exception:
        logger.exception("Internal error while running %s", args.command)
        sys.exit(EXIT_INTERNAL)
    sys.exit(code)


if __name__ == "__main__":
    main()
