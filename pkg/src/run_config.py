"""Run configuration for the ``qlab`` command.

A run is described by a YAML file validated against :class:`RunConfig`.
Unknown keys are rejected at every level.  Complex numbers are written as
two-element ``[re, im]`` lists.

The packaged default lives at ``src/config/default_run.yaml``.

Usage::

    from run_config import load_run_config

    cfg = load_run_config("runs/rigid.yaml").with_overrides(seed=3, tol_scale=10.0)
    chart = cfg.family.chart(cfg.grid.domain())
"""

import logging
import os
from dataclasses import replace
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

import config as settings
from errors import ConfigInvalid
from kahler_family import FamilyChart, linear_family, perturbed_family, siegel_coordinates
from quantum_spaces import TrigPolynomial
from tensor_geometry import GridDomain

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

DEFAULT_RUN_PATH = os.path.join(os.path.dirname(__file__), "config", "default_run.yaml")

ComplexPair = tuple[float, float]


def _to_complex(pair: ComplexPair) -> complex:
    return complex(pair[0], pair[1])


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ---- geometry ---- #

class GridSpec(_Strict):
    m: int = Field(1, ge=1)
    N: int = 64

    @field_validator("N")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value < 4 or value & (value - 1):
            raise ValueError(f"N must be a power of two >= 4, got {value}")
        return value

    def domain(self, N: int | None = None) -> GridDomain:
        return GridDomain(self.m, N or self.N)


class FourierMode(_Strict):
    """One term ``2 Re(c exp(2 pi i freq.x))`` of the planted potential."""

    freq: list[int]
    coeff: ComplexPair = (0.5, 0.0)


class FamilySpec(_Strict):
    kind: Literal["linear", "perturbed"] = "linear"
    Z: list[list[ComplexPair]] = [[(0.0, 1.0)]]
    f0_modes: list[FourierMode] = []
    t: float = 0.0
    t_bound: float = Field(0.1, gt=0.0)
    guard: float = Field(0.05, gt=0.0)

    def z_matrix(self) -> np.ndarray:
        return np.array([[_to_complex(p) for p in row] for row in self.Z], dtype=complex)

    def sigma(self) -> np.ndarray:
        """Chart coordinates of the configured base point."""
        Z = self.z_matrix()
        if self.kind == "linear":
            return siegel_coordinates(Z)
        return np.array([Z[0, 0].real, Z[0, 0].imag, self.t])

    def modes(self) -> list[tuple[list[int], complex]]:
        return [(mode.freq, _to_complex(mode.coeff)) for mode in self.f0_modes]

    def chart(self, domain: GridDomain, fd_step: float | None = None,
              fd_tolerance: float | None = None) -> FamilyChart:
        if self.kind == "linear":
            chart = linear_family(domain)
        else:
            chart = perturbed_family(domain, self.modes(), t_bound=self.t_bound, guard=self.guard)
        updates = {}
        if fd_step is not None:
            updates["fd_step"] = fd_step
        if fd_tolerance is not None:
            updates["fd_tolerance"] = fd_tolerance
        if not updates:
            return chart
        return replace(chart, **updates)


class DirectionSpec(_Strict):
    name: str
    components: list[ComplexPair]

    def vector(self) -> np.ndarray:
        return np.array([_to_complex(p) for p in self.components], dtype=complex)


class PathSpec(_Strict):
    name: str
    waypoints: list[list[float]] = Field(min_length=1)
    steps: int = Field(200, ge=1)
    reproject: bool = True


class LoopSpec(_Strict):
    name: str
    corners: list[list[float]] = Field(min_length=3)
    steps_per_side: int = Field(20, ge=1)


# ---- observables and studies ---- #

class TrigTerm(_Strict):
    freq: list[int]
    cos: float = 0.0
    sin: float = 0.0


class ObservableSpec(_Strict):
    label: str
    terms: list[TrigTerm]

    def polynomial(self) -> TrigPolynomial:
        return TrigPolynomial(
            tuple((tuple(t.freq), t.cos, t.sin) for t in self.terms), label=self.label
        )


class AsymptoticSpec(_Strict):
    f: ObservableSpec = ObservableSpec(label="cos2pi x", terms=[TrigTerm(freq=[1, 0], cos=1.0)])
    g: ObservableSpec = ObservableSpec(label="cos2pi y", terms=[TrigTerm(freq=[0, 1], cos=1.0)])
    levels: list[int] = [4, 8, 16, 32]
    max_slope: float = -1.7


class ConvergenceSpec(_Strict):
    grids: list[int] = [32, 64, 128]


class Tolerances(_Strict):
    roundoff: float = Field(1e-12, gt=0.0)
    spectral: float = Field(1e-8, gt=0.0)
    finite_difference: float = Field(1e-6, gt=0.0)
    gate: float = Field(1e-7, gt=0.0)
    drift: float = Field(1e-4, gt=0.0)
    fd_step: float = Field(1e-3, gt=0.0)

    def scaled(self, factor: float) -> "Tolerances":
        """Every tolerance multiplied by ``factor``; the step is unchanged."""
        return Tolerances(
            roundoff=self.roundoff * factor,
            spectral=self.spectral * factor,
            finite_difference=self.finite_difference * factor,
            gate=self.gate * factor,
            drift=self.drift * factor,
            fd_step=self.fd_step,
        )


class RunConfig(_Strict):
    schema_version: int = SCHEMA_VERSION
    grid: GridSpec = GridSpec()
    levels: list[int] = [2]
    n: int = 0
    family: FamilySpec = FamilySpec()
    directions: list[DirectionSpec] = []
    paths: list[PathSpec] = []
    loops: list[LoopSpec] = []
    asymptotic: AsymptoticSpec = AsymptoticSpec()
    convergence: ConvergenceSpec = ConvergenceSpec()
    tolerances: Tolerances = Tolerances()
    out_dir: str | None = None
    # absent from the run file: QLAB_SEED
    seed: int = Field(default_factory=lambda: settings.config.default_seed)

    @field_validator("schema_version")
    @classmethod
    def _known_schema(cls, value: int) -> int:
        if value != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {value}, expected {SCHEMA_VERSION}")
        return value

    @field_validator("levels")
    @classmethod
    def _positive_levels(cls, value: list[int]) -> list[int]:
        if not value or any(k < 1 for k in value):
            raise ValueError("levels must be a non-empty list of integers >= 1")
        return value

    def with_overrides(self, seed: int | None = None, tol_scale: float | None = None,
                       out_dir: str | None = None) -> "RunConfig":
        updates: dict = {}
        if seed is not None:
            updates["seed"] = seed
        if tol_scale is not None:
            if tol_scale <= 0:
                raise ConfigInvalid(f"--tol-scale must be positive, got {tol_scale}")
            updates["tolerances"] = self.tolerances.scaled(tol_scale)
        if out_dir is not None:
            updates["out_dir"] = out_dir
        return self.model_copy(update=updates)

    def chart(self, N: int | None = None) -> FamilyChart:
        return self.family.chart(
            self.grid.domain(N), self.tolerances.fd_step, self.tolerances.finite_difference
        )


def parse_run_config(data) -> RunConfig:
    """Validate an already-parsed mapping."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigInvalid(f"expected a mapping at the top level, got {type(data).__name__}")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}"
            for err in exc.errors()
        )
        raise ConfigInvalid(f"invalid run config: {problems}") from exc


def load_run_config(path: str | None = None) -> RunConfig:
    """Load and validate a YAML run config (default: the packaged one).

    Raises
    ------
    FileNotFoundError, yaml.YAMLError
        Logged and re-raised.
    ConfigInvalid
        Schema validation failed.
    """
    path = path or DEFAULT_RUN_PATH
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except FileNotFoundError:
        logger.error("Run config not found: %s", path)
        raise
    except yaml.YAMLError as exc:
        logger.error("Invalid YAML in %s: %s", path, exc)
        raise

    config = parse_run_config(data)
    logger.info(
        "Loaded run config from %s: family=%s grid=(m=%d, N=%d) levels=%s directions=%d",
        path, config.family.kind, config.grid.m, config.grid.N, config.levels,
        len(config.directions),
    )
    return config
