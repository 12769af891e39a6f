"""JSON reports and binary sidecars for ``qlab`` runs.

A report is one JSON document per command::

    {
      "schema_version": "1.0",
      "command": "verify",
      "config_digest": "<sha256>",
      "environment": {...},
      "summary": {"total": 12, "passed": 12, "failed": 0},
      "checks": [{"check_id", "anchor", "inputs_digest", "residual",
                  "tolerance", "passed", "error", "data"}, ...],
      "timings": {"<check_id>": seconds, ...}
    }

Complex numbers are ``[re, im]`` pairs.  Section grids go to a sidecar
file next to the report with a fixed little-endian header::

    magic  b"QLAB"   4 bytes
    version          uint32
    m, N             uint32, uint32
    slot count       uint32
    payload          float64 (re, im) pairs, slot-major, grid in C order
"""

import hashlib
import json
import logging
import os
import platform
import struct
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"

SIDECAR_MAGIC = b"QLAB"
SIDECAR_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


# ===================================================================
# Encoding helpers
# ===================================================================

def complex_pairs(values) -> Any:
    """Nested ``[re, im]`` lists for a complex scalar or array."""
    array = np.asarray(values, dtype=complex)
    if array.ndim == 0:
        return [float(array.real), float(array.imag)]
    return np.stack([array.real, array.imag], axis=-1).tolist()


def digest(payload: Any) -> str:
    """SHA-256 of the canonical JSON form of ``payload``."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return complex_pairs(value) if np.iscomplexobj(value) else value.tolist()
    if isinstance(value, (complex, np.complexfloating)):
        return complex_pairs(value)
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"cannot encode {type(value).__name__}")


def environment_metadata() -> dict[str, str]:
    import scipy

    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


# ===================================================================
# Records and reports
# ===================================================================

def build_record(
    check_id: str,
    anchor: str,
    inputs: dict,
    residual: float | None,
    tolerance: float | None,
    passed: bool,
    error: str | None = None,
    data: dict | None = None,
) -> dict[str, Any]:
    """One check result.  ``anchor`` names the identity the check tests."""
    return {
        "check_id": check_id,
        "anchor": anchor,
        "inputs_digest": digest(inputs),
        "residual": None if residual is None else float(residual),
        "tolerance": None if tolerance is None else float(tolerance),
        "passed": bool(passed),
        "error": error,
        "data": json.loads(json.dumps(data or {}, default=_jsonable)),
    }


class ReportBuilder:
    """Assembles report documents."""

    @staticmethod
    def build_report(
        command: str,
        config_payload: dict,
        records: list[dict],
        timings: dict[str, float] | None = None,
    ) -> dict[str, Any]:
        ordered = sorted(records, key=lambda r: r["check_id"])
        failed = [r["check_id"] for r in ordered if not r["passed"]]
        return {
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "config_digest": digest(config_payload),
            "environment": environment_metadata(),
            "summary": {
                "total": len(ordered),
                "passed": len(ordered) - len(failed),
                "failed": len(failed),
                "failed_checks": failed,
            },
            "checks": ordered,
            "timings": {key: round(float(v), 3) for key, v in sorted((timings or {}).items())},
        }

    @staticmethod
    def write_report(report: dict, out_dir: str, name: str | None = None) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, name or f"{report['command']}-report.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info("Wrote report %s (%d checks)", path, report["summary"]["total"])
        return path


# ===================================================================
# Sidecar blobs
# ===================================================================

def write_sidecar(path: str, slots: np.ndarray, m: int, N: int) -> str:
    """Write ``slots`` (shape ``(count,) + (N,)*2m``) as a sidecar blob."""
    slots = np.asarray(slots, dtype=complex)
    expected = (N,) * (2 * m)
    if slots.shape[1:] != expected:
        raise ValueError(f"sidecar slots shape {slots.shape[1:]} != grid {expected}")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(SIDECAR_MAGIC, SIDECAR_VERSION, m, N, slots.shape[0]))
        f.write(np.ascontiguousarray(slots, dtype="<c16").view("<f8").tobytes())
    return path


def read_sidecar(path: str) -> tuple[np.ndarray, int, int]:
    """Inverse of :func:`write_sidecar`; returns ``(slots, m, N)``."""
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        magic, version, m, N, count = _HEADER.unpack(header)
        if magic != SIDECAR_MAGIC or version != SIDECAR_VERSION:
            raise ValueError(f"{path} is not a version-{SIDECAR_VERSION} sidecar")
        payload = np.frombuffer(f.read(), dtype="<f8")
    values = payload.view("<c16").reshape((count,) + (N,) * (2 * m))
    return values, m, N
