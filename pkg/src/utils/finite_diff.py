"""Central differences with Richardson extrapolation for parameter derivatives."""

import logging
from typing import Callable

import numpy as np

from errors import NonConvergedFiniteDifference

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-3
DEFAULT_TOLERANCE = 1e-6


def richardson_derivative(
    func: Callable[[float], np.ndarray],
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    label: str = "",
) -> np.ndarray:
    """Derivative of ``func`` at 0 from steps ``h`` and ``h/2``.

    The two central differences are combined as ``(4 D(h/2) - D(h)) / 3``.
    Their disagreement, scaled by ``max(1, |result|)``, estimates the error
    of the finer difference; beyond ``10 * tolerance`` the derivative is
    rejected with :class:`NonConvergedFiniteDifference`.
    """
    coarse = (np.asarray(func(step)) - np.asarray(func(-step))) / (2.0 * step)
    fine = (np.asarray(func(step / 2)) - np.asarray(func(-step / 2))) / step
    result = (4.0 * fine - coarse) / 3.0

    scale = max(1.0, float(np.max(np.abs(result))))
    disagreement = float(np.max(np.abs(fine - coarse))) / 3.0 / scale
    logger.debug("Richardson %s: step=%.1e disagreement=%.2e", label, step, disagreement)
    if disagreement > 10.0 * tolerance:
        raise NonConvergedFiniteDifference(
            f"Richardson pair for {label or 'derivative'} disagrees by "
            f"{disagreement:.2e} (limit {10.0 * tolerance:.1e}, step {step:.1e})"
        )
    return result


def complex_direction_derivative(
    func: Callable[[np.ndarray], np.ndarray],
    point: np.ndarray,
    direction: np.ndarray,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    label: str = "",
) -> np.ndarray:
    """Complex-linear derivative of a function of real parameters.

    ``direction`` may be complex; its real and imaginary parts are
    differentiated separately and recombined as ``D_re + i D_im``.
    """
    point = np.asarray(point, dtype=float)
    direction = np.asarray(direction, dtype=complex)
    result = None
    for part, weight in ((direction.real, 1.0), (direction.imag, 1j)):
        if not np.any(part):
            continue
        term = weight * richardson_derivative(
            lambda h, p=part: func(point + h * p), step, tolerance, label,
        )
        result = term if result is None else result + term
    if result is None:
        return np.zeros_like(np.asarray(func(point)), dtype=complex)
    return result
