"""Pointwise complex frames of a compatible complex structure on a 2-torus.

For a surface, J is determined by the modulus field ``tau`` with
``theta = dx + tau dy`` spanning the (1,0)-forms::

    tau = (J^y_y + i) / J^y_x

The frame vectors are ``e = -tau d/dx + d/dy`` (type (0,1)) and
``f = -conj(tau) d/dx + d/dy`` (type (1,0)).  A (0,1)-form ``alpha`` is
``a * conj(theta)`` with ``a = alpha(e) / conj(theta)(e)``; a T'-valued
(0,1)-form is ``c * conj(theta) (x) f``.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class SurfaceFrame:
    tau: np.ndarray

    @property
    def e(self) -> np.ndarray:
        return np.stack([-self.tau, np.ones_like(self.tau)])

    @property
    def f(self) -> np.ndarray:
        return np.stack([-np.conj(self.tau), np.ones_like(self.tau)])

    @property
    def theta(self) -> np.ndarray:
        return np.stack([np.ones_like(self.tau), self.tau])

    @property
    def theta_bar(self) -> np.ndarray:
        return np.stack([np.ones_like(self.tau), np.conj(self.tau)])

    @property
    def theta_bar_e(self) -> np.ndarray:
        """conj(theta)(e) = conj(tau) - tau."""
        return np.conj(self.tau) - self.tau

    @property
    def theta_f(self) -> np.ndarray:
        """theta(f) = tau - conj(tau)."""
        return self.tau - np.conj(self.tau)

    # ---- coefficient extraction ---- #

    def form_coefficient(self, alpha: np.ndarray) -> np.ndarray:
        """a with alpha^{0,1} = a conj(theta); ``alpha`` has shape (2,) + grid."""
        return np.einsum("b...,b...->...", alpha, self.e) / self.theta_bar_e

    def form_from_coefficient(self, a: np.ndarray) -> np.ndarray:
        return a * self.theta_bar

    def vector_coefficient(self, beta: np.ndarray) -> np.ndarray:
        """b with beta^{1,0} = b f."""
        return np.einsum("a...,a...->...", self.theta, beta) / self.theta_f

    def vector_from_coefficient(self, b: np.ndarray) -> np.ndarray:
        return b * self.f

    def endo_coefficient(self, mu: np.ndarray) -> np.ndarray:
        """c with the T'-valued (0,1) part of ``mu^a_b`` equal to c conj(theta)_b f^a."""
        contracted = np.einsum("a...,ab...,b...->...", self.theta, mu, self.e)
        return contracted / (self.theta_f * self.theta_bar_e)

    def endo_from_coefficient(self, c: np.ndarray) -> np.ndarray:
        return c * np.einsum("a...,b...->ab...", self.f, self.theta_bar)

    def bivector_coefficient(self, g: np.ndarray) -> np.ndarray:
        """c with the S^2 T' part of ``g^{ab}`` equal to c f^a f^b."""
        contracted = np.einsum("a...,ab...,b...->...", self.theta, g, self.theta)
        return contracted / self.theta_f ** 2

    def bivector_from_coefficient(self, c: np.ndarray) -> np.ndarray:
        return c * np.einsum("a...,b...->ab...", self.f, self.f)


def surface_frame(j_values: np.ndarray) -> SurfaceFrame:
    """Frame of a real 2x2 complex structure field ``J^a_b`` (grid axes last)."""
    if j_values.shape[:2] != (2, 2):
        raise ValueError("surface frames need a 2-dimensional torus")
    j = j_values.real
    return SurfaceFrame(tau=(j[1, 1] + 1j) / j[1, 0])


def mean_tau(frame: SurfaceFrame) -> complex:
    return complex(np.mean(frame.tau))
