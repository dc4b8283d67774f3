"""Measurement model of a displaced vacuum detector.

A single mode holds an unknown coherent amplitude alpha.  A control pulse
displaces the mode by beta before a binary vacuum/photon detector fires.
The probability of a vacuum click is exp(-|alpha + beta|^2); a symmetric
readout-error channel flips the reported outcome with probability p_error.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PhasePoint",
    "Outcome",
    "NoiseModel",
    "likelihood_vacuum",
    "likelihood_photon",
    "likelihood_with_noise",
    "simulate_shot",
    "q_function",
]


@dataclass(frozen=True, slots=True)
class PhasePoint:
    """A point in phase space: one complex amplitude as (re, im)."""

    re: float
    im: float

    def __post_init__(self):
        if not (math.isfinite(self.re) and math.isfinite(self.im)):
            raise ValueError(f"phase-space point must be finite, got ({self.re}, {self.im})")

    @classmethod
    def from_complex(cls, z: complex) -> "PhasePoint":
        return cls(float(z.real), float(z.imag))

    def as_complex(self) -> complex:
        return complex(self.re, self.im)

    def __add__(self, other: "PhasePoint") -> "PhasePoint":
        return PhasePoint(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "PhasePoint") -> "PhasePoint":
        return PhasePoint(self.re - other.re, self.im - other.im)

    def __neg__(self) -> "PhasePoint":
        return PhasePoint(-self.re, -self.im)

    def __abs__(self) -> float:
        return math.hypot(self.re, self.im)


class Outcome(enum.Enum):
    """Binary detector outcome."""

    VACUUM = "vacuum"
    PHOTON = "photon"


@dataclass(frozen=True, slots=True)
class NoiseModel:
    """Symmetric readout-error channel: the reported outcome is flipped
    with probability p_error."""

    p_error: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.p_error <= 1.0):
            raise ValueError(f"p_error must lie in [0, 1], got {self.p_error}")


def likelihood_vacuum(alpha: PhasePoint, beta: PhasePoint) -> float:
    """Probability of an ideal vacuum click: exp(-x^2) with x = |alpha + beta|."""
    zr = alpha.re + beta.re
    zi = alpha.im + beta.im
    return math.exp(-(zr * zr + zi * zi))


def likelihood_photon(alpha: PhasePoint, beta: PhasePoint) -> float:
    """Probability of an ideal photon click, the complement of a vacuum click."""
    zr = alpha.re + beta.re
    zi = alpha.im + beta.im
    # -expm1 keeps precision when x^2 is tiny (1 - exp(-x^2) ~ x^2).
    return -math.expm1(-(zr * zr + zi * zi))


def likelihood_with_noise(
    outcome: Outcome, alpha: PhasePoint, beta: PhasePoint, noise: NoiseModel
) -> float:
    """Probability of the *reported* outcome under the readout-error channel.

    For a vacuum report this is (1-p)*P_v + p*(1-P_v); for a photon report
    the complement.  Reduces exactly to the ideal likelihood when p_error=0.
    """
    p = noise.p_error
    if outcome is Outcome.VACUUM:
        ideal = likelihood_vacuum(alpha, beta)
    else:
        ideal = likelihood_photon(alpha, beta)
    if p == 0.0:
        return ideal
    return p + (1.0 - 2.0 * p) * ideal


def simulate_shot(
    alpha_true: PhasePoint,
    beta: PhasePoint,
    noise: NoiseModel,
    rng: np.random.Generator,
) -> Outcome:
    """Draw one detector outcome for the true state displaced by beta.

    The ideal outcome is Bernoulli in the vacuum likelihood; the report is
    then flipped with probability noise.p_error.  Only the passed-in rng is
    mutated, so calls with independent generators are reproducible and safe
    to run concurrently.
    """
    vacuum = rng.random() < likelihood_vacuum(alpha_true, beta)
    if noise.p_error > 0.0 and rng.random() < noise.p_error:
        vacuum = not vacuum
    return Outcome.VACUUM if vacuum else Outcome.PHOTON


def q_function(alpha: PhasePoint, beta: PhasePoint) -> float:
    """Husimi Q quasi-probability density probed by the displaced detector,
    exp(-|alpha + beta|^2) / pi."""
    return likelihood_vacuum(alpha, beta) / math.pi


def vacuum_likelihood_array(positions: np.ndarray, beta: complex) -> np.ndarray:
    """Vectorized exp(-|alpha_n + beta|^2) over an array of complex amplitudes."""
    z = positions + beta
    return np.exp(-(z.real**2 + z.imag**2))
