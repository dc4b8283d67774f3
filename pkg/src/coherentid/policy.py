"""Measurement-setting controllers.

Two controllers share a first phase: while no vacuum click has been seen,
the pulse parameter beta mirrors a posterior sample so that -beta is
distributed like the current posterior.  After vacuum evidence the
controllers focus on a shrinking disk around minus the posterior mean,
whose radius follows the power law a * C^b in the vacuum count C scaled by
the posterior-plus-likelihood width R_alpha.

The robust variant guards against readout errors: the setting that clicked
vacuum is repeated m_prime_max times, and focusing starts only if at least
c_threshold of those repeats click vacuum again; otherwise the counters
reset and the search resumes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

from .model import Outcome, PhasePoint
from .smc import ParticleCloud, PosteriorMoments, sample_particle_index

if TYPE_CHECKING:  # ShotRecord lives with the run driver
    from .experiment import ShotRecord

__all__ = [
    "InvalidState",
    "Phase",
    "PolicyParams",
    "PolicyState",
    "FocusRegion",
    "power_law_radius",
    "r_alpha",
    "choose_beta_searching",
    "choose_beta_focused",
    "focus_region",
    "policy_step",
]

MIN_FOCUS_RADIUS = 1e-9


class InvalidState(RuntimeError):
    """Controller state violates its invariants (programming error)."""


class Phase(enum.Enum):
    SEARCHING = "searching"
    CONFIRMING = "confirming"
    FOCUSED = "focused"


@dataclass(frozen=True)
class PolicyParams:
    """Controller parameters.

    a_policy/b_policy parametrize the focus-disk radius a * C^b.  robust
    selects the repetition-confirmation controller with its m_prime_max
    repeat count and c_threshold vacuum quota.  nonadaptive_radius, when
    set, replaces the whole controller with the baseline that draws beta
    uniformly from a disk of that radius forever.
    """

    a_policy: float
    b_policy: float
    m_prime_max: int = 39
    c_threshold: int = 15
    robust: bool = False
    nonadaptive_radius: Optional[float] = None

    def __post_init__(self):
        if self.a_policy <= 0.0:
            raise ValueError(f"a_policy must be positive, got {self.a_policy}")
        if self.m_prime_max < 1:
            raise ValueError(f"m_prime_max must be positive, got {self.m_prime_max}")
        if not (1 <= self.c_threshold <= self.m_prime_max + 1):
            raise ValueError(
                f"c_threshold must lie in [1, m_prime_max + 1], got {self.c_threshold}"
            )
        if self.nonadaptive_radius is not None and self.nonadaptive_radius <= 0.0:
            raise ValueError("nonadaptive_radius must be positive when set")

    def label(self) -> str:
        """Deterministic human-readable tag used in emitted curves."""
        if self.nonadaptive_radius is not None:
            return f"uniform(R={self.nonadaptive_radius:g})"
        tag = f"a={self.a_policy:g},b={self.b_policy:g}"
        return f"robust({tag})" if self.robust else tag


@dataclass(frozen=True)
class PolicyState:
    """Finite-state controller variables.

    c_count:  vacuum detections counted by the active phase
    m_prime:  shots performed since the pending vacuum click
    beta_one: setting of the pending vacuum click (confirming phase only)
    """

    c_count: int = 0
    m_prime: int = 0
    beta_one: Optional[PhasePoint] = None
    phase: Phase = Phase.SEARCHING


@dataclass(frozen=True)
class FocusRegion:
    """Disk in beta-space on which the focused controller samples."""

    center: PhasePoint
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError(f"focus radius must be positive, got {self.radius}")


def power_law_radius(c_count: int, params: PolicyParams) -> float:
    """Dimensionless focus radius a * C^b after C vacuum detections."""
    if c_count < 1:
        raise ValueError("focus radius is undefined before the first vacuum detection")
    return params.a_policy * float(c_count) ** params.b_policy


def r_alpha(moments: PosteriorMoments) -> float:
    """Width combining posterior spread and the intrinsic likelihood width:
    sqrt(tr Cov + 1/2)."""
    return math.sqrt(moments.trace() + 0.5)


def choose_beta_searching(cloud: ParticleCloud, rng: np.random.Generator) -> PhasePoint:
    """Mirror a posterior sample: beta = -alpha_n with n drawn by weight,
    so that -beta is distributed like the posterior."""
    idx = sample_particle_index(cloud, rng)
    z = cloud.positions[idx]
    return PhasePoint(-float(z.real), -float(z.imag))


def focus_region(
    moments: PosteriorMoments, c_count: int, params: PolicyParams
) -> FocusRegion:
    """Disk of radius r(C) * R_alpha centered on minus the posterior mean."""
    radius = power_law_radius(c_count, params) * r_alpha(moments)
    return FocusRegion(-moments.mean, max(radius, MIN_FOCUS_RADIUS))


def _uniform_disk(center: PhasePoint, radius: float, rng: np.random.Generator) -> PhasePoint:
    r = radius * math.sqrt(rng.random())
    theta = 2.0 * math.pi * rng.random()
    return PhasePoint(center.re + r * math.cos(theta), center.im + r * math.sin(theta))


def choose_beta_focused(
    moments: PosteriorMoments,
    c_count: int,
    params: PolicyParams,
    rng: np.random.Generator,
) -> PhasePoint:
    """Uniform draw on the focus disk |beta + mean| < r(C) * R_alpha."""
    region = focus_region(moments, c_count, params)
    return _uniform_disk(region.center, region.radius, rng)


def _check_state(state: PolicyState, params: PolicyParams) -> None:
    if state.phase is Phase.SEARCHING:
        if state.c_count != 0 or state.beta_one is not None:
            raise InvalidState(f"searching state carries vacuum bookkeeping: {state}")
    elif state.phase is Phase.CONFIRMING:
        if state.beta_one is None:
            raise InvalidState("confirming state lacks the pending setting beta_one")
        if state.m_prime > params.m_prime_max:
            raise InvalidState(f"m_prime exceeds m_prime_max: {state}")
        if state.c_count < 1:
            raise InvalidState("confirming state requires at least one vacuum count")
    else:
        required = params.c_threshold if params.robust else 1
        if state.c_count < required:
            raise InvalidState(
                f"focused state needs c_count >= {required}, got {state.c_count}"
            )


def _advance(state: PolicyState, last: "ShotRecord", params: PolicyParams) -> PolicyState:
    """Fold the previous shot's outcome into the controller state."""
    vacuum = last.outcome is Outcome.VACUUM
    if not params.robust:
        if vacuum:
            return replace(state, c_count=state.c_count + 1, phase=Phase.FOCUSED)
        return state

    if state.phase is Phase.SEARCHING:
        if vacuum:
            return PolicyState(
                c_count=1, m_prime=0, beta_one=last.beta, phase=Phase.CONFIRMING
            )
        return state
    if state.phase is Phase.CONFIRMING:
        m_prime = state.m_prime + 1
        c_count = state.c_count + (1 if vacuum else 0)
        if m_prime < params.m_prime_max:
            return replace(state, m_prime=m_prime, c_count=c_count)
        if c_count >= params.c_threshold:
            return PolicyState(c_count=c_count, m_prime=m_prime, phase=Phase.FOCUSED)
        return PolicyState()
    if vacuum:
        return replace(state, c_count=state.c_count + 1)
    return state


def policy_step(
    state: PolicyState,
    last: Optional["ShotRecord"],
    cloud: ParticleCloud,
    moments: Optional[PosteriorMoments],
    params: PolicyParams,
    rng: np.random.Generator,
) -> tuple[PolicyState, PhasePoint]:
    """Advance the controller by one shot and emit the next setting.

    `last` is the record of the previous shot (absent on the first call).
    `moments` is read only when the focused phase emits, so callers that
    know the controller is still searching may pass None.  Returns the
    updated state together with the beta to apply next.
    """
    _check_state(state, params)
    if last is not None:
        state = _advance(state, last, params)

    if params.nonadaptive_radius is not None:
        return state, _uniform_disk(PhasePoint(0.0, 0.0), params.nonadaptive_radius, rng)

    if state.phase is Phase.SEARCHING:
        beta = choose_beta_searching(cloud, rng)
    elif state.phase is Phase.CONFIRMING:
        assert state.beta_one is not None
        beta = state.beta_one
    else:
        if moments is None:
            raise InvalidState("focused emission requires posterior moments")
        beta = choose_beta_focused(moments, state.c_count, params, rng)
    return state, beta
