"""Single estimation runs: the shot loop and the restart protocol.

One run couples the controller, the simulated detector and the particle
filter: choose beta, fire a shot, reweight, resample if needed.  The
normalized squared error 2|alpha_true - mean|^2 / R0^2 is snapshotted on a
configurable schedule; it is about 1 for a zero-information estimate under
the disk prior.

The outlier-corrected variant estimates twice from scratch in consecutive
blocks and accepts only when the two estimates agree, restarting the
search otherwise until the shot budget runs out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .model import NoiseModel, Outcome, PhasePoint, simulate_shot
from .policy import Phase, PolicyParams, PolicyState, policy_step
from .smc import (
    DegenerateWeights,
    ParticleCloud,
    ResampleConfig,
    _moments_blas,
    bayes_update,
    init_uniform_disk_prior,
    liu_west_resample,
    maybe_resample,
)

__all__ = [
    "RunAborted",
    "OutlierConfig",
    "RunConfig",
    "ShotRecord",
    "RunResult",
    "derive_rng",
    "snapshot_indices",
    "sample_true_state",
    "normalized_sq_error",
    "run_single",
    "run_with_outlier_correction",
]

Detector = Callable[[PhasePoint, PhasePoint, NoiseModel, np.random.Generator], Outcome]


class RunAborted(RuntimeError):
    """The particle filter degenerated beyond recovery mid-run."""


@dataclass(frozen=True)
class OutlierConfig:
    """Restart protocol settings: block length of each independent
    estimate and the distance below which two block estimates agree."""

    block_shots: int = 10_000
    agreement_threshold: float = 0.1

    def __post_init__(self):
        if self.block_shots < 1:
            raise ValueError(f"block_shots must be positive, got {self.block_shots}")
        if not self.agreement_threshold > 0.0:
            raise ValueError(
                f"agreement_threshold must be positive, got {self.agreement_threshold}"
            )


@dataclass(frozen=True)
class RunConfig:
    """Everything one estimation run needs.

    record_stride=None snapshots the error at powers of two plus the final
    shot (compact on log-log axes); an integer snapshots every that many
    shots.  ideal_inference makes the Bayes update assume an error-free
    detector even when the simulated detector flips outcomes.
    """

    max_shots: int
    policy: PolicyParams
    n_particles: int = 50_000
    radius_R0: float = 10.0
    noise: NoiseModel = NoiseModel(0.0)
    resample: ResampleConfig = ResampleConfig()
    seed: int = 0
    outlier_correction: Optional[OutlierConfig] = None
    record_stride: Optional[int] = None
    ideal_inference: bool = False

    def __post_init__(self):
        if self.max_shots < 1:
            raise ValueError(f"max_shots must be positive, got {self.max_shots}")
        if self.n_particles < 2:
            raise ValueError(f"n_particles must be at least 2, got {self.n_particles}")
        if self.radius_R0 <= 0.0:
            raise ValueError(f"radius_R0 must be positive, got {self.radius_R0}")
        if self.record_stride is not None and self.record_stride < 1:
            raise ValueError(f"record_stride must be positive, got {self.record_stride}")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class ShotRecord:
    """One measurement: its 1-based index, the setting, the outcome."""

    index: int
    beta: PhasePoint
    outcome: Outcome


@dataclass
class RunResult:
    estimate: PhasePoint
    true_state: PhasePoint
    error_trace: list[tuple[int, float]]
    total_shots_used: int
    restarts: int
    converged: bool = True
    first_vacuum_shot: Optional[int] = None


def derive_rng(seed: int, sample_index: int = 0) -> np.random.Generator:
    """Independent, reproducible stream for (master seed, sample index).

    The pair feeds a SeedSequence, so ensembles are reproducible however
    their samples are scheduled across workers.
    """
    return np.random.default_rng(np.random.SeedSequence((seed, sample_index)))


def snapshot_indices(max_shots: int, record_stride: Optional[int]) -> list[int]:
    """Shot counts at which the error is recorded, final shot included."""
    if record_stride is None:
        marks = []
        k = 1
        while k < max_shots:
            marks.append(k)
            k *= 2
        marks.append(max_shots)
        return marks
    marks = list(range(record_stride, max_shots + 1, record_stride))
    if not marks or marks[-1] != max_shots:
        marks.append(max_shots)
    return marks


def sample_true_state(radius_R0: float, rng: np.random.Generator) -> PhasePoint:
    """Uniform draw on the open disk of radius R0 (radius first, then angle)."""
    if radius_R0 <= 0.0:
        raise ValueError(f"radius_R0 must be positive, got {radius_R0}")
    r = radius_R0 * math.sqrt(rng.random())
    theta = 2.0 * math.pi * rng.random()
    return PhasePoint(r * math.cos(theta), r * math.sin(theta))


def normalized_sq_error(
    true_state: PhasePoint, estimate: PhasePoint, radius_R0: float
) -> float:
    """2 |true - estimate|^2 / R0^2."""
    if radius_R0 <= 0.0:
        raise ValueError(f"radius_R0 must be positive, got {radius_R0}")
    dr = true_state.re - estimate.re
    di = true_state.im - estimate.im
    return 2.0 * (dr * dr + di * di) / (radius_R0 * radius_R0)


class _RunDriver:
    """Mutable state of one run: cloud, controller, rng, error trace."""

    def __init__(
        self,
        cfg: RunConfig,
        true_state: PhasePoint,
        rng: np.random.Generator,
        detector: Detector,
    ):
        self.cfg = cfg
        self.true_state = true_state
        self.rng = rng
        self.detector = detector
        self.inference_noise = NoiseModel(0.0) if cfg.ideal_inference else cfg.noise
        self.shots_done = 0
        self.first_vacuum_shot: Optional[int] = None
        self.trace: list[tuple[int, float]] = []
        self._snapshots = snapshot_indices(cfg.max_shots, cfg.record_stride)
        self._next_snap = 0
        self.cloud: ParticleCloud
        self.state: PolicyState
        self.last: Optional[ShotRecord]
        self.reset_prior()

    def reset_prior(self) -> None:
        """Fresh disk prior and a fresh controller; the rng and the global
        shot counter carry on."""
        self.cloud = init_uniform_disk_prior(
            self.cfg.n_particles, self.cfg.radius_R0, self.rng
        )
        self.state = PolicyState()
        self.last = None

    def current_mean(self) -> PhasePoint:
        return _moments_blas(self.cloud).mean

    def step(self) -> None:
        cfg = self.cfg
        # Moments feed only focused emissions; skip the reduction while the
        # controller cannot possibly read them this shot.
        if cfg.policy.nonadaptive_radius is None and (
            self.state.phase is not Phase.SEARCHING
            or (self.last is not None and self.last.outcome is Outcome.VACUUM)
        ):
            mom = _moments_blas(self.cloud)
        else:
            mom = None
        self.state, beta = policy_step(
            self.state, self.last, self.cloud, mom, cfg.policy, self.rng
        )
        outcome = self.detector(self.true_state, beta, cfg.noise, self.rng)
        try:
            cloud = bayes_update(self.cloud, outcome, beta, self.inference_noise)
        except DegenerateWeights:
            # One recovery attempt: refresh the pre-update cloud and retry.
            refreshed = liu_west_resample(self.cloud, cfg.resample, self.rng)
            try:
                cloud = bayes_update(refreshed, outcome, beta, self.inference_noise)
            except DegenerateWeights as exc:
                raise RunAborted(
                    f"weights degenerated at shot {self.shots_done + 1} "
                    f"(outcome {outcome.value}, beta ({beta.re}, {beta.im}))"
                ) from exc
        self.cloud = maybe_resample(cloud, cfg.resample, self.rng)
        self.shots_done += 1
        self.last = ShotRecord(self.shots_done, beta, outcome)
        if outcome is Outcome.VACUUM and self.first_vacuum_shot is None:
            self.first_vacuum_shot = self.shots_done
        if (
            self._next_snap < len(self._snapshots)
            and self.shots_done == self._snapshots[self._next_snap]
        ):
            err = normalized_sq_error(self.true_state, self.current_mean(), cfg.radius_R0)
            self.trace.append((self.shots_done, err))
            self._next_snap += 1

    def run_shots(self, count: int) -> None:
        for _ in range(count):
            self.step()


def _start(
    cfg: RunConfig,
    true_state: Optional[PhasePoint],
    sample_index: int,
    detector: Detector,
) -> _RunDriver:
    rng = derive_rng(cfg.seed, sample_index)
    if true_state is None:
        true_state = sample_true_state(cfg.radius_R0, rng)
    return _RunDriver(cfg, true_state, rng, detector)


def run_single(
    cfg: RunConfig,
    true_state: Optional[PhasePoint] = None,
    *,
    sample_index: int = 0,
    detector: Detector = simulate_shot,
) -> RunResult:
    """One uninterrupted estimation run of cfg.max_shots shots.

    The rng stream is derived from (cfg.seed, sample_index); a missing
    true state is sampled from the prior disk first.  Bitwise reproducible
    for identical inputs.
    """
    driver = _start(cfg, true_state, sample_index, detector)
    driver.run_shots(cfg.max_shots)
    return RunResult(
        estimate=driver.current_mean(),
        true_state=driver.true_state,
        error_trace=driver.trace,
        total_shots_used=driver.shots_done,
        restarts=0,
        converged=True,
        first_vacuum_shot=driver.first_vacuum_shot,
    )


def run_with_outlier_correction(
    cfg: RunConfig,
    true_state: Optional[PhasePoint] = None,
    *,
    sample_index: int = 0,
    detector: Detector = simulate_shot,
) -> RunResult:
    """Estimate in independent blocks until two consecutive block estimates
    agree, then keep measuring on the accepted posterior.

    Each search runs block_shots shots from a fresh prior, records the
    mean, resets the prior and runs a second block; if the two means lie
    within agreement_threshold the estimate is accepted and the remaining
    budget continues without resets.  Otherwise both blocks are discarded
    and a new search starts.  Every shot, including discarded blocks,
    counts against cfg.max_shots; if the budget runs out without an
    agreement the result carries converged=False.
    """
    if cfg.outlier_correction is None:
        raise ValueError("run_with_outlier_correction requires cfg.outlier_correction")
    oc = cfg.outlier_correction
    driver = _start(cfg, true_state, sample_index, detector)
    restarts = 0
    converged = False

    while True:
        remaining = cfg.max_shots - driver.shots_done
        if remaining <= 0:
            break
        driver.run_shots(min(oc.block_shots, remaining))
        first_estimate = driver.current_mean()
        remaining = cfg.max_shots - driver.shots_done
        if remaining <= 0:
            break
        driver.reset_prior()
        block = min(oc.block_shots, remaining)
        driver.run_shots(block)
        if block < oc.block_shots:
            break  # second block truncated: no comparison possible
        second_estimate = driver.current_mean()
        if abs(second_estimate - first_estimate) < oc.agreement_threshold:
            converged = True
            driver.run_shots(cfg.max_shots - driver.shots_done)
            break
        # Disagreement: both block estimates are discarded, so from this
        # shot on the current estimate reverts to the fresh prior's mean.
        # A snapshot landing exactly on the boundary must reflect that.
        discarded_at = driver.shots_done
        if driver.shots_done < cfg.max_shots:
            restarts += 1
        driver.reset_prior()
        if driver.trace and driver.trace[-1][0] == discarded_at:
            err = normalized_sq_error(
                driver.true_state, driver.current_mean(), cfg.radius_R0
            )
            driver.trace[-1] = (discarded_at, err)

    return RunResult(
        estimate=driver.current_mean(),
        true_state=driver.true_state,
        error_trace=driver.trace,
        total_shots_used=driver.shots_done,
        restarts=restarts,
        converged=converged,
        first_vacuum_shot=driver.first_vacuum_shot,
    )
