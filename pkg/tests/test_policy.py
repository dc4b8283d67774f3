"""Controller unit tests: power-law radius, focus disk, state machine."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coherentid.experiment import ShotRecord
from coherentid.model import NoiseModel, Outcome, PhasePoint, simulate_shot
from coherentid.policy import (
    InvalidState,
    Phase,
    PolicyParams,
    PolicyState,
    choose_beta_focused,
    choose_beta_searching,
    focus_region,
    policy_step,
    power_law_radius,
    r_alpha,
)
from coherentid.smc import (
    ParticleCloud,
    PosteriorMoments,
    _moments_blas,
    init_uniform_disk_prior,
)

NOISELESS = PolicyParams(a_policy=0.04, b_policy=0.05)
ROBUST = PolicyParams(a_policy=1.0, b_policy=0.0, robust=True)


def cloud_of(positions, weights):
    return ParticleCloud(np.asarray(positions, dtype=complex), np.asarray(weights, float))


def point_moments(re, im, cov=None):
    cov = np.zeros((2, 2)) if cov is None else np.asarray(cov, float)
    return PosteriorMoments(PhasePoint(re, im), cov)


class TestPowerLawRadius:
    def test_noiseless_optimum_at_first_click(self):
        assert power_law_radius(1, NOISELESS) == pytest.approx(0.04, rel=1e-12)

    def test_constant_exponent(self):
        params = PolicyParams(a_policy=1.0, b_policy=0.0)
        for c in (1, 7, 10_000):
            assert power_law_radius(c, params) == 1.0

    def test_hand_value(self):
        assert power_law_radius(100_000, NOISELESS) == pytest.approx(0.071131, abs=1e-6)

    def test_rejects_zero_count(self):
        with pytest.raises(ValueError):
            power_law_radius(0, NOISELESS)

    @given(st.integers(min_value=1, max_value=10**6))
    def test_monotone_when_exponent_positive(self, c):
        params = PolicyParams(a_policy=0.5, b_policy=0.3)
        assert power_law_radius(c + 1, params) > power_law_radius(c, params)


class TestRAlpha:
    def test_zero_covariance_floor(self):
        assert r_alpha(point_moments(0, 0)) == pytest.approx(math.sqrt(0.5), rel=1e-12)

    def test_identity_covariance(self):
        assert r_alpha(point_moments(0, 0, [[1, 0], [0, 1]])) == pytest.approx(
            math.sqrt(2.5), rel=1e-12
        )

    def test_disk_prior_width(self, rng):
        cloud = init_uniform_disk_prior(200_000, 10.0, rng)
        assert r_alpha(_moments_blas(cloud)) == pytest.approx(math.sqrt(50.5), rel=0.01)


class TestChooseBetaSearching:
    def test_point_posterior_mirrors(self, rng):
        cloud = cloud_of([2 + 3j], [1.0])
        for _ in range(20):
            assert choose_beta_searching(cloud, rng) == PhasePoint(-2.0, -3.0)

    def test_zero_weight_excluded(self, rng):
        cloud = cloud_of([1 + 0j, -1 + 0j], [1.0, 0.0])
        for _ in range(200):
            assert choose_beta_searching(cloud, rng) == PhasePoint(-1.0, 0.0)

    def test_symmetric_cloud_gives_symmetric_settings(self, rng):
        z = np.array([1 + 2j, -1 - 2j, 0.5 - 0.3j, -0.5 + 0.3j])
        cloud = cloud_of(z, [0.25] * 4)
        draws = np.array(
            [choose_beta_searching(cloud, rng).as_complex() for _ in range(100_000)]
        )
        # distribution of beta equals distribution of -beta: mean ~ 0
        sigma = np.std(draws.real) / math.sqrt(draws.size)
        assert abs(np.mean(draws.real)) < 4 * sigma + 1e-12
        sigma_im = np.std(draws.imag) / math.sqrt(draws.size)
        assert abs(np.mean(draws.imag)) < 4 * sigma_im + 1e-12


class TestChooseBetaFocused:
    def test_support_constraint(self, rng):
        mom = point_moments(5.0, 0.0)
        params = PolicyParams(a_policy=0.1414, b_policy=0.0)  # radius ~ 0.1
        radius = power_law_radius(1, params) * r_alpha(mom)
        for _ in range(500):
            beta = choose_beta_focused(mom, 1, params, rng)
            assert math.hypot(beta.re + 5.0, beta.im) < radius

    def test_disk_second_moment(self, rng):
        mom = point_moments(1.0, -2.0)
        params = PolicyParams(a_policy=0.5, b_policy=0.0)
        rho = power_law_radius(1, params) * r_alpha(mom)
        n = 400_000
        d2 = np.empty(n)
        for k in range(n):
            beta = choose_beta_focused(mom, 1, params, rng)
            d2[k] = (beta.re + 1.0) ** 2 + (beta.im - 2.0) ** 2
        assert np.mean(d2) == pytest.approx(rho * rho / 2.0, rel=0.01)

    def test_zero_radius_limit_recovers_mirrored_mean(self, rng):
        mom = point_moments(3.0, 1.0)
        params = PolicyParams(a_policy=1e-12, b_policy=0.0)
        beta = choose_beta_focused(mom, 1, params, rng)
        assert abs(beta - PhasePoint(-3.0, -1.0)) < 1e-8

    def test_focus_region_clamps_radius(self):
        region = focus_region(point_moments(0, 0), 1, PolicyParams(a_policy=1e-300, b_policy=0))
        assert region.radius == 1e-9


def run_confirmation(alpha_true, beta_one, p_error, seed, params=ROBUST):
    """Drive the controller through one full confirmation episode starting
    from a vacuum click at beta_one; returns the state after the decision."""
    rng = np.random.default_rng(seed)
    noise = NoiseModel(p_error)
    cloud = init_uniform_disk_prior(16, 10.0, rng)
    mom = _moments_blas(cloud)
    # seed the confirming phase the way a searching vacuum click would
    state = PolicyState()
    last = ShotRecord(1, beta_one, Outcome.VACUUM)
    state, beta = policy_step(state, last, cloud, mom, params, rng)
    assert state.phase is Phase.CONFIRMING
    index = 1
    while state.phase is Phase.CONFIRMING:
        index += 1
        outcome = simulate_shot(alpha_true, beta, noise, rng)
        state, beta = policy_step(state, ShotRecord(index, beta, outcome), cloud, mom, params, rng)
    return state


class TestPolicyStep:
    def test_first_shot_searches(self, rng):
        cloud = cloud_of([1 + 1j], [1.0])
        mom = point_moments(1.0, 1.0)
        state, beta = policy_step(PolicyState(), None, cloud, mom, NOISELESS, rng)
        assert state.phase is Phase.SEARCHING
        assert beta == PhasePoint(-1.0, -1.0)

    def test_noiseless_vacuum_enters_and_stays_focused(self, rng):
        cloud = cloud_of([2 + 0j], [1.0])
        mom = point_moments(2.0, 0.0)
        record = ShotRecord(1, PhasePoint(-2, 0), Outcome.VACUUM)
        state, _ = policy_step(PolicyState(), record, cloud, mom, NOISELESS, rng)
        assert state.phase is Phase.FOCUSED and state.c_count == 1
        # a photon while focused does not demote, C holds
        photon = ShotRecord(2, PhasePoint(-2, 0), Outcome.PHOTON)
        state2, _ = policy_step(state, photon, cloud, mom, NOISELESS, rng)
        assert state2.phase is Phase.FOCUSED and state2.c_count == 1
        vacuum = ShotRecord(3, PhasePoint(-2, 0), Outcome.VACUUM)
        state3, _ = policy_step(state2, vacuum, cloud, mom, NOISELESS, rng)
        assert state3.c_count == 2

    def test_confirmation_repeats_the_clicked_setting(self, rng):
        cloud = cloud_of([2 + 0j], [1.0])
        mom = point_moments(2.0, 0.0)
        click = ShotRecord(1, PhasePoint(-2, 0), Outcome.VACUUM)
        state, beta = policy_step(PolicyState(), click, cloud, mom, ROBUST, rng)
        assert state.phase is Phase.CONFIRMING
        assert state.beta_one == PhasePoint(-2, 0)
        assert beta == PhasePoint(-2, 0)
        assert state.c_count == 1 and state.m_prime == 0

    def test_true_vacuum_confirms_deterministically(self):
        # true state exactly mirrored by beta_one and no readout errors:
        # every repeat clicks vacuum, C reaches 40 >= 15, phase -> focused
        state = run_confirmation(PhasePoint(2, 0), PhasePoint(-2, 0), p_error=0.0, seed=5)
        assert state.phase is Phase.FOCUSED
        assert state.c_count == 40

    def test_far_false_alarm_returns_to_searching(self):
        # at x >= 3 with p_error 0.1 passing needs ~14 error clicks out of
        # 39, which has probability ~1e-5: all 300 seeds must fail
        for seed in range(300):
            state = run_confirmation(
                PhasePoint(0.0, 0.0), PhasePoint(3.0, 0.0), p_error=0.1, seed=seed
            )
            assert state.phase is Phase.SEARCHING
            assert state.c_count == 0 and state.beta_one is None

    def test_exact_threshold_passes_confirmation(self, rng):
        # drive the state machine by hand: c_threshold - 1 vacuums among
        # the repeats plus the initial click meets the quota exactly
        params = PolicyParams(a_policy=1.0, b_policy=0.0, robust=True, m_prime_max=5, c_threshold=4)
        cloud = cloud_of([1 + 0j], [1.0])
        mom = point_moments(1.0, 0.0)
        click = ShotRecord(1, PhasePoint(-1, 0), Outcome.VACUUM)
        state, beta = policy_step(PolicyState(), click, cloud, mom, params, rng)
        outcomes = [Outcome.VACUUM, Outcome.VACUUM, Outcome.PHOTON, Outcome.PHOTON, Outcome.VACUUM]
        for k, outcome in enumerate(outcomes, start=2):
            state, beta = policy_step(state, ShotRecord(k, beta, outcome), cloud, mom, params, rng)
        assert state.phase is Phase.FOCUSED
        assert state.c_count == 4

    def test_pre_vacuum_emissions_identical_across_modes(self, rng):
        cloud = init_uniform_disk_prior(500, 10.0, rng)
        mom = _moments_blas(cloud)
        seq_noiseless = []
        seq_robust = []
        for params, out in ((NOISELESS, seq_noiseless), (ROBUST, seq_robust)):
            rng_local = np.random.default_rng(99)
            state, last = PolicyState(), None
            for index in range(1, 41):
                state, beta = policy_step(state, last, cloud, mom, params, rng_local)
                out.append(beta)
                last = ShotRecord(index, beta, Outcome.PHOTON)
        assert seq_noiseless == seq_robust

    def test_invalid_state_raises(self, rng):
        cloud = cloud_of([0j], [1.0])
        bad = PolicyState(c_count=3, phase=Phase.SEARCHING)
        with pytest.raises(InvalidState):
            policy_step(bad, None, cloud, point_moments(0, 0), NOISELESS, rng)

    def test_nonadaptive_baseline_ignores_posterior(self, rng):
        params = PolicyParams(a_policy=1.0, b_policy=0.0, nonadaptive_radius=7.0)
        cloud = cloud_of([5 + 5j], [1.0])
        state, last = PolicyState(), None
        for index in range(1, 300):
            state, beta = policy_step(state, last, cloud, None, params, rng)
            assert abs(beta) < 7.0
            last = ShotRecord(index, beta, Outcome.PHOTON)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            PolicyParams(a_policy=0.0, b_policy=0.0)
        with pytest.raises(ValueError):
            PolicyParams(a_policy=1.0, b_policy=0.0, m_prime_max=5, c_threshold=7)

    @given(
        st.integers(min_value=0, max_value=2**31),
        st.booleans(),
        st.integers(min_value=1, max_value=60),
    )
    @settings(max_examples=40, deadline=None)
    def test_state_machine_total_and_deterministic(self, seed, robust, steps):
        params = PolicyParams(a_policy=0.5, b_policy=0.1, robust=robust, m_prime_max=7, c_threshold=3)
        runs = []
        for _ in range(2):
            rng = np.random.default_rng(seed)
            cloud = init_uniform_disk_prior(64, 5.0, rng)
            mom = _moments_blas(cloud)
            state, last = PolicyState(), None
            history = []
            for index in range(1, steps + 1):
                state, beta = policy_step(state, last, cloud, mom, params, rng)
                outcome = Outcome.VACUUM if rng.random() < 0.3 else Outcome.PHOTON
                last = ShotRecord(index, beta, outcome)
                history.append((state, beta))
            runs.append(history)
        assert runs[0] == runs[1]
