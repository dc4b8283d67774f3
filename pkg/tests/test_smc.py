"""Particle-filter unit tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coherentid.model import NoiseModel, Outcome, PhasePoint
from coherentid.smc import (
    DegenerateWeights,
    ParticleCloud,
    ResampleConfig,
    _moments_blas,
    bayes_update,
    effective_sample_size,
    init_uniform_disk_prior,
    liu_west_resample,
    maybe_resample,
    moments,
    sample_particle_index,
)

NO_NOISE = NoiseModel(0.0)


def make_cloud(positions, weights):
    return ParticleCloud(np.asarray(positions, dtype=complex), np.asarray(weights, dtype=float))


class TestCloudValidation:
    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ValueError):
            make_cloud([0j, 1j], [1.0])

    def test_rejects_negative_weights(self):
        with pytest.raises(ValueError):
            make_cloud([0j, 1j], [1.5, -0.5])

    def test_rejects_unnormalized_weights(self):
        with pytest.raises(ValueError):
            make_cloud([0j, 1j], [0.6, 0.6])


class TestDiskPrior:
    def test_paper_scale_prior(self, rng):
        cloud = init_uniform_disk_prior(50_000, 10.0, rng)
        assert cloud.n_particles == 50_000
        assert np.sum(cloud.weights) == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.abs(cloud.positions) < 10.0)

    def test_uniform_weights(self, rng):
        cloud = init_uniform_disk_prior(4, 1.0, rng)
        assert np.all(cloud.weights == 0.25)

    def test_disk_moments(self, rng):
        cloud = init_uniform_disk_prior(1_000_000, 10.0, rng)
        mom = _moments_blas(cloud)
        assert abs(mom.mean) < 0.05
        assert mom.trace() == pytest.approx(50.0, rel=0.01)

    def test_rejects_degenerate_inputs(self, rng):
        with pytest.raises(ValueError):
            init_uniform_disk_prior(1, 10.0, rng)
        with pytest.raises(ValueError):
            init_uniform_disk_prior(100, 0.0, rng)


class TestBayesUpdate:
    def test_two_particle_hand_weights(self):
        cloud = make_cloud([0j, 2 + 0j], [0.5, 0.5])
        updated = bayes_update(cloud, Outcome.VACUUM, PhasePoint(0, 0), NO_NOISE)
        expected = 1.0 / (1.0 + math.exp(-4))
        assert updated.weights[0] == pytest.approx(expected, abs=1e-12)
        assert updated.weights[1] == pytest.approx(1.0 - expected, abs=1e-12)
        assert updated.weights[0] == pytest.approx(0.98201, abs=1e-5)
        # positions are shared, not copied
        assert updated.positions is cloud.positions

    def test_constant_likelihood_leaves_weights(self):
        cloud = make_cloud([0j, 1j, 2j], [0.2, 0.3, 0.5])
        # p_error = 0.5 makes every outcome equally likely at every particle
        updated = bayes_update(cloud, Outcome.PHOTON, PhasePoint(1, 1), NoiseModel(0.5))
        np.testing.assert_allclose(updated.weights, cloud.weights, atol=1e-15)

    def test_single_particle_stays_normalized(self):
        cloud = make_cloud([1 + 1j], [1.0])
        updated = bayes_update(cloud, Outcome.VACUUM, PhasePoint(0, 0), NO_NOISE)
        assert updated.weights[0] == 1.0

    def test_degenerate_weights_raises(self):
        cloud = make_cloud([1 + 0j, 1 + 0j], [0.5, 0.5])
        with pytest.raises(DegenerateWeights):
            bayes_update(cloud, Outcome.PHOTON, PhasePoint(-1, 0), NO_NOISE)

    def test_matches_direct_likelihood_formula(self, rng):
        positions = rng.standard_normal(500) + 1j * rng.standard_normal(500)
        weights = rng.random(500)
        weights /= weights.sum()
        cloud = ParticleCloud(positions, weights)
        beta = PhasePoint(0.3, -0.7)
        updated = bayes_update(cloud, Outcome.PHOTON, beta, NoiseModel(0.05))
        x2 = np.abs(positions + beta.as_complex()) ** 2
        like = 0.05 + 0.9 * (1.0 - np.exp(-x2))
        expected = weights * like
        expected /= expected.sum()
        np.testing.assert_allclose(updated.weights, expected, rtol=1e-10, atol=1e-15)

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_weights_stay_normalized(self, seed):
        rng = np.random.default_rng(seed)
        cloud = init_uniform_disk_prior(200, 5.0, rng)
        for _ in range(5):
            outcome = Outcome.VACUUM if rng.random() < 0.5 else Outcome.PHOTON
            beta = PhasePoint(*rng.uniform(-5, 5, size=2))
            cloud = bayes_update(cloud, outcome, beta, NoiseModel(rng.random() * 0.3))
            assert abs(np.sum(cloud.weights) - 1.0) <= 1e-12
            assert np.min(cloud.weights) >= 0.0


class TestMoments:
    def test_symmetric_two_point(self):
        mom = moments(make_cloud([1 + 0j, -1 + 0j], [0.5, 0.5]))
        assert (mom.mean.re, mom.mean.im) == (0.0, 0.0)
        np.testing.assert_allclose(mom.covariance, [[1.0, 0.0], [0.0, 0.0]], atol=1e-15)

    def test_single_particle(self):
        mom = moments(make_cloud([3 + 4j], [1.0]))
        assert (mom.mean.re, mom.mean.im) == (3.0, 4.0)
        np.testing.assert_allclose(mom.covariance, np.zeros((2, 2)), atol=1e-12)

    def test_exact_permutation_invariance(self, rng):
        n = 4000
        positions = rng.standard_normal(n) * 3 + 1j * rng.standard_normal(n)
        weights = rng.random(n)
        weights /= np.sum(weights)
        total = np.sum(weights)
        if abs(total - 1.0) > 1e-13:
            weights[0] += 1.0 - total
        base = moments(ParticleCloud(positions, weights))
        for _ in range(3):
            perm = rng.permutation(n)
            shuffled = moments(ParticleCloud(positions[perm], weights[perm]))
            assert shuffled.mean == base.mean
            assert np.array_equal(shuffled.covariance, base.covariance)

    def test_blas_path_agrees_with_exact(self, rng):
        cloud = init_uniform_disk_prior(5000, 10.0, rng)
        cloud = bayes_update(cloud, Outcome.VACUUM, PhasePoint(1.0, -2.0), NO_NOISE)
        exact = moments(cloud)
        fast = _moments_blas(cloud)
        assert fast.mean.re == pytest.approx(exact.mean.re, abs=1e-12)
        assert fast.mean.im == pytest.approx(exact.mean.im, abs=1e-12)
        np.testing.assert_allclose(fast.covariance, exact.covariance, atol=1e-11)

    def test_covariance_psd_up_to_rounding(self, rng):
        cloud = init_uniform_disk_prior(300, 2.0, rng)
        cloud = bayes_update(cloud, Outcome.PHOTON, PhasePoint(0.5, 0.5), NO_NOISE)
        eigenvalues = np.linalg.eigvalsh(moments(cloud).covariance)
        assert np.all(eigenvalues >= -1e-10)


class TestEffectiveSampleSize:
    def test_uniform(self):
        cloud = make_cloud([complex(k, 0) for k in range(100)], [0.01] * 100)
        assert effective_sample_size(cloud) == pytest.approx(100.0, rel=1e-9)

    def test_degenerate(self):
        cloud = make_cloud([0j, 1j, 2j], [1.0, 0.0, 0.0])
        assert effective_sample_size(cloud) == pytest.approx(1.0, rel=1e-12)

    def test_hand_value(self):
        cloud = make_cloud([0j, 1j, 2j], [0.5, 0.25, 0.25])
        assert effective_sample_size(cloud) == pytest.approx(1 / 0.375, rel=1e-12)


class TestLiuWestResample:
    def test_near_one_shrinkage_is_multinomial(self, rng):
        cloud = init_uniform_disk_prior(300, 5.0, rng)
        cloud = bayes_update(cloud, Outcome.VACUUM, PhasePoint(1, 0), NO_NOISE)
        cfg = ResampleConfig(a_lw=1 - 1e-15)
        out = liu_west_resample(cloud, cfg, rng)
        # every output position coincides with some input position
        dist = np.min(
            np.abs(out.positions[:, None] - cloud.positions[None, :]), axis=1
        )
        assert np.max(dist) < 1e-6
        assert np.all(out.weights == 1.0 / 300)

    def test_point_mass_stays_put(self, rng):
        cloud = make_cloud([1 + 2j] * 50, [1.0 / 50] * 50)
        out = liu_west_resample(cloud, ResampleConfig(), rng)
        assert np.max(np.abs(out.positions - (1 + 2j))) <= 1e-5

    def test_statistical_conservation(self, rng):
        base = init_uniform_disk_prior(2000, 4.0, rng)
        base = bayes_update(base, Outcome.VACUUM, PhasePoint(0.5, -1.0), NO_NOISE)
        ref = moments(base)
        cfg = ResampleConfig(a_lw=0.99995)
        means = []
        covs = []
        for k in range(60):
            out = liu_west_resample(base, cfg, np.random.default_rng(k))
            mom = moments(out)
            means.append([mom.mean.re, mom.mean.im])
            covs.append(mom.covariance)
        mean_avg = np.mean(means, axis=0)
        se = np.std(means, axis=0, ddof=1) / math.sqrt(len(means))
        assert np.all(np.abs(mean_avg - [ref.mean.re, ref.mean.im]) < 4 * se + 1e-12)
        cov_avg = np.mean(covs, axis=0)
        np.testing.assert_allclose(cov_avg, ref.covariance, rtol=0.1, atol=0.01)

    def test_systematic_option_also_conserves(self, rng):
        base = init_uniform_disk_prior(3000, 4.0, rng)
        cfg = ResampleConfig(a_lw=0.99995, systematic=True)
        out = liu_west_resample(base, cfg, rng)
        np.testing.assert_allclose(
            moments(out).covariance, moments(base).covariance, rtol=0.15
        )


class TestMaybeResample:
    def test_uniform_cloud_unchanged(self, rng):
        cloud = init_uniform_disk_prior(1000, 5.0, rng)
        out = maybe_resample(cloud, ResampleConfig(ess_threshold=0.5), rng)
        assert out is cloud

    def test_dominant_weight_triggers(self, rng):
        weights = np.full(1000, 0.01 / 999)
        weights[0] = 0.99
        cloud = ParticleCloud(rng.standard_normal(1000) + 0j, weights)
        assert effective_sample_size(cloud) == pytest.approx(1.02, abs=0.01)
        out = maybe_resample(cloud, ResampleConfig(ess_threshold=0.5), rng)
        assert out is not cloud
        assert effective_sample_size(out) == pytest.approx(1000.0, rel=1e-9)

    def test_threshold_one_always_resamples(self, rng):
        cloud = init_uniform_disk_prior(1000, 5.0, rng)
        out = maybe_resample(cloud, ResampleConfig(ess_threshold=1.0), rng)
        assert out is not cloud


class TestSampling:
    def test_zero_weight_excluded(self, rng):
        cloud = make_cloud([1 + 0j, -1 + 0j], [1.0, 0.0])
        for _ in range(200):
            assert sample_particle_index(cloud, rng) == 0

    def test_translation_covariance(self, rng):
        # shifting the cloud by t and the setting by -t multiplies in the
        # same likelihoods, so the posterior mean shifts by t
        cloud = init_uniform_disk_prior(2000, 3.0, rng)
        shift = 2.5 - 1.5j
        shifted = ParticleCloud(cloud.positions + shift, cloud.weights.copy())
        beta = PhasePoint(0.4, 0.9)
        beta_shifted = PhasePoint(beta.re - shift.real, beta.im - shift.imag)
        a = bayes_update(cloud, Outcome.PHOTON, beta, NO_NOISE)
        b = bayes_update(shifted, Outcome.PHOTON, beta_shifted, NO_NOISE)
        np.testing.assert_allclose(b.weights, a.weights, atol=1e-9)
        ma, mb = moments(a).mean, moments(b).mean
        assert mb.re - ma.re == pytest.approx(shift.real, abs=1e-6)
        assert mb.im - ma.im == pytest.approx(shift.imag, abs=1e-6)
