import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bernoulli_ad.denoiser import ConstantDenoiser, OracleDenoiser
from bernoulli_ad.diffusion import (DegeneratePosteriorError, InvalidPredictionError,
                                    bernoulli_sample, forward_jump, forward_step, generate,
                                    posterior_theta, sample_step)
from bernoulli_ad.rng import RngStream
from bernoulli_ad.schedule import build_schedule, flip_probability, schedule_from_betas
from bernoulli_ad.validation import InvalidProbabilityError
from oracles import bayes_posterior, binomial_sigma, marginal_flip

N = 10 ** 5


def random_schedule(seed, T=12):
    g = np.random.default_rng(seed)
    return schedule_from_betas(g.uniform(0.01, 0.3, T))


class TestBernoulliSample:
    def test_degenerate(self):
        assert bernoulli_sample(np.zeros((3, 4)), RngStream(0)).sum() == 0
        assert bernoulli_sample(np.ones((3, 4)), RngStream(0)).all()

    def test_half_rate(self):
        z = bernoulli_sample(np.full(N, 0.5), RngStream(1))
        assert abs(z.mean() - 0.5) <= 3 * binomial_sigma(0.5, N)

    def test_nan_rejected(self):
        with pytest.raises(InvalidProbabilityError):
            bernoulli_sample(np.array([0.2, np.nan]), RngStream(0))

    def test_seed_determinism_and_streams(self):
        a = bernoulli_sample(np.full(1000, 0.5), RngStream(5, 1))
        b = bernoulli_sample(np.full(1000, 0.5), RngStream(5, 1))
        c = bernoulli_sample(np.full(1000, 0.5), RngStream(5, 2))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        # independent streams: agreement rate close to 1/2
        assert abs((a == c).mean() - 0.5) < 0.1


class TestForward:
    def test_step_noiseless(self):
        s = schedule_from_betas([1e-300])
        z = bernoulli_sample(np.full((4, 8, 8), 0.5), RngStream(0))
        assert np.array_equal(forward_step(z, 1, s, RngStream(1)), z)

    def test_step_full_noise(self):
        s = schedule_from_betas([1.0])
        ones = forward_step(np.ones(N, np.uint8), 1, s, RngStream(2))
        zeros = forward_step(np.zeros(N, np.uint8), 1, s, RngStream(3))
        for z in (ones, zeros):
            assert abs(z.mean() - 0.5) <= 3 * binomial_sigma(0.5, N)

    def test_step_rate(self):
        s = schedule_from_betas([0.2])
        z = forward_step(np.ones(N, np.uint8), 1, s, RngStream(4))
        assert abs(z.mean() - 0.9) <= 3 * binomial_sigma(0.9, N)

    def test_jump_small_beta(self):
        s = build_schedule("linear", 1000, 0.02, 0.03)
        z0 = bernoulli_sample(np.full(N, 0.5), RngStream(5))
        diff = (forward_jump(z0, 1, s, RngStream(6)) != z0).mean()
        assert abs(diff - 0.01) <= 3 * binomial_sigma(0.01, N)

    def test_jump_rate_026(self):
        s = build_schedule("linear", 2, 0.2, 0.4)
        z = forward_jump(np.zeros(N, np.uint8), 2, s, RngStream(7))
        assert abs(z.mean() - 0.26) <= 3 * binomial_sigma(0.26, N)

    def test_composition_matches_jump(self):
        s = build_schedule("linear", 20, 0.01, 0.1)
        z0 = bernoulli_sample(np.full(N, 0.5), RngStream(8))
        z = z0
        rng = RngStream(9)
        for t in range(1, 21):
            z = forward_step(z, t, s, rng)
        zj = forward_jump(z0, 20, s, RngStream(10))
        p = flip_probability(s, 20)
        assert p == pytest.approx(marginal_flip(s.beta.tolist(), 20), abs=1e-14)
        sigma = binomial_sigma(p, N)
        assert abs((z != z0).mean() - p) <= 3 * sigma
        assert abs((zj != z0).mean() - p) <= 3 * sigma
        assert abs((z != z0).mean() - (zj != z0).mean()) <= 3 * np.sqrt(2) * sigma

    def test_range_checks(self):
        s = build_schedule("linear", 5)
        with pytest.raises(IndexError):
            forward_jump(np.zeros(3, np.uint8), 6, s, RngStream(0))
        with pytest.raises(IndexError):
            forward_step(np.zeros(3, np.uint8), 0, s, RngStream(0))
        with pytest.raises(ValueError):
            forward_step(np.full(3, 2), 1, s, RngStream(0))


class TestPosterior:
    def test_hand_example(self):
        # beta_t = 0.1 and alpha_bar_{t-1} = 0.8: betas (0.2, 0.1)
        s = schedule_from_betas([0.2, 0.1])
        theta = posterior_theta(np.array([1]), np.array([1.0]), 2, s)
        expected = 0.855 / 0.860
        assert theta[0] == pytest.approx(expected, abs=1e-14)
        assert bayes_posterior([0.2, 0.1], 2, 1, 1) == pytest.approx(expected, abs=1e-14)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_enumeration(self, seed):
        s = random_schedule(seed)
        betas = s.beta.tolist()
        for t in range(1, s.T + 1):
            for z_t in (0, 1):
                for z0 in (0, 1):
                    got = posterior_theta(np.array([z_t]), np.array([float(z0)]), t, s)[0]
                    assert abs(got - bayes_posterior(betas, t, z_t, z0)) <= 1e-12

    def test_noiseless_step_pins_zt(self):
        s = schedule_from_betas([0.1, 1e-300, 0.2])
        z_t = np.array([0, 1, 0, 1])
        z0 = np.array([0.3, 0.3, 0.9, 0.9])
        np.testing.assert_allclose(posterior_theta(z_t, z0, 2, s), z_t, atol=1e-12)

    def test_terminal_step_returns_clean_code(self):
        s = build_schedule("linear", 10)
        z0 = np.array([0, 1, 0, 1])
        for z_t in (np.array([0, 0, 1, 1]), np.array([1, 1, 0, 0])):
            assert np.array_equal(posterior_theta(z_t, z0, 1, s), z0)

    def test_degenerate_entries_reported(self):
        s = schedule_from_betas([1e-300])
        with pytest.raises(DegeneratePosteriorError) as info:
            posterior_theta(np.array([0, 1, 1]), np.array([0.0, 1.0, 0.0]), 1, s)
        assert info.value.entries[0].tolist() == [2]

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10 ** 6), st.integers(2, 12),
           st.lists(st.floats(0, 1), min_size=8, max_size=8))
    def test_soft_estimates_stay_in_unit_interval(self, seed, t, soft):
        s = random_schedule(seed % 100)
        z_t = np.array([0, 1] * 4)
        theta = posterior_theta(z_t, np.array(soft), t, s)
        assert np.all((theta >= 0) & (theta <= 1))

    def test_linear_in_soft_estimate(self):
        # the soft posterior is the Bayes posterior mixing the two clean codes
        s = random_schedule(3)
        t, w = 5, 0.3
        for z_t in (0, 1):
            zt = np.array([z_t])
            num = []
            for z0 in (0.0, 1.0):
                th = posterior_theta(zt, np.array([z0]), t, s)[0]
                num.append(th)
            got = posterior_theta(zt, np.array([w]), t, s)[0]
            assert min(num) - 1e-12 <= got <= max(num) + 1e-12


class TestSampling:
    def test_sample_step_noiseless(self):
        s = schedule_from_betas([0.1, 1e-300])
        z_t = bernoulli_sample(np.full((2, 5, 5), 0.5), RngStream(0))
        out = sample_step(z_t, np.full(z_t.shape, 0.5), 2, s, RngStream(1))
        assert np.array_equal(out, z_t)

    def test_sample_step_terminal(self):
        s = build_schedule("linear", 10)
        z0 = bernoulli_sample(np.full((2, 5, 5), 0.5), RngStream(2))
        z_t = bernoulli_sample(np.full((2, 5, 5), 0.5), RngStream(3))
        assert np.array_equal(sample_step(z_t, z0, 1, s, RngStream(4)), z0)

    def test_sample_step_rate(self):
        s = schedule_from_betas([0.2, 0.1])
        out = sample_step(np.ones(N, np.uint8), np.ones(N), 2, s, RngStream(5))
        p = 0.855 / 0.860
        assert abs(out.mean() - p) <= 3 * binomial_sigma(p, N)

    def test_generate_constant_zero(self):
        s = build_schedule("linear", 50, 1e-3, 0.2)
        z = generate(ConstantDenoiser(0.0), (2, 4, 4), s, RngStream(0))
        assert z.shape == (2, 4, 4) and set(np.unique(z)) <= {0, 1}

    def test_generate_oracle_hits_target(self):
        s = build_schedule("linear", 100, 1e-3, 0.05)
        target = bernoulli_sample(np.full((3, 6, 6), 0.5), RngStream(11))

        class Cheat:
            def predict(self, z_t, t):
                return np.bitwise_xor(z_t, target).astype(float)

        assert np.array_equal(generate(Cheat(), target.shape, s, RngStream(12)), target)

    def test_generate_deterministic(self):
        s = build_schedule("linear", 30, 1e-3, 0.2)
        den = ConstantDenoiser(0.2)
        a = generate(den, (2, 3, 3), s, RngStream(9))
        b = generate(den, (2, 3, 3), s, RngStream(9))
        assert np.array_equal(a, b)

    def test_generate_rejects_bad_predictions(self):
        s = build_schedule("linear", 5)

        class Bad:
            def predict(self, z_t, t):
                return np.full(np.shape(z_t), 1.5)

        with pytest.raises(InvalidPredictionError):
            generate(Bad(), (1, 2, 2), s, RngStream(0))

    def test_oracle_recovers_target_from_any_state(self):
        target = bernoulli_sample(np.full((2, 4, 4), 0.5), RngStream(1))
        den = OracleDenoiser(target)
        z_t = bernoulli_sample(np.full(target.shape, 0.5), RngStream(2))
        z0_est = np.abs(z_t - den.predict(z_t, 3))
        assert np.array_equal(np.round(z0_est).astype(np.uint8), target)
