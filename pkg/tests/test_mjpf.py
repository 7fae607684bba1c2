import numpy as np
import pytest

from cnuav.gdbn import ContinuousDynamics, DiscreteCluster, Vocabulary
from cnuav.mjpf import (BeliefState, DegenerateModelError, Message,
                        ModelMismatchError, Particle, abnormality,
                        belief_update, compute_messages, discrete_abnormality,
                        init_belief, kf_predict, kf_update, pf_predict,
                        resample)


def gaussian(mean, cov, kind="prediction"):
    return Message(kind=kind, mean=np.atleast_1d(np.asarray(mean, float)),
                   cov=np.atleast_2d(np.asarray(cov, float)))


class TestAbnormality:
    def test_identical_gaussians_zero(self):
        g = gaussian([0.5, -1.0], np.diag([2.0, 3.0]))
        assert abnormality(g, g) == pytest.approx(0.0, abs=1e-12)

    def test_unit_mean_shift(self):
        # closed form: (1/8) * 1 = 0.125
        assert abnormality(gaussian(0.0, 1.0), gaussian(1.0, 1.0)) == \
            pytest.approx(0.125, abs=1e-12)

    def test_variance_mismatch(self):
        # closed form: 0.5 * ln(2.5 / 2) = 0.11157177565710485
        assert abnormality(gaussian(0.0, 1.0), gaussian(0.0, 4.0)) == \
            pytest.approx(0.11157177565710485, abs=1e-9)

    def test_symmetry(self):
        a = gaussian([1.0, 0.0], np.diag([1.0, 2.0]))
        b = gaussian([0.0, 2.0], np.diag([3.0, 0.5]))
        assert abnormality(a, b) == pytest.approx(abnormality(b, a), rel=1e-12)

    def test_monotone_in_mean_shift(self):
        prev = -1.0
        for mu in np.linspace(0.0, 5.0, 11):
            v = abnormality(gaussian(0.0, 1.0), gaussian(mu, 1.0))
            assert v > prev
            prev = v

    def test_non_psd_rejected(self):
        bad = gaussian([0.0, 0.0], np.array([[1.0, 2.0], [2.0, 1.0]]))
        good = gaussian([0.0, 0.0], np.eye(2))
        with pytest.raises(ValueError):
            abnormality(bad, good)

    def test_numeric_oracle_1d(self):
        # quadrature oracle for -ln integral sqrt(p q)
        x = np.linspace(-30, 30, 200001)

        def pdf(m, v):
            return np.exp(-(x - m) ** 2 / (2 * v)) / np.sqrt(2 * np.pi * v)

        bc = np.trapezoid(np.sqrt(pdf(0.0, 1.0) * pdf(2.0, 3.0)), x)
        expected = -np.log(bc)
        assert abnormality(gaussian(0.0, 1.0), gaussian(2.0, 3.0)) == \
            pytest.approx(expected, rel=1e-6)


class TestDiscreteAbnormality:
    def test_identical_zero(self):
        w = np.array([0.2, 0.3, 0.5])
        assert discrete_abnormality(w, w) == pytest.approx(0.0, abs=1e-12)

    def test_disjoint_large(self):
        assert discrete_abnormality([1.0, 0.0], [0.0, 1.0]) > 100.0

    def test_known_value(self):
        # BC = sqrt(0.5*0.25)*2 = 0.7071...; -ln = 0.3466
        v = discrete_abnormality([0.5, 0.5], [0.25, 0.75])
        expected = -np.log(np.sqrt(0.125) + np.sqrt(0.375))
        assert v == pytest.approx(expected, rel=1e-12)


def small_vocab(num_clusters=3, spread=5.0):
    clusters = [DiscreteCluster(i, np.full(4, i * spread), np.eye(4), 10)
                for i in range(num_clusters)]
    trans = [np.full((num_clusters, num_clusters), 1.0 / num_clusters)]
    return Vocabulary("combined", clusters, {}, trans)


def small_dyn(num_clusters=3, spread=5.0, q=0.1):
    u = np.array([np.full(4, i * spread) for i in range(num_clusters)])
    return ContinuousDynamics(control_vectors=u, Q=q * np.eye(4),
                              R=0.5 * np.eye(2))


class TestPfPredict:
    def _belief(self, L, clusters):
        return BeliefState(clusters=clusters, means=np.zeros((L, 4)),
                           covs=np.tile(np.eye(4), (L, 1, 1)),
                           weights=np.full(L, 1.0 / L))

    def test_identity_transition(self):
        b = self._belief(8, np.array([0, 1, 2, 0, 1, 2, 0, 1]))
        out = pf_predict(b, np.eye(3), np.random.default_rng(0))
        assert np.array_equal(out.clusters, b.clusters)

    def test_deterministic_row(self):
        b = self._belief(6, np.zeros(6, dtype=int))
        out = pf_predict(b, np.array([[0.0, 1.0], [0.0, 1.0]]),
                         np.random.default_rng(0))
        assert np.all(out.clusters == 1)

    def test_monte_carlo_frequencies(self):
        L = 10000
        b = self._belief(L, np.zeros(L, dtype=int))
        row = np.array([[0.2, 0.5, 0.3]])
        trans = np.vstack((row, row, row))
        out = pf_predict(b, trans, np.random.default_rng(1))
        freq = np.bincount(out.clusters, minlength=3) / L
        assert np.max(np.abs(freq - row[0])) < 0.03

    def test_weights_unchanged(self):
        b = self._belief(5, np.zeros(5, dtype=int))
        b.weights = np.array([0.5, 0.2, 0.1, 0.1, 0.1])
        out = pf_predict(b, np.eye(1), np.random.default_rng(0))
        assert np.array_equal(out.weights, b.weights)

    def test_rejects_non_stochastic(self):
        b = self._belief(2, np.zeros(2, dtype=int))
        with pytest.raises(ValueError):
            pf_predict(b, np.array([[0.5, 0.4]]), np.random.default_rng(0))


class TestKfPredict:
    def test_identity_zero_control(self):
        dyn = ContinuousDynamics(C=np.eye(4), control_vectors=np.zeros((1, 4)),
                                 Q=0.3 * np.eye(4))
        p = Particle(0, np.array([1.0, 2.0, 3.0, 4.0]), np.eye(4), 1.0)
        out = kf_predict(p, dyn)
        assert np.array_equal(out.kf_mean, p.kf_mean)
        assert np.allclose(out.kf_cov, 1.3 * np.eye(4))

    def test_covariance_loewner_growth(self):
        dyn = ContinuousDynamics(C=np.eye(4), control_vectors=np.zeros((1, 4)),
                                 Q=0.2 * np.eye(4))
        p = Particle(0, np.zeros(4), np.diag([1.0, 2.0, 3.0, 4.0]), 1.0)
        out = kf_predict(p, dyn)
        assert np.all(np.linalg.eigvalsh(out.kf_cov - p.kf_cov) >= -1e-12)

    def test_constant_velocity_mean(self):
        dyn = ContinuousDynamics(control_vectors=np.zeros((1, 4)))
        p = Particle(0, np.array([1.0, 0.0, 1.0, 0.0]), np.eye(4), 1.0)
        assert np.array_equal(kf_predict(p, dyn).kf_mean, [2.0, 0.0, 1.0, 0.0])


class TestKfUpdate:
    def test_tight_measurement_pins_observed_components(self):
        dyn = ContinuousDynamics(R=1e-12 * np.eye(2),
                                 control_vectors=np.zeros((1, 4)))
        p = Particle(0, np.zeros(4), np.eye(4), 1.0)
        z = np.array([3.0, -1.5])
        out, _ = kf_update(p, z, dyn)
        assert np.allclose(out.kf_mean[:2], z, atol=1e-6)

    def test_predicted_observation_leaves_mean(self):
        dyn = ContinuousDynamics(control_vectors=np.zeros((1, 4)))
        p = Particle(0, np.array([1.0, 2.0, 0.0, 0.0]), np.eye(4), 1.0)
        out, _ = kf_update(p, np.array([1.0, 2.0]), dyn)
        assert np.allclose(out.kf_mean, p.kf_mean, atol=1e-12)

    def test_posterior_variance_contracts(self):
        dyn = ContinuousDynamics(control_vectors=np.zeros((1, 4)))
        p = Particle(0, np.zeros(4), 2.0 * np.eye(4), 1.0)
        out, _ = kf_update(p, np.array([0.5, 0.5]), dyn)
        assert out.kf_cov[0, 0] <= p.kf_cov[0, 0] + 1e-12
        assert out.kf_cov[1, 1] <= p.kf_cov[1, 1] + 1e-12

    def test_singular_innovation_rejected(self):
        dyn = ContinuousDynamics(R=np.zeros((2, 2)),
                                 control_vectors=np.zeros((1, 4)))
        p = Particle(0, np.zeros(4), np.zeros((4, 4)), 1.0)
        with pytest.raises(DegenerateModelError):
            kf_update(p, np.array([1.0, 1.0]), dyn)


class TestResample:
    def _belief(self, weights):
        L = len(weights)
        return BeliefState(clusters=np.arange(L), means=np.zeros((L, 4)),
                           covs=np.tile(np.eye(4), (L, 1, 1)),
                           weights=np.asarray(weights, float))

    def test_uniform_preserves_ess(self):
        b = self._belief(np.full(10, 0.1))
        out = resample(b, np.random.default_rng(0))
        assert out.effective_sample_size() == pytest.approx(10.0)

    def test_degenerate_weight_copies(self):
        w = np.zeros(8)
        w[3] = 1.0
        out = resample(self._belief(w), np.random.default_rng(0))
        assert np.all(out.clusters == 3)

    def test_equal_output_weights(self):
        b = self._belief(np.array([0.7, 0.1, 0.1, 0.1]))
        out = resample(b, np.random.default_rng(1))
        assert np.allclose(out.weights, 0.25)

    def test_zero_weights_signal_mismatch(self):
        with pytest.raises(ModelMismatchError):
            resample(self._belief(np.zeros(4)), np.random.default_rng(0))


class TestComputeMessages:
    def test_single_particle_prediction_passthrough(self):
        b = BeliefState(clusters=[0], means=[[1.0, 2.0, 0.0, 0.0]],
                        covs=[np.eye(4)], weights=[1.0])
        dyn = small_dyn(1)
        pi_x, lam_x, pi_s, lam_s = compute_messages(b, b, [1.0, 2.0], dyn, 1)
        assert np.allclose(pi_x.mean, [1.0, 2.0, 0.0, 0.0])
        assert np.allclose(pi_x.cov, np.eye(4))
        assert pi_s.weights.sum() == pytest.approx(1.0)

    def test_discrete_message_normalized(self):
        b = BeliefState(clusters=[0, 1, 1], means=np.zeros((3, 4)),
                        covs=np.tile(np.eye(4), (3, 1, 1)),
                        weights=[0.25, 0.5, 0.25])
        dyn = small_dyn(2)
        _, _, pi_s, _ = compute_messages(b, b, [0.0, 0.0], dyn, 2)
        assert pi_s.weights.sum() == pytest.approx(1.0)
        assert np.allclose(pi_s.weights, [0.25, 0.75])


class TestBeliefUpdate:
    def _run_sequence(self, seed, scale=1.0):
        vocab = small_vocab()
        dyn = small_dyn()
        rng = np.random.default_rng(seed)
        belief = init_belief(vocab, dyn, 64, rng)
        ups = []
        gen = np.random.default_rng(99)
        for _ in range(30):
            z = scale * gen.normal(0.0, 3.0, size=2)
            belief, uc, ud, _ = belief_update(belief, z, vocab, dyn, rng)
            ups.append(uc + ud)
        return belief, np.array(ups)

    def test_weights_normalized(self):
        belief, _ = self._run_sequence(0)
        assert abs(belief.weights.sum() - 1.0) < 1e-9

    def test_deterministic_given_seed(self):
        a, ua = self._run_sequence(5)
        b, ub = self._run_sequence(5)
        assert np.array_equal(ua, ub)
        assert np.array_equal(a.means, b.means)

    def test_covariances_stay_psd(self):
        belief, _ = self._run_sequence(1)
        eigs = np.linalg.eigvalsh(belief.covs)
        assert eigs.min() >= -1e-10

    def test_matched_model_less_surprised_than_scaled(self):
        # same observation stream scored under the trained scale and a
        # 5x-inflated stream: the inflated one must look more abnormal
        _, ups_matched = self._run_sequence(2, scale=1.0)
        _, ups_scaled = self._run_sequence(2, scale=25.0)
        assert np.median(ups_matched) < np.median(ups_scaled)

    def test_single_particle_degenerates_to_switching_kf(self):
        vocab = small_vocab(1)
        dyn = small_dyn(1)
        rng = np.random.default_rng(3)
        belief = init_belief(vocab, dyn, 1, rng)
        out, uc, ud, _ = belief_update(belief, np.array([0.1, -0.2]), vocab,
                                       dyn, rng)
        assert out.num_particles == 1
        assert out.weights[0] == pytest.approx(1.0)
        assert ud == pytest.approx(0.0, abs=1e-9)
