"""Tests for the cosine-orthogonality loss, its parameter gradient, and training."""

import numpy as np
import pytest

from selfmotion.chains import TaskMap, planar_chain, task_jacobian
from selfmotion.geometry import Metric, plane_stack_jacobian, plane_stack_normals
from selfmotion.network import MlpParams, init_params, input_jacobian
from selfmotion.training import (
    TrainingConfig,
    batch_loss,
    orthogonality_cosines,
    param_gradient,
    sample_configurations,
    sample_loss,
    train,
)
from selfmotion.validation import ConfigError, NumericError

PLANAR2 = planar_chain(2)
PLANAR3 = planar_chain(3)
X = TaskMap("planar-x")
XY = TaskMap("planar-xy")

EUCLID = Metric.euclidean()


def loss_oracle(q, params, chain, task_map, metric, lam1, lam2):
    """Direct looped evaluation of the per-sample cosine loss."""
    q = np.asarray(q, float)
    A = metric.matrix(q, chain.n)
    Jx = task_jacobian(chain, q, task_map)
    G = input_jacobian(params, q)
    m, r = Jx.shape[0], G.shape[0]
    first = 0.0
    for i in range(m):
        u = np.linalg.solve(A, Jx[i])
        for j in range(r):
            g = G[j]
            c = (u @ g) / (np.linalg.norm(u) * np.linalg.norm(g))
            first += c**2
    total = lam1 / (2.0 * m * r) * first
    if r >= 2:
        second = 0.0
        for i in range(r):
            w = np.linalg.solve(A, G[i])
            for j in range(r):
                if i > j:
                    g = G[j]
                    c = (w @ g) / (np.linalg.norm(w) * np.linalg.norm(g))
                    second += c**2
        total += lam2 / (2.0 * (r * (r - 1) // 2)) * second
    return total


def small_params(chain, r, widths=(12, 6), seed=0):
    rng = np.random.default_rng(seed)
    return init_params(chain.n, r, widths, chain.joint_types, rng)


class TestSampleLoss:
    def test_matches_oracle_euclidean(self):
        p = small_params(PLANAR3, r=2, seed=1)
        rng = np.random.default_rng(2)
        for q in rng.uniform(-2.5, 2.5, size=(5, 3)):
            want = loss_oracle(q, p, PLANAR3, X, EUCLID, 1000.0, 1.0)
            got = sample_loss(q, p, PLANAR3, X, EUCLID, 1000.0, 1.0)
            np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_matches_oracle_inertia_metric(self):
        metric = Metric.inertia(PLANAR3)
        p = small_params(PLANAR3, r=2, seed=3)
        rng = np.random.default_rng(4)
        for q in rng.uniform(-2.5, 2.5, size=(5, 3)):
            want = loss_oracle(q, p, PLANAR3, X, metric, 1000.0, 1.0)
            got = sample_loss(q, p, PLANAR3, X, metric, 1000.0, 1.0)
            np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_nonnegative(self):
        p = small_params(PLANAR2, r=1, seed=5)
        rng = np.random.default_rng(6)
        for q in rng.uniform(-2.5, 2.5, size=(10, 2)):
            assert sample_loss(q, p, PLANAR2, X, EUCLID, 1000.0, 1.0) >= 0.0

    def test_single_output_drops_mutual_term(self):
        # r = 1: only the task-vs-ξ term contributes, any λ₂ is inert
        p = small_params(PLANAR2, r=1, seed=7)
        q = np.array([0.5, 1.0])
        a = sample_loss(q, p, PLANAR2, X, EUCLID, 1000.0, 0.0)
        b = sample_loss(q, p, PLANAR2, X, EUCLID, 1000.0, 123.0)
        assert a == b

    def test_weights_scale_terms(self):
        p = small_params(PLANAR3, r=2, seed=8)
        q = np.array([0.4, -0.8, 1.2])
        l10 = sample_loss(q, p, PLANAR3, X, EUCLID, 1.0, 0.0)
        l01 = sample_loss(q, p, PLANAR3, X, EUCLID, 0.0, 1.0)
        both = sample_loss(q, p, PLANAR3, X, EUCLID, 3.0, 2.0)
        np.testing.assert_allclose(both, 3 * l10 + 2 * l01, rtol=1e-12)


class TestOrthogonalityCosines:
    def test_plane_stack_first_term_vanishes(self):
        q0 = np.array([0.4, 0.9, -0.6])
        stack = plane_stack_normals(PLANAR3, X, EUCLID, q0)
        J_x = task_jacobian(PLANAR3, q0, X)
        C1, _ = orthogonality_cosines(J_x, plane_stack_jacobian(stack), EUCLID, q0)
        assert np.abs(C1).max() < 1e-12

    def test_parallel_row_gives_unit_cosine(self):
        C1, _ = orthogonality_cosines(
            np.array([[2.0, 0.0]]), np.array([[3.0, 0.0]]), EUCLID, np.zeros(2)
        )
        np.testing.assert_allclose(C1, [[1.0]], rtol=1e-14)

    def test_mutual_block_strict_lower(self):
        J_xi = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
        _, C2 = orthogonality_cosines(np.array([[0.0, 0.0, 1.0]]), J_xi, EUCLID, np.zeros(3))
        assert C2.shape == (2, 2)
        assert C2[0, 1] == 0.0 and C2[0, 0] == 0.0 and C2[1, 1] == 0.0
        np.testing.assert_allclose(C2[1, 0], np.cos(np.pi / 4), rtol=1e-12)

    def test_zero_coordinate_row_raises(self):
        with pytest.raises(NumericError, match="degenerate"):
            orthogonality_cosines(
                np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]), EUCLID, np.zeros(2)
            )


class TestBatchLoss:
    def test_single_sample_reduces_to_sample_loss(self):
        p = small_params(PLANAR2, r=1, seed=9)
        q = np.array([0.7, -0.2])
        a = batch_loss(q[None, :], p, PLANAR2, X, EUCLID, 1000.0, 1.0)
        b = sample_loss(q, p, PLANAR2, X, EUCLID, 1000.0, 1.0)
        np.testing.assert_allclose(a, b, rtol=1e-14)

    def test_mean_of_samples(self):
        p = small_params(PLANAR3, r=2, seed=10)
        Q = np.random.default_rng(11).uniform(-2, 2, size=(6, 3))
        per = [sample_loss(q, p, PLANAR3, X, EUCLID, 1000.0, 1.0) for q in Q]
        got = batch_loss(Q, p, PLANAR3, X, EUCLID, 1000.0, 1.0)
        np.testing.assert_allclose(got, np.mean(per), rtol=1e-12)

    def test_permutation_invariant(self):
        p = small_params(PLANAR3, r=2, seed=12)
        Q = np.random.default_rng(13).uniform(-2, 2, size=(8, 3))
        a = batch_loss(Q, p, PLANAR3, X, EUCLID, 1000.0, 1.0)
        b = batch_loss(Q[::-1], p, PLANAR3, X, EUCLID, 1000.0, 1.0)
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_duplicated_sample_is_linear(self):
        p = small_params(PLANAR2, r=1, seed=14)
        q = np.array([1.1, 0.3])
        single = batch_loss(q[None, :], p, PLANAR2, X, EUCLID, 1000.0, 1.0)
        doubled = batch_loss(np.stack([q, q]), p, PLANAR2, X, EUCLID, 1000.0, 1.0)
        np.testing.assert_allclose(doubled, single, rtol=1e-14)


def flat_fd_gradient_entry(Q, params, chain, task_map, metric, name, index, step=1e-6):
    """Central difference of batch_loss w.r.t. one parameter entry."""

    def shifted(delta):
        arrays = {k: getattr(params, k).copy() for k in ("W1", "b1", "W2", "b2", "W_out", "b_out")}
        arrays[name].flat[index] += delta
        return MlpParams(joint_types=params.joint_types, **arrays)

    h = step * max(1.0, abs(getattr(params, name).flat[index]))
    hi = batch_loss(Q, shifted(+h), chain, task_map, metric, 1000.0, 1.0)
    lo = batch_loss(Q, shifted(-h), chain, task_map, metric, 1000.0, 1.0)
    return (hi - lo) / (2 * h)


class TestParamGradient:
    def check_fd(self, chain, task_map, metric, r, seed):
        p = small_params(chain, r=r, seed=seed)
        Q = np.random.default_rng(seed + 100).uniform(-2.5, 2.5, size=(4, chain.n))
        grads = param_gradient(Q, p, chain, task_map, metric, 1000.0, 1.0)
        rng = np.random.default_rng(seed + 200)
        checked = 0
        for name in ("W1", "b1", "W2", "b2", "W_out"):
            arr = getattr(p, name)
            for index in rng.choice(arr.size, size=min(5, arr.size), replace=False):
                fd = flat_fd_gradient_entry(Q, p, chain, task_map, metric, name, index)
                got = grads[name].flat[index]
                assert abs(got - fd) <= 1e-4 * max(1.0, abs(fd)), (name, index, got, fd)
                checked += 1
        assert checked >= 20

    def test_fd_match_euclidean_single_output(self):
        self.check_fd(PLANAR2, X, EUCLID, r=1, seed=20)

    def test_fd_match_euclidean_two_outputs(self):
        self.check_fd(PLANAR3, X, EUCLID, r=2, seed=21)

    def test_fd_match_inertia_metric(self):
        self.check_fd(PLANAR3, X, Metric.inertia(PLANAR3), r=2, seed=22)

    def test_output_bias_gradient_is_zero(self):
        p = small_params(PLANAR3, r=2, seed=23)
        Q = np.random.default_rng(24).uniform(-2, 2, size=(3, 3))
        grads = param_gradient(Q, p, PLANAR3, X, EUCLID, 1000.0, 1.0)
        np.testing.assert_array_equal(grads["b_out"], np.zeros(2))

    def test_output_bias_shift_changes_nothing(self):
        p = small_params(PLANAR3, r=2, seed=25)
        shifted = MlpParams(
            W1=p.W1, b1=p.b1, W2=p.W2, b2=p.b2, W_out=p.W_out,
            b_out=p.b_out + np.array([3.0, -7.0]), joint_types=p.joint_types,
        )
        Q = np.random.default_rng(26).uniform(-2, 2, size=(4, 3))
        assert batch_loss(Q, p, PLANAR3, X, EUCLID, 1000.0, 1.0) == batch_loss(
            Q, shifted, PLANAR3, X, EUCLID, 1000.0, 1.0
        )
        ga = param_gradient(Q, p, PLANAR3, X, EUCLID, 1000.0, 1.0)
        gb = param_gradient(Q, shifted, PLANAR3, X, EUCLID, 1000.0, 1.0)
        for name in ("W1", "b1", "W2", "b2", "W_out"):
            np.testing.assert_array_equal(ga[name], gb[name])

    def test_descent_step_decreases_loss(self):
        p = small_params(PLANAR2, r=1, seed=27)
        Q = np.random.default_rng(28).uniform(-2.5, 2.5, size=(16, 2))
        grads = param_gradient(Q, p, PLANAR2, X, EUCLID, 1000.0, 1.0)
        before = batch_loss(Q, p, PLANAR2, X, EUCLID, 1000.0, 1.0)
        eta = 1e-4
        stepped = MlpParams(
            joint_types=p.joint_types,
            **{k: getattr(p, k) - eta * grads[k] for k in grads},
        )
        after = batch_loss(Q, stepped, PLANAR2, X, EUCLID, 1000.0, 1.0)
        assert after < before


class TestTrainingConfig:
    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError):
            TrainingConfig(lambda1=-1.0)

    def test_bad_region_rejected(self):
        with pytest.raises(ConfigError):
            TrainingConfig(region="cube")

    def test_hypercube_needs_center(self):
        with pytest.raises(ConfigError):
            TrainingConfig(region="hypercube", edge=1.0)

    def test_bad_optimizer_rejected(self):
        with pytest.raises(ConfigError):
            TrainingConfig(optimizer="lbfgs")

    def test_sample_count_lower_bound(self):
        with pytest.raises(ConfigError):
            TrainingConfig(samples_per_epoch=0)

    def test_metric_kind_checked(self):
        with pytest.raises(ConfigError):
            TrainingConfig(metric="weighted")


class TestSampling:
    def test_torus_samples_inside_and_nonsingular(self):
        cfg = TrainingConfig(samples_per_epoch=200, seed=0)
        rng = np.random.default_rng(0)
        Q = sample_configurations(rng, PLANAR2, X, cfg, 200)
        assert Q.shape == (200, 2)
        assert (Q >= -np.pi).all() and (Q < np.pi).all()
        from selfmotion.chains import singularity_margin_batch

        assert (singularity_margin_batch(PLANAR2, Q, X) >= 1e-6).all()

    def test_hypercube_samples_inside_box(self):
        cfg = TrainingConfig(region="hypercube", center=(0.5, -0.3), edge=0.4)
        rng = np.random.default_rng(1)
        Q = sample_configurations(rng, PLANAR2, X, cfg, 300)
        assert (np.abs(Q - np.array([0.5, -0.3])) <= 0.2 + 1e-12).all()

    def test_deterministic_given_rng(self):
        cfg = TrainingConfig(samples_per_epoch=50)
        a = sample_configurations(np.random.default_rng(7), PLANAR2, X, cfg, 50)
        b = sample_configurations(np.random.default_rng(7), PLANAR2, X, cfg, 50)
        np.testing.assert_array_equal(a, b)

    def test_singular_region_exhausts_resampling(self):
        # box glued to the fully-stretched singular point: every draw is rejected
        cfg = TrainingConfig(region="hypercube", center=(0.0, 0.0), edge=2e-7)
        rng = np.random.default_rng(2)
        with pytest.raises(NumericError, match="nonsingular"):
            sample_configurations(rng, PLANAR2, X, cfg, 16)


@pytest.fixture(scope="module")
def small_run():
    cfg = TrainingConfig(
        epochs=10,
        steps_per_epoch=50,
        samples_per_epoch=512,
        widths=(32, 16),
        learning_rate=1e-2,
        seed=0,
    )
    return cfg, train(cfg, PLANAR2, X)


class TestTrain:
    def test_curve_shape_and_indices(self, small_run):
        cfg, (params, curve) = small_run
        assert curve.shape == (cfg.epochs * cfg.steps_per_epoch, 3)
        assert curve[0, 0] == 0 and curve[0, 1] == 0
        assert curve[-1, 0] == cfg.epochs - 1 and curve[-1, 1] == cfg.steps_per_epoch - 1
        assert np.isfinite(curve[:, 2]).all()

    def test_default_output_count_is_complement(self, small_run):
        _, (params, _) = small_run
        assert params.r == PLANAR2.n - X.dim(PLANAR2)
        assert params.widths == (32, 16)

    def test_loss_drops(self, small_run):
        _, (_, curve) = small_run
        first = curve[curve[:, 0] == 0, 2].min()
        last = curve[curve[:, 0] == curve[-1, 0], 2].min()
        assert last < 0.35 * first

    def test_no_large_regression_between_epochs(self, small_run):
        cfg, (_, curve) = small_run
        minima = [curve[curve[:, 0] == e, 2].min() for e in range(cfg.epochs)]
        for a, b in zip(minima, minima[1:]):
            assert b < 2.0 * a

    def test_seeded_determinism(self, small_run):
        cfg, (params, curve) = small_run
        params2, curve2 = train(cfg, PLANAR2, X)
        np.testing.assert_array_equal(curve, curve2)
        for name in ("W1", "b1", "W2", "b2", "W_out", "b_out"):
            np.testing.assert_array_equal(getattr(params, name), getattr(params2, name))

    def test_different_seed_changes_curve(self, small_run):
        cfg, (_, curve) = small_run
        cfg2 = TrainingConfig(
            epochs=1, steps_per_epoch=5, samples_per_epoch=64, widths=(32, 16), seed=1
        )
        _, curve2 = train(cfg2, PLANAR2, X)
        assert not np.array_equal(curve[:5, 2], curve2[:, 2])

    def test_sgd_option(self):
        cfg = TrainingConfig(
            epochs=2, steps_per_epoch=5, samples_per_epoch=64, widths=(16, 8),
            optimizer="sgd", learning_rate=1e-4, seed=3,
        )
        _, curve = train(cfg, PLANAR2, X)
        assert curve[-1, 2] < curve[0, 2]

    def test_minibatch_option(self):
        cfg = TrainingConfig(
            epochs=2, steps_per_epoch=6, samples_per_epoch=64, widths=(16, 8),
            batch_size=16, seed=4,
        )
        _, curve = train(cfg, PLANAR2, X)
        assert curve.shape == (12, 3)
        assert np.isfinite(curve[:, 2]).all()

    def test_inertia_metric_runs(self):
        cfg = TrainingConfig(
            epochs=2, steps_per_epoch=8, samples_per_epoch=128, widths=(16, 8),
            metric="inertia", seed=5,
        )
        _, curve = train(cfg, PLANAR3, XY)
        assert np.isfinite(curve[:, 2]).all()
        assert curve[-1, 2] < curve[0, 2]

    def test_explicit_output_count(self):
        cfg = TrainingConfig(
            epochs=1, steps_per_epoch=2, samples_per_epoch=32, widths=(16, 8), r=2, seed=6
        )
        params, _ = train(cfg, PLANAR3, X)
        assert params.r == 2
