import numpy as np
import pytest

from safepg.core import RandomSource
from safepg.env import builtin_layout, env_hash
from safepg.policy import (
    GaussianRbfPolicy,
    GatedLinearPolicy,
    TabularSoftmaxPolicy,
    load_checkpoint,
    save_checkpoint,
)


def fd_log_prob_grad(policy, s, a, h=1e-5):
    """Central finite differences of the log density, the independent gradient oracle."""
    base = policy.params.copy()
    grad = np.zeros_like(base)
    for i in range(base.size):
        up = base.copy()
        up[i] += h
        dn = base.copy()
        dn[i] -= h
        grad[i] = (policy.with_params(up).log_prob(s, a) - policy.with_params(dn).log_prob(s, a)) / (2 * h)
    return grad


def check_fd(policy, s, a):
    analytic = policy.log_prob_grad(s, a)
    fd = fd_log_prob_grad(policy, s, a)
    err = np.max(np.abs(analytic - fd)) / (1.0 + np.max(np.abs(fd)))
    assert err <= 1e-5, err


def small_rbf(deterministic=False):
    centers = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    return GaussianRbfPolicy(
        theta=np.zeros((4, 2)), centers=centers, sigma=0.5, deterministic=deterministic
    )


def gated(learn_gate=False):
    return GatedLinearPolicy.zeros(
        goal=(8.5, 1.5), obstacle_center=(5.0, 5.0), obstacle_radius=2.0, learn_gate=learn_gate
    )


class TestRbfFeatures:
    def test_unit_at_center(self):
        pol = small_rbf()
        f = pol.features(np.array([1.0, 0.0]))
        assert f[1] == pytest.approx(1.0)

    def test_bandwidth_distance(self):
        pol = small_rbf()
        f = pol.features(np.array([0.5, 0.0]))  # distance sigma from center 0
        assert f[0] == pytest.approx(np.exp(-0.5))

    def test_symmetry_between_equidistant_centers(self):
        pol = small_rbf()
        f = pol.features(np.array([0.5, 0.5]))  # equidistant from all four
        assert np.allclose(f, f[0])

    def test_default_lattice_size(self):
        pol = GaussianRbfPolicy.lattice()
        assert pol.centers.shape == (441, 2)
        assert pol.n_params == 882


class TestPolicyMean:
    def test_zero_theta_gives_zero_mean(self):
        pol = GaussianRbfPolicy.lattice()
        assert np.allclose(pol.mean(np.array([3.3, 7.1])), 0.0)

    def test_gated_saturated_gate_is_pure_theta1(self):
        pol = GatedLinearPolicy.zeros(
            goal=(8.5, 1.5), obstacle_center=(5.0, 5.0), obstacle_radius=2.0, gate=(100.0, 1.0)
        )
        gen = np.random.Generator(np.random.PCG64(1))
        theta1 = gen.standard_normal((4, 2))
        theta2 = gen.standard_normal((4, 2))
        pol = pol.with_params(np.concatenate([theta1.ravel(), theta2.ravel()]))
        s = np.array([9.9, 9.9])  # sharp gate far from the obstacle saturates to 1.0
        assert pol.gate_value(s) == pytest.approx(1.0, abs=1e-12)
        expected = theta1.T @ pol.relative_coords(s)
        assert np.allclose(pol.mean(s), expected)

    def test_gated_mean_matches_hand_matrix_product(self):
        # Independent recomputation with explicit scalars at the goal state.
        pol = gated()
        theta1 = np.arange(8, dtype=float).reshape(4, 2)
        theta2 = np.zeros((4, 2))
        pol = pol.with_params(np.concatenate([theta1.ravel(), theta2.ravel()]))
        s = np.array([8.5, 1.5])  # at the goal: goal-relative entries vanish
        m = [0.0, 0.0, 8.5 - 5.0, 1.5 - 5.0]
        dist = np.hypot(3.5, -3.5)
        alpha = 1.0 / (1.0 + np.exp(-5.0 * (dist / 2.0 - 1.0)))
        expected = [
            alpha * (m[0] * 0 + m[1] * 2 + m[2] * 4 + m[3] * 6),
            alpha * (m[0] * 1 + m[1] * 3 + m[2] * 5 + m[3] * 7),
        ]
        assert np.allclose(pol.mean(s), expected)


class TestSampling:
    def test_deterministic_mode_returns_mean(self):
        pol = GaussianRbfPolicy.lattice(deterministic=True)
        gen = np.random.Generator(np.random.PCG64(0))
        params = np.random.Generator(np.random.PCG64(5)).standard_normal(pol.n_params)
        pol = pol.with_params(params)
        s = np.array([2.0, 3.0])
        assert np.array_equal(pol.sample_action(s, gen), pol.mean(s))

    def test_same_source_same_sequence(self):
        pol = GaussianRbfPolicy.lattice()
        s = np.array([2.0, 3.0])
        a1 = [pol.sample_action(s, g) for g in [RandomSource(9, 4).generator()] for _ in range(3)]
        a2 = [pol.sample_action(s, g) for g in [RandomSource(9, 4).generator()] for _ in range(3)]
        assert all(np.array_equal(x, y) for x, y in zip(a1, a2))

    def test_monte_carlo_mean(self):
        pol = GaussianRbfPolicy.lattice()
        params = np.random.Generator(np.random.PCG64(17)).standard_normal(pol.n_params) * 0.3
        pol = pol.with_params(params)
        s = np.array([4.2, 6.6])
        gen = RandomSource(100).generator()
        n = 100_000
        draws = np.array([pol.sample_action(s, gen) for _ in range(n)])
        se = np.sqrt(np.asarray(pol.cov) / n)
        assert np.all(np.abs(draws.mean(axis=0) - pol.mean(s)) <= 4 * se)

    def test_tabular_saturation(self):
        pol = TabularSoftmaxPolicy(theta=np.array([[50.0, 0.0, 0.0]]))
        gen = RandomSource(3).generator()
        draws = [pol.sample_action(0, gen) for _ in range(10_000)]
        assert np.mean(np.asarray(draws) == 0) > 0.999


class TestLogProbGrad:
    def test_zero_at_mean(self):
        pol = small_rbf()
        params = np.random.Generator(np.random.PCG64(2)).standard_normal(pol.n_params)
        pol = pol.with_params(params)
        s = np.array([0.4, 0.7])
        assert np.allclose(pol.log_prob_grad(s, pol.mean(s)), 0.0)

    def test_tabular_uniform_two_actions(self):
        pol = TabularSoftmaxPolicy.zeros(3, 2)
        grad = pol.log_prob_grad(1, 0).reshape(3, 2)
        assert np.allclose(grad[1], [0.5, -0.5])
        assert np.allclose(grad[[0, 2]], 0.0)

    def test_tabular_rows_sum_to_zero(self):
        gen = np.random.Generator(np.random.PCG64(21))
        pol = TabularSoftmaxPolicy(theta=gen.standard_normal((4, 3)) * 2)
        for s in range(4):
            for a in range(3):
                grad = pol.log_prob_grad(s, a).reshape(4, 3)
                assert abs(grad[s].sum()) <= 1e-12

    def test_action_probs_sum_to_one(self):
        gen = np.random.Generator(np.random.PCG64(22))
        pol = TabularSoftmaxPolicy(theta=gen.standard_normal((5, 4)) * 3)
        for s in range(5):
            assert abs(pol.action_probs(s).sum() - 1.0) <= 1e-12

    def test_fd_rbf(self):
        gen = np.random.Generator(np.random.PCG64(31))
        pol = small_rbf().with_params(gen.standard_normal(8))
        for _ in range(5):
            check_fd(pol, gen.random(2), gen.standard_normal(2))

    def test_fd_gated(self):
        gen = np.random.Generator(np.random.PCG64(32))
        for learn_gate in (False, True):
            pol = gated(learn_gate=learn_gate)
            pol = pol.with_params(gen.standard_normal(pol.n_params) * 0.5)
            for _ in range(5):
                check_fd(pol, gen.random(2) * 10, gen.standard_normal(2))

    def test_fd_tabular(self):
        gen = np.random.Generator(np.random.PCG64(33))
        pol = TabularSoftmaxPolicy(theta=gen.standard_normal((3, 2)))
        for _ in range(5):
            check_fd(pol, int(gen.integers(3)), int(gen.integers(2)))

    def test_batch_matches_single(self):
        gen = np.random.Generator(np.random.PCG64(34))
        pol = GaussianRbfPolicy.lattice().with_params(
            gen.standard_normal(882) * 0.2
        )
        states = gen.random((6, 2)) * 10
        actions = gen.standard_normal((6, 2))
        batch = pol.log_prob_grad_batch(states, actions)
        for t in range(6):
            assert np.allclose(batch[t], pol.log_prob_grad(states[t], actions[t]))


class TestCheckpoints:
    def test_round_trip_bit_exact(self, tmp_path):
        spec = builtin_layout("nav-default")
        gen = np.random.Generator(np.random.PCG64(41))
        for pol in (
            GaussianRbfPolicy.lattice().with_params(gen.standard_normal(882)),
            gated(learn_gate=True).with_params(gen.standard_normal(18)),
            TabularSoftmaxPolicy(theta=gen.standard_normal((3, 2))),
        ):
            path = tmp_path / f"{pol.kind}.json"
            save_checkpoint(pol, path, env_hash(spec))
            loaded = load_checkpoint(path, expected_env_hash=env_hash(spec))
            assert loaded.kind == pol.kind
            assert np.array_equal(loaded.params, pol.params)  # bit-exact

    def test_env_hash_mismatch_rejected(self, tmp_path):
        spec = builtin_layout("nav-default")
        pol = TabularSoftmaxPolicy.zeros(2, 2)
        path = tmp_path / "ck.json"
        save_checkpoint(pol, path, env_hash(spec))
        with pytest.raises(ValueError, match="hash"):
            load_checkpoint(path, expected_env_hash="0" * 64)

    def test_corrupt_checkpoint_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ValueError, match="cannot read checkpoint"):
            load_checkpoint(path)
