import numpy as np
import pytest
from hypothesis import given, strategies as st

from passfl import flsim
from passfl.bound import lemma_rhs
from passfl.scenario import ConfigError, generate_scenario


@pytest.fixture(scope="module")
def quad():
    return flsim.make_quadratic_task(12, 0)


@pytest.fixture(scope="module")
def soft():
    return flsim.make_softmax_task(12, 0, samples=1200, test_samples=400)


class TestPartition:
    @given(st.integers(0, 1000), st.floats(0.05, 5.0), st.integers(1, 20))
    def test_disjoint_and_exhaustive(self, seed, alpha, K):
        labels = np.random.default_rng(seed).integers(0, 4, size=300)
        shards = flsim.partition_dirichlet(labels, K, alpha, seed)
        allidx = np.concatenate(shards)
        assert len(allidx) == 300 and len(np.unique(allidx)) == 300
        assert all(len(s) >= 1 for s in shards)

    def test_seeded(self):
        labels = np.arange(100) % 5
        a = flsim.partition_dirichlet(labels, 6, 0.35, 3)
        b = flsim.partition_dirichlet(labels, 6, 0.35, 3)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_large_alpha_near_uniform(self):
        labels = np.repeat(np.arange(4), 3000)
        shards = flsim.partition_dirichlet(labels, 6, 1e4, 0)
        for s in shards:
            frac = np.bincount(labels[s], minlength=4) / len(s)
            assert np.all(np.abs(frac - 0.25) < 0.05)

    def test_errors(self):
        with pytest.raises(ConfigError):
            flsim.partition_dirichlet(np.zeros(3), 4, 0.35, 0)
        with pytest.raises(ConfigError):
            flsim.partition_dirichlet(np.zeros(30), 4, 0.0, 0)


class TestLocalUpdate:
    def test_zero_steps(self, quad):
        w = np.ones(quad.num_params)
        np.testing.assert_array_equal(flsim.local_update(quad, w, quad.shards[0], 0, 0.1).model, w)

    def test_single_step_on_all_data(self, quad):
        w = np.linspace(-1, 1, quad.num_params)
        everything = np.arange(quad.num_samples)
        got = flsim.local_update(quad, w, everything, 1, 1 / quad.lipschitz).model
        np.testing.assert_allclose(got, w - quad.grad(w) / quad.lipschitz, rtol=1e-12)

    def test_matches_affine_recurrence(self, quad):
        shard = quad.shards[2]
        X, y = quad.X[shard], quad.y[shard]
        lr, steps = 1 / quad.lipschitz, 7
        A = np.eye(X.shape[1]) - lr * X.T @ X / len(y)
        b = lr * X.T @ y / len(y)
        w0 = np.full(X.shape[1], 0.3)
        expect = np.linalg.matrix_power(A, steps) @ w0 + sum(np.linalg.matrix_power(A, i) @ b for i in range(steps))
        got = flsim.local_update(quad, w0, shard, steps, lr).model
        np.testing.assert_allclose(got, expect, rtol=1e-10, atol=1e-12)


class TestAggregate:
    def test_identical_models(self):
        m = [np.array([1.0, 2.0])] * 3
        np.testing.assert_allclose(flsim.aggregate(m, [1, 1, 0], [3, 4, 5]), [1.0, 2.0])

    def test_single_and_pair(self):
        m = [np.array([1.0]), np.array([3.0]), np.array([9.0])]
        assert flsim.aggregate(m, [0, 1, 0], [3, 4, 5])[0] == 3.0
        assert flsim.aggregate(m, [1, 1, 0], [2, 2, 5])[0] == pytest.approx(2.0)
        with pytest.raises(ValueError):
            flsim.aggregate(m, [0, 0, 0], [1, 1, 1])

    @given(st.permutations(range(5)))
    def test_permutation_invariant(self, perm):
        r = np.random.default_rng(1)
        models = [r.normal(size=3) for _ in range(5)]
        mask = np.array([1, 0, 1, 1, 1])
        sizes = np.array([5, 6, 7, 8, 9])
        base = flsim.aggregate(models, mask, sizes)
        p = list(perm)
        np.testing.assert_allclose(flsim.aggregate([models[i] for i in p], mask[p], sizes[p]), base,
                                   rtol=1e-12)


class TestTasks:
    def test_quadratic_constants(self, quad):
        H = quad.X.T @ quad.X / quad.num_samples
        ev = np.linalg.eigvalsh(H)
        assert quad.lipschitz == pytest.approx(ev[-1]) and quad.pl_delta == pytest.approx(ev[0])
        assert np.linalg.norm(quad.grad(quad.w_star)) < 1e-9
        assert quad.o_0 > 0

    @pytest.mark.parametrize("name", ["quad", "soft"])
    def test_gradient_finite_difference(self, name, request):
        task = request.getfixturevalue(name)
        r = np.random.default_rng(0)
        w = r.normal(scale=0.1, size=task.num_params)
        d = r.normal(size=task.num_params)
        h = 1e-6
        fd = (task.loss(w + h * d) - task.loss(w - h * d)) / (2 * h)
        assert fd == pytest.approx(np.dot(task.grad(w), d), rel=1e-5)

    @pytest.mark.parametrize("name", ["quad", "soft"])
    def test_sample_gradient_norms(self, name, request):
        task = request.getfixturevalue(name)
        w = np.random.default_rng(1).normal(scale=0.1, size=task.num_params)
        norms = task.sample_grad_norms(w, np.arange(5))
        for i in range(5):
            assert norms[i] == pytest.approx(np.linalg.norm(task.grad(w, np.array([i]))), rel=1e-9)

    def test_softmax_optimum(self, soft):
        assert np.linalg.norm(soft.grad(soft.w_star)) < 1e-5
        assert soft.pl_delta == soft.reg and soft.lipschitz > soft.reg

    def test_csv_import(self, tmp_path):
        r = np.random.default_rng(0)
        X = r.normal(size=(60, 3))
        y = (X[:, 0] > 0).astype(int)
        path = tmp_path / "d.csv"
        np.savetxt(path, np.column_stack([X, y]), delimiter=",")
        Xl, yl = flsim.load_csv_dataset(path)
        np.testing.assert_allclose(Xl, X)
        task = flsim.task_from_arrays(Xl, yl, "softmax", 4, 0)
        assert task.num_classes == 2 and task.num_devices == 4
        quad = flsim.task_from_arrays(Xl, X @ [1.0, 2.0, 3.0], "quadratic", 4, 0)
        assert quad.pl_delta > 0


class TestRun:
    def test_zero_rounds(self, quad):
        log = flsim.run_federated(generate_scenario(0, 12), quad, 0)
        assert log.rounds == 0 and len(log.gap) == 1 and log.rows() == []

    def test_full_participation_single_step(self, quad):
        log = flsim.run_federated(generate_scenario(0, 12), quad, 15, pipeline="perfect", local_steps=1)
        assert max(log.err_norm) < 1e-10
        assert max(log.drift_norm) == 0
        p = quad.learn_params(1, log.grad_bound)
        floor = log.grad_bound**2 / (2 * p.lipschitz * p.total_data**2)
        for t in range(1, 16):
            assert log.gap[t] <= p.contraction * log.gap[t - 1] + floor + 1e-12
            assert log.loss[t] <= log.loss[t - 1] + 1e-12

    def test_lemma_inequality_per_round(self, quad):
        sc = generate_scenario(0, 12)
        w = quad.w0.copy()
        log = flsim.run_federated(sc, quad, 5, pipeline="perfect", local_steps=1)
        p = quad.learn_params(1, log.grad_bound)
        for t in range(5):
            g2 = float(np.sum(quad.grad(w) ** 2))
            rhs = lemma_rhs(quad.loss(w), g2, 0.0, p, quad.num_samples)
            w = w - quad.grad(w) / quad.lipschitz
            assert quad.loss(w) == pytest.approx(log.loss[t + 1], rel=1e-10)
            assert log.loss[t + 1] <= rhs + 1e-12

    def test_perfect_gap_under_envelope(self, quad):
        log = flsim.run_federated(generate_scenario(0, 12), quad, 20, pipeline="perfect", local_steps=1)
        assert np.all(np.array(log.gap) <= log.bound.envelope + 1e-12)
        assert all(int(m.sum()) == 12 for m in log.masks)

    def test_mask_override_and_latency(self, quad):
        masks = [np.eye(12)[t % 12] for t in range(6)]
        log = flsim.run_federated(generate_scenario(0, 12), quad, 6, masks=masks)
        assert [int(m.sum()) for m in log.masks] == [1] * 6
        assert np.all(np.diff(log.cum_latency) >= 0)
        assert log.err_norm[0] > 0

    def test_softmax_learns(self, soft):
        log = flsim.run_federated(generate_scenario(0, 12), soft, 15, batch_size=32)
        assert log.metric[-1] > log.metric[0] + 0.2
        assert log.loss[-1] < log.loss[0]

    def test_inconsistent_sizes(self, quad):
        with pytest.raises(ConfigError):
            flsim.run_federated(generate_scenario(0, 5), quad, 1)
        with pytest.raises(ConfigError):
            flsim.run_federated(generate_scenario(0, 12), quad, 1, pipeline="bogus")


def test_fedpass_reaches_lower_loss_within_latency_budget():
    wins = 0
    for seed in range(20):
        sc = generate_scenario(seed, 12)
        task = flsim.make_quadratic_task(12, seed, samples=480, test_samples=120)
        fed = flsim.run_federated(sc, task, 12, pipeline="fedpass", seed=seed)
        conv = flsim.run_federated(sc, task, 10, pipeline="conventional", seed=seed)
        budget = conv.cum_latency[-1]
        done = int(np.searchsorted(fed.cum_latency, budget, side="right"))
        wins += fed.loss[done] <= conv.loss[-1]
    assert wins > 10
