import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftplan.drift_sim import Observations, SimConfig, observations, simulate_plan
from driftplan.flowfield import VelocityField, make_patchwork
from driftplan.reconstruction import (
    ErrorReport, Normalizer, SvrModel, compare_strategies, cv_scores, empirical_cdf, error_report,
    fold_ids, grid_search_cv, predict_field, rbf_kernel, reconstruct, solve_svr_dual,
    svr_dual_objective, train_linear, train_svr, unique_observations,
)
from oracles import svr_dual_cvxpy


def make_obs(xy, u, v):
    n = len(u)
    xy = np.asarray(xy, float)
    return Observations(np.zeros(n, int), np.arange(n, dtype=float), xy[:, 0], xy[:, 1],
                        np.asarray(u, float), np.asarray(v, float))


def random_obs(seed, n=40):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 1000, (n, 2))
    return make_obs(xy, np.sin(xy[:, 0] / 300), np.cos(xy[:, 1] / 200))


class TestSolver:
    @pytest.mark.parametrize("seed", range(8))
    def test_dual_matches_qp(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.uniform(size=(20, 2))
        z = np.sin(4 * X[:, 0]) + 0.1 * rng.normal(size=20)
        C, eps, gamma = [(1.0, 0.05, 2.0), (10.0, 0.01, 10.0), (0.5, 0.1, 1.0)][seed % 3]
        K = rbf_kernel(X, X, gamma)
        beta, bias, _, gap = solve_svr_dual(K, z, C, eps)
        _, ref = svr_dual_cvxpy(K, z, C, eps)
        ours = -svr_dual_objective(K, z, beta, eps)
        assert abs(ours - ref) <= 1e-3 * abs(ref)
        assert abs(beta.sum()) < 1e-9 and np.all(np.abs(beta) <= C + 1e-12)

    @pytest.mark.parametrize("seed", range(8))
    def test_kkt(self, seed):
        rng = np.random.default_rng(50 + seed)
        X = rng.uniform(size=(20, 2))
        z = np.cos(3 * X[:, 1]) + 0.2 * rng.normal(size=20)
        C, eps = 2.0, 0.05
        K = rbf_kernel(X, X, 5.0)
        beta, bias, _, _ = solve_svr_dual(K, z, C, eps)
        r = K @ beta + bias - z
        tol = 1e-4
        for b, ri in zip(beta, r):
            if abs(b) < 1e-12:
                assert abs(ri) <= eps + tol
            elif abs(b) < C - 1e-12:
                assert abs(abs(ri) - eps) <= tol and np.sign(ri) == -np.sign(b)
            else:
                assert abs(ri) >= eps - tol and np.sign(ri) == -np.sign(b)


class TestTrain:
    def test_constant_target(self):
        obs = random_obs(0)
        obs = make_obs(obs.xy, np.full(len(obs), 0.3), np.full(len(obs), -0.2))
        mu, mv = train_svr(obs, 10, 0.01, 1.0)
        q = np.random.default_rng(1).uniform(0, 1000, (50, 2))
        assert np.all(np.abs(mu.predict(q) - 0.3) <= 0.01 + 1e-6)
        assert np.all(np.abs(mv.predict(q) + 0.2) <= 0.01 + 1e-6)

    def test_bounded_prediction(self):
        obs = random_obs(2)
        for m in train_svr(obs, 5, 0.01, 20):
            q = np.random.default_rng(3).uniform(-500, 1500, (200, 2))
            assert np.all(np.abs(m.predict(q)) <= np.abs(m.dual_coeffs).sum() + abs(m.bias) + 1e-12)
            assert np.all(np.abs(m.dual_coeffs) <= m.C + 1e-12)

    def test_interior_sv_fit(self):
        obs = random_obs(4)
        mu, _ = train_svr(obs, 10, 0.02, 30)
        inner = np.abs(mu.dual_coeffs) < mu.C - 1e-9
        pred = mu.predict(mu.support_vectors[inner])
        target = {tuple(p): u for p, u in zip(obs.xy, obs.u)}
        for p, y in zip(mu.support_vectors[inner], pred):
            assert abs(abs(y - target[tuple(p)]) - 0.02) <= 1e-3

    def test_degenerate_inputs(self):
        with pytest.raises(ValueError):
            train_svr(make_obs([[1, 1], [1, 1]], [0, 1], [0, 1]))
        with pytest.raises(ValueError):
            train_svr(random_obs(0), C=0)

    def test_json_round_trip(self):
        mu, _ = train_svr(random_obs(5), 3, 0.01, 7)
        back = SvrModel.from_json(mu.to_json())
        q = np.random.default_rng(0).uniform(0, 1000, (20, 2))
        assert np.array_equal(back.predict(q), mu.predict(q))

    def test_domain_normalisation(self):
        n = Normalizer.fit(np.array([[5.0, 5.0], [6.0, 9.0]]), domain=(0, 10, 0, 20))
        assert np.allclose(n(np.array([[10.0, 20.0]])), [[1.0, 1.0]])

    def test_linear_baseline_exact_on_plane(self):
        obs = random_obs(6)
        obs = make_obs(obs.xy, 0.001 * obs.x - 0.002 * obs.y + 0.5, np.full(len(obs), 0.1))
        lu, lv = train_linear(obs)
        q = np.array([[100.0, 200.0], [700.0, 300.0]])
        assert np.allclose(lu.predict(q), 0.001 * q[:, 0] - 0.002 * q[:, 1] + 0.5)
        assert np.allclose(lv.predict(q), 0.1)

    def test_unique_observations(self):
        obs = make_obs([[0, 0], [0, 0], [1, 1]], [1, 1, 2], [0, 0, 0])
        assert len(unique_observations(obs)) == 2


class TestGridSearch:
    def test_single_point_grid(self):
        assert grid_search_cv(random_obs(0), (2.0,), (0.01,), (3.0,), folds=3) == (2.0, 0.01, 3.0)

    def test_selection_is_minimum(self):
        obs = random_obs(1)
        best, scores = grid_search_cv(obs, (1, 10), (0.01, 0.05), (1, 10), folds=4, return_scores=True)
        assert scores[best] == min(scores.values())
        # independent recomputation of one cell
        ids = fold_ids(obs, 4)
        total = 0.0
        C, eps, gamma = best
        for k in range(4):
            tr, te = obs.subset(ids != k), obs.subset(ids == k)
            mu, mv = train_svr(tr, C, eps, gamma)
            total += np.hypot(mu.predict(te.xy) - te.u, mv.predict(te.xy) - te.v).sum()
        assert total / len(obs) == pytest.approx(scores[best], rel=1e-9)

    def test_row_order_irrelevant(self):
        obs = random_obs(2)
        perm = np.random.default_rng(0).permutation(len(obs))
        grid = ((1, 10), (0.01,), (1, 10, 100))
        assert grid_search_cv(obs, *grid, seed=3) == grid_search_cv(obs.subset(perm), *grid, seed=3)

    def test_fold_errors(self):
        with pytest.raises(ValueError):
            cv_scores(random_obs(0, n=3), (1,), (0.1,), (1,), folds=5)
        with pytest.raises(ValueError):
            cv_scores(random_obs(0), (1,), (0.1,), (1,), folds=1)
        with pytest.raises(ValueError):
            cv_scores(random_obs(0), (), (0.1,), (1,))

    def test_folds_balanced(self):
        ids = fold_ids(random_obs(0, n=23), 5)
        assert sorted(np.bincount(ids)) == [4, 4, 5, 5, 5]


class TestPrediction:
    def test_geometry_and_constant(self):
        mask = np.ones((6, 7), bool)
        mask[2, 3] = False
        f = VelocityField(np.where(mask, 0.4, 0), np.where(mask, 0.1, 0), mask, cell_size=100.0)
        obs = observations(simulate_plan(f, [(0, 0), (5, 0)], SimConfig(n_steps=20)))
        pred, _, _ = reconstruct(obs, f, (10.0,), (0.001,), (1.0,), folds=3)
        assert pred.shape == f.shape and np.array_equal(pred.mask, f.mask)
        assert error_report(f, pred).mean <= 1e-3 * 0.4123

    def test_single_gyre_floor(self):
        n = 16
        x = (np.arange(n) + 0.5) / n
        X, Y = np.meshgrid(x, x)
        f = VelocityField(-0.3 * np.sin(np.pi * X) * np.cos(np.pi * Y),
                          0.3 * np.cos(np.pi * X) * np.sin(np.pi * Y), cell_size=1000.0)
        starts = [(i, j) for i in (2, 5, 10, 13) for j in (2, 5, 10, 13)]
        obs = observations(simulate_plan(f, starts, SimConfig(n_steps=25)))
        pred, _, _ = reconstruct(obs, f, (10.0, 100.0), (0.001, 0.01), (1.0, 10.0), folds=3)
        assert error_report(f, pred).mean <= 0.2 * f.speed.mean()


class TestErrors:
    def test_identity(self):
        f, _ = make_patchwork(8, 8, seed=0)
        r = error_report(f, f)
        assert r.mean == 0 and r.cdf_fractions[0] == 1 / 64 and r.cdf_values[-1] == 0

    def test_hand_value_and_land(self):
        mask = np.array([[True, True], [True, False]])
        t = VelocityField([[1.0, 0], [0, 0]], np.zeros((2, 2)), mask)
        p = VelocityField(np.zeros((2, 2)), np.zeros((2, 2)), mask)
        r = error_report(t, p)
        assert r.rho[0, 0] == 1 and np.isnan(r.rho[1, 1]) and r.mean == pytest.approx(1 / 3)

    def test_geometry_mismatch(self):
        a = VelocityField(np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            error_report(a, VelocityField(np.zeros((2, 3)), np.zeros((2, 3))))
        with pytest.raises(ValueError):
            error_report(a, VelocityField(np.zeros((2, 2)), np.zeros((2, 2)), cell_size=2))

    def test_mean_recompute_and_csv(self, tmp_path):
        f, _ = make_patchwork(9, 9, seed=1)
        g, _ = make_patchwork(9, 9, seed=2)
        r = error_report(f, g)
        manual = np.sqrt((f.u - g.u) ** 2 + (f.v - g.v) ** 2).mean()
        assert r.mean == pytest.approx(manual)
        r.to_csv(tmp_path / "e.csv")
        r.cdf_to_csv(tmp_path / "c.csv")
        assert (tmp_path / "e.csv").read_text().startswith("i,j,rho\n")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "value,fraction" and len(lines) == 82

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 2 * math.pi))
    def test_rotation_invariance(self, seed, th):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(2, 4, 4))
        b = rng.normal(size=(2, 4, 4))
        c, s = math.cos(th), math.sin(th)
        rot = lambda w: VelocityField(c * w[0] - s * w[1], s * w[0] + c * w[1])
        r1 = error_report(VelocityField(*a), VelocityField(*b))
        r2 = error_report(rot(a), rot(b))
        assert np.allclose(r1.rho, r2.rho)
        assert np.all(r1.rho >= 0)

    def test_compare(self):
        f, _ = make_patchwork(8, 8, seed=0)
        g, _ = make_patchwork(8, 8, seed=1)
        h, _ = make_patchwork(8, 8, seed=2)
        reps = {"uniform": error_report(f, g), "graph": error_report(f, h)}
        cmp = compare_strategies(f, reps)
        row = {r["strategy"]: r for r in cmp.rows}
        assert row["graph"]["ratio"] == pytest.approx(reps["uniform"].mean / reps["graph"].mean)
        same = compare_strategies(f, {"uniform": reps["uniform"], "x": reps["uniform"]})
        assert all(r["ratio"] == 1 for r in same.rows)
        for vals, fr in cmp.cdfs.values():
            assert np.all(np.diff(vals) >= 0) and np.all(np.diff(fr) > 0)
        with pytest.raises(ValueError):
            compare_strategies(f, {"uniform": reps["uniform"]})

    def test_empirical_cdf(self):
        v, fr = empirical_cdf([3, 1, 2])
        assert v.tolist() == [1, 2, 3] and fr.tolist() == [1 / 3, 2 / 3, 1]
