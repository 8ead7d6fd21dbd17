"""Log-domain Sinkhorn solver."""

import numpy as np
import pytest

from ssot.exact import exact_ot_uniform_square
from ssot.measures import DiscreteMeasure, uniform_measure
from ssot.sinkhorn import plan_marginal_error, sinkhorn_solve


def random_instance(seed, n_s=5, n_t=5):
    rng = np.random.default_rng(seed)
    src = rng.standard_normal((n_s, 2))
    tgt = rng.standard_normal((n_t, 2))
    C = ((src[:, None, :] - tgt[None, :, :]) ** 2).sum(-1)
    return uniform_measure(src), uniform_measure(tgt), C


class TestSinkhornSolve:
    def test_single_atoms(self):
        mu = uniform_measure([[0.0, 0.0]])
        nu = uniform_measure([[1.0, 1.0]])
        res = sinkhorn_solve(mu, nu, np.array([[2.0]]), epsilon=0.7)
        np.testing.assert_array_equal(res.plan, [[1.0]])
        assert res.transport_cost == pytest.approx(2.0)
        assert res.regularized_value == pytest.approx(2.0 - 0.7)

    def test_zero_cost_gives_independence_coupling(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0.1, 1.0, 4)
        b = rng.uniform(0.1, 1.0, 6)
        mu = DiscreteMeasure(np.zeros((4, 1)), a / a.sum())
        nu = DiscreteMeasure(np.zeros((6, 1)), b / b.sum())
        eps = 0.3
        res = sinkhorn_solve(mu, nu, np.zeros((4, 6)), eps)
        np.testing.assert_allclose(res.plan, np.outer(mu.weights, nu.weights), atol=1e-12)
        assert res.transport_cost == pytest.approx(0.0, abs=1e-12)
        assert res.regularized_value == pytest.approx(-eps)

    def test_small_eps_matches_exact_oracle(self):
        mu, nu, C = random_instance(0)
        exact = exact_ot_uniform_square(C)
        res = sinkhorn_solve(mu, nu, C, 0.005, max_iter=20000, tol=1e-9)
        assert abs(res.transport_cost - exact.value) <= 0.02 * exact.value

    def test_convergence_reported_not_silently_accepted(self):
        mu, nu, C = random_instance(2)
        res = sinkhorn_solve(mu, nu, C, 0.005, max_iter=5, tol=1e-12)
        assert res.iterations == 5
        assert not res.converged
        assert res.marginal_error > 1e-12

    def test_tolerance_honored(self):
        mu, nu, C = random_instance(3)
        res = sinkhorn_solve(mu, nu, C, 1.0, max_iter=10000, tol=1e-7)
        assert res.converged
        assert res.marginal_error <= 1e-7
        assert plan_marginal_error(res.plan, mu, nu) <= 1e-7

    def test_plan_matches_gibbs_form(self):
        mu, nu, C = random_instance(4)
        eps = 0.5
        res = sinkhorn_solve(mu, nu, C, eps, tol=1e-10)
        gibbs = (
            mu.weights[:, None]
            * nu.weights[None, :]
            * np.exp((res.dual_u[:, None] + res.dual_v[None, :] - C) / eps)
        )
        np.testing.assert_allclose(res.plan, gibbs, rtol=1e-8)

    def test_dual_objective_identity_at_convergence(self):
        mu, nu, C = random_instance(5)
        eps = 0.8
        res = sinkhorn_solve(mu, nu, C, eps, tol=1e-11)
        u, v = res.dual_u, res.dual_v
        dual = (
            mu.weights @ u
            + nu.weights @ v
            - eps
            * (
                mu.weights[:, None]
                * nu.weights[None, :]
                * np.exp((u[:, None] + v[None, :] - C) / eps)
            ).sum()
        )
        assert abs(res.regularized_value - dual) <= 1e-6 * (1 + abs(dual))

    def test_shift_invariance_of_plan(self):
        mu, nu, C = random_instance(6)
        eps = 0.5
        res = sinkhorn_solve(mu, nu, C, eps, tol=1e-10)
        for kappa in (-10.0, -1.0, 0.25, 10.0):
            shifted = (
                mu.weights[:, None]
                * nu.weights[None, :]
                * np.exp(((res.dual_u + kappa)[:, None] + (res.dual_v - kappa)[None, :] - C) / eps)
            )
            np.testing.assert_allclose(shifted, res.plan, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_marginal_error_monotone(self, seed):
        mu, nu, C = random_instance(seed, 6, 7)
        res = sinkhorn_solve(mu, nu, C, 1.0, max_iter=200, tol=1e-13)
        h = res.error_history
        # non-strict monotone, allowing float jitter at machine level
        assert (np.diff(h) <= 1e-12 * np.maximum(h[:-1], 1e-300)).all()

    def test_cost_decreases_with_epsilon_toward_exact(self):
        mu, nu, C = random_instance(7)
        exact = exact_ot_uniform_square(C)
        costs = []
        for eps in (1.0, 0.1, 0.01, 0.005):
            res = sinkhorn_solve(mu, nu, C, eps, max_iter=30000, tol=1e-9)
            costs.append(res.transport_cost)
        assert all(c1 >= c2 - 1e-6 for c1, c2 in zip(costs, costs[1:]))
        assert abs(costs[-1] - exact.value) <= 0.02 * exact.value

    def test_zero_mass_atoms_dropped(self):
        mu = DiscreteMeasure(np.zeros((3, 1)), [0.5, 0.0, 0.5])
        nu = uniform_measure(np.zeros((2, 1)))
        C = np.arange(6.0).reshape(3, 2)
        res = sinkhorn_solve(mu, nu, C, 0.5, tol=1e-10)
        assert res.plan[1].sum() == 0.0
        assert res.dual_u[1] == 0.0
        assert plan_marginal_error(res.plan, mu, nu) <= 1e-9

    def test_nonfinite_cost_rejected(self):
        mu, nu, _ = random_instance(8, 2, 2)
        with pytest.raises(ValueError, match="finite"):
            sinkhorn_solve(mu, nu, np.array([[1.0, np.inf], [0.0, 1.0]]), 1.0)

    def test_bad_epsilon_rejected(self):
        mu, nu, C = random_instance(9, 2, 2)
        with pytest.raises(ValueError, match="epsilon"):
            sinkhorn_solve(mu, nu, C, 0.0)

    def test_objective_history_converges_to_regularized_value(self):
        mu, nu, C = random_instance(10)
        res = sinkhorn_solve(mu, nu, C, 1.0, tol=1e-11)
        assert res.objective_history[-1] == pytest.approx(res.regularized_value, rel=1e-8)
        # ascending dual values
        assert (np.diff(res.objective_history) >= -1e-10).all()


class TestPlanMarginalError:
    def test_outer_product_is_exact(self):
        a = np.array([0.3, 0.7])
        b = np.array([0.2, 0.5, 0.3])
        assert plan_marginal_error(np.outer(a, b), a, b) <= 1e-16

    def test_single_entry_perturbation(self):
        a = np.array([0.3, 0.7])
        b = np.array([0.5, 0.5])
        plan = np.outer(a, b)
        plan[0, 1] += 1e-3
        assert plan_marginal_error(plan, a, b) >= 1e-3

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            plan_marginal_error(np.zeros((2, 2)), [1.0], [0.5, 0.5])
