import numpy as np
import pytest

from cdcert import diagnostics
from cdcert.penalty import PenaltySpec, theta, value
from cdcert.problems import SyntheticSpec, generate
from cdcert.solver import (
    CDState,
    DimensionError,
    NonFiniteError,
    Problem,
    SolverOptions,
    Status,
    ZeroColumnError,
    cd_sweep,
    geometric_lambdas,
    lambda_max,
    normalize_columns,
    objective,
    regularization_path,
    solve,
)
from oracles import lasso_reference, objective_literal

I2 = normalize_columns(np.eye(2), [3.0, 0.5])


class TestNormalize:
    def test_identity_unchanged(self):
        prob = normalize_columns(np.eye(3), [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(prob.a, np.eye(3))
        np.testing.assert_array_equal(prob.column_scales, [1.0, 1.0, 1.0])

    def test_scales_column(self):
        prob = normalize_columns([[3.0], [4.0]], [1.0, 1.0])
        np.testing.assert_allclose(prob.a[:, 0], [0.6, 0.8], rtol=0, atol=1e-15)
        assert prob.column_scales[0] == 5.0

    def test_zero_column(self):
        with pytest.raises(ZeroColumnError):
            normalize_columns([[1.0, 0.0], [2.0, 0.0]], [1.0, 1.0])

    def test_non_finite(self):
        with pytest.raises(NonFiniteError):
            normalize_columns([[1.0, np.nan], [2.0, 1.0]], [1.0, 1.0])
        with pytest.raises(NonFiniteError):
            normalize_columns(np.eye(2), [np.inf, 1.0])

    def test_problem_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            Problem(np.array([[1.0, 1.0], [1.0, 0.0]]), np.ones(2), np.ones(2))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            normalize_columns(np.eye(3), [1.0, 2.0])

    def test_original_scale(self):
        prob = normalize_columns([[2.0, 0.0], [0.0, 4.0]], [2.0, 8.0])
        res = solve(prob, PenaltySpec("lasso", 1e-3), SolverOptions(tol=1e-12))
        # x_norm_i = A_norm_i^T b - lam on an orthogonal design; x_orig = x_norm / scale
        np.testing.assert_allclose(res.x_hat_normalized, [2.0 - 1e-3, 8.0 - 1e-3])
        np.testing.assert_allclose(res.x_hat, [(2.0 - 1e-3) / 2, (8.0 - 1e-3) / 4])


class TestObjective:
    def test_zero_vector(self, small_problem):
        prob, _ = small_problem
        assert objective(prob, PenaltySpec("mcp", 0.3, 2.5), np.zeros(prob.p)) == pytest.approx(0.5 * prob.b @ prob.b)

    def test_identity(self):
        prob = normalize_columns(np.eye(2), [1.0, 0.0])
        assert objective(prob, PenaltySpec("lasso", 1.0), np.array([1.0, 0.0])) == 1.0

    @pytest.mark.parametrize("spec", [PenaltySpec("lasso", 0.4), PenaltySpec("scad", 0.4, 3.7), PenaltySpec("mcp", 0.4, 2.0)])
    def test_against_literal(self, spec):
        prob, _ = generate(SyntheticSpec(n=5, p=8, sparsity=3, seed=3))
        x = np.random.default_rng(0).normal(size=8)
        lit = objective_literal(prob.a, prob.b, x, lambda t: value(spec, t))
        assert objective(prob, spec, x) == pytest.approx(lit, abs=1e-12)

    def test_dimension(self, small_problem):
        prob, _ = small_problem
        with pytest.raises(DimensionError):
            objective(prob, PenaltySpec("lasso", 1.0), np.zeros(prob.p + 1))


class TestSweep:
    def test_lasso_identity(self):
        state = cd_sweep(CDState.start(I2), I2, PenaltySpec("lasso", 1.0))
        np.testing.assert_array_equal(state.x, [2.0, 0.0])

    def test_mcp_identity(self):
        state = cd_sweep(CDState.start(I2), I2, PenaltySpec("mcp", 1.0, 2.0))
        np.testing.assert_array_equal(state.x, [3.0, 0.0])

    def test_fixed_point_preserved(self, small_problem):
        prob, _ = small_problem
        spec = PenaltySpec("mcp", 0.2, 3.0)
        res = solve(prob, spec, SolverOptions(tol=1e-14, max_sweeps=5000))
        state = CDState.start(prob, res.x_hat_normalized)
        # iterate until bitwise fixed (round-off may take a couple of sweeps)
        for _ in range(5):
            before = state.x.copy()
            cd_sweep(state, prob, spec)
            if np.array_equal(before, state.x):
                break
        before = state.x.copy()
        cd_sweep(state, prob, spec)
        np.testing.assert_array_equal(state.x, before)
        assert diagnostics.stationarity_gap(prob, spec, state.x) <= 1e-8

    @pytest.mark.parametrize("spec", [PenaltySpec("lasso", 0.3), PenaltySpec("scad", 0.3, 3.0), PenaltySpec("mcp", 0.3, 1.5)])
    def test_each_update_is_scalar_argmin(self, small_problem, spec):
        prob, _ = small_problem
        state = CDState.start(prob, np.random.default_rng(1).normal(size=prob.p))
        for i in range(prob.p):
            state_i = CDState(state.x.copy(), state.r.copy())
            cd_sweep(state_i, prob, spec, order=[i])
            # coordinate i minimizes F along e_i
            f = lambda t: objective(prob, spec, np.where(np.arange(prob.p) == i, t, state.x))  # noqa: E731
            best = f(state_i.x[i])
            for t in np.linspace(state_i.x[i] - 2, state_i.x[i] + 2, 401):
                assert best <= f(t) + 1e-12

    def test_residual_integrity(self, seeded_problem):
        prob, _ = seeded_problem
        spec = PenaltySpec("mcp", 0.2 * lambda_max(prob), 3.0)
        state = CDState.start(prob)
        for _ in range(30):
            cd_sweep(state, prob, spec)
            drift = np.linalg.norm(state.r - (prob.b - prob.a @ state.x))
            assert drift <= 1e-8 * (1 + np.linalg.norm(prob.b))
        state.refresh(prob)
        assert np.linalg.norm(state.r - (prob.b - prob.a @ state.x)) == 0.0


class TestSolve:
    @pytest.mark.parametrize("spec", [PenaltySpec("lasso", 0.5), PenaltySpec("scad", 0.5, 3.7), PenaltySpec("mcp", 0.5, 2.0)])
    def test_zero_response(self, small_problem, spec):
        prob, _ = small_problem
        zero = Problem(prob.a, np.zeros(prob.n), prob.column_scales)
        res = solve(zero, spec)
        assert res.sweeps == 1 and res.status is Status.CONVERGED
        np.testing.assert_array_equal(res.x_hat, 0.0)

    def test_seeded_mcp_run(self, seeded_problem):
        prob, _ = seeded_problem
        lmax = lambda_max(prob)
        assert lmax == pytest.approx(1.993112274298717, rel=1e-12)
        spec = PenaltySpec("mcp", 0.2 * lmax, 3.0)
        res = solve(prob, spec, SolverOptions(tol=1e-10))
        assert res.status is Status.CONVERGED
        f = res.trace.objectives
        moving = res.trace.step_norms > 1e-6
        assert np.all(np.diff(f)[moving] < 0)
        assert np.all(np.diff(f) <= 1e-10)
        # regression goldens pinned from the first run of this build
        assert res.sweeps == 31
        assert res.support_size == 10
        assert res.objective == pytest.approx(2.8597349021839324, rel=1e-12)

    def test_result_invariants(self, seeded_problem):
        prob, _ = seeded_problem
        spec = PenaltySpec("scad", 0.3 * lambda_max(prob), 3.7)
        res = solve(prob, spec)
        assert res.objective == pytest.approx(objective(prob, spec, res.x_hat_normalized), abs=1e-10)
        assert res.trace.records[-1].step_norm <= res.options.tol
        np.testing.assert_array_equal(res.x_hat, res.x_hat_normalized / prob.column_scales)

    def test_max_sweeps(self, seeded_problem):
        prob, _ = seeded_problem
        res = solve(prob, PenaltySpec("mcp", 0.1 * lambda_max(prob), 3.0), SolverOptions(max_sweeps=2))
        assert res.status is Status.MAX_SWEEPS and res.sweeps == 2

    def test_sufficient_decrease_every_sweep(self, seeded_problem):
        prob, _ = seeded_problem
        for spec in (PenaltySpec("mcp", 0.15 * lambda_max(prob), 1.5), PenaltySpec("scad", 0.15 * lambda_max(prob), 2.2)):
            res = solve(prob, spec, SolverOptions(tol=1e-10))
            for rec in res.trace.records:
                assert rec.h1_lhs >= theta(spec) * rec.step_norm**2 - 1e-10

    def test_lasso_kkt(self, seeded_problem):
        prob, _ = seeded_problem
        res = solve(prob, PenaltySpec("lasso", 0.1 * lambda_max(prob)))
        assert res.stationarity_gap <= 1e-6

    def test_lasso_matches_qp(self):
        cp = pytest.importorskip("cvxpy")
        prob, _ = generate(SyntheticSpec(n=40, p=15, sparsity=4, seed=11))
        lam = 0.1 * lambda_max(prob)
        res = solve(prob, PenaltySpec("lasso", lam), SolverOptions(tol=1e-13))
        # x = u - v, u, v >= 0: a QP in standard form
        u, v = cp.Variable(prob.p, nonneg=True), cp.Variable(prob.p, nonneg=True)
        a = prob.a
        qp = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(a @ (u - v) - prob.b) + lam * cp.sum(u + v)))
        qp.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
        np.testing.assert_allclose(res.x_hat_normalized, u.value - v.value, atol=1e-6)
        ref = lasso_reference(prob.a, prob.b, lam)
        np.testing.assert_allclose(res.x_hat_normalized, ref, atol=1e-9)

    def test_degenerate_shapes(self):
        one_col = normalize_columns([[1.0], [2.0], [2.0]], [3.0, 0.0, 0.0])
        res = solve(one_col, PenaltySpec("mcp", 0.5, 2.0))
        # single coordinate: c = A^T b = 1, threshold on the middle branch
        assert res.x_hat_normalized[0] == pytest.approx(2 * (1 - 0.5) / (2 - 1))
        one_row = normalize_columns([[1.0, -2.0, 0.5]], [4.0])
        res = solve(one_row, PenaltySpec("lasso", 0.1), SolverOptions(tol=1e-12))
        assert res.status is Status.CONVERGED
        assert res.stationarity_gap <= 1e-8

    def test_random_order(self, small_problem):
        prob, _ = small_problem
        spec = PenaltySpec("lasso", 0.2)
        a = solve(prob, spec, SolverOptions(random_order=True, seed=3, tol=1e-12))
        b = solve(prob, spec, SolverOptions(tol=1e-12))
        np.testing.assert_allclose(a.x_hat, b.x_hat, atol=1e-9)
        with pytest.raises(ValueError):
            SolverOptions(random_order=True, collect_certificates=True)

    def test_finite_length_tail(self, seeded_problem):
        prob, _ = seeded_problem
        res = solve(prob, PenaltySpec("scad", 0.2 * lambda_max(prob), 3.0), SolverOptions(tol=1e-10))
        fl = diagnostics.finite_length(res.trace.step_norms)
        assert np.isfinite(fl.total) and fl.window_ratio < 1

    def test_bounded_iterates(self, seeded_problem):
        prob, _ = seeded_problem
        spec = PenaltySpec("mcp", 0.05 * lambda_max(prob), 1.2)
        res = solve(prob, spec, SolverOptions(tol=1e-10))
        # F(x^k) <= F(x^0) and rho >= 0 bound the fit term, which caps each |x_i|
        assert np.all(np.isfinite(res.x_hat))
        assert res.trace.objectives.max() <= res.trace.objective_initial + 1e-10

    def test_options_validation(self):
        for kw in ({"tol": 0.0}, {"max_sweeps": 0}, {"residual_refresh_period": 0}, {"init": [np.nan]}):
            with pytest.raises(ValueError):
                SolverOptions(**kw)


class TestPath:
    def test_lambda_max(self):
        assert lambda_max(I2) == 3.0
        assert lambda_max(normalize_columns(np.eye(2), [0.0, 0.0])) == 0.0

    def test_lambda_max_loop(self, seeded_problem):
        prob, _ = seeded_problem
        loop = max(abs(float(prob.a[:, i] @ prob.b)) for i in range(prob.p))
        assert lambda_max(prob) == pytest.approx(loop, rel=1e-14)

    def test_above_lambda_max(self, seeded_problem):
        prob, _ = seeded_problem
        (res,) = regularization_path(prob, "mcp", 3.0, [1.01 * lambda_max(prob)])
        np.testing.assert_array_equal(res.x_hat, 0.0)
        assert res.stationarity_gap == 0.0

    def test_repeated_lambda(self, seeded_problem):
        prob, _ = seeded_problem
        lam = 0.3 * lambda_max(prob)
        r1, r2 = regularization_path(prob, "scad", 3.7, [lam, lam])
        # the warm start is a fixed point up to the stopping tolerance
        assert r2.sweeps == 1
        np.testing.assert_allclose(r1.x_hat_normalized, r2.x_hat_normalized, rtol=0, atol=r1.options.tol)
        assert r2.objective == pytest.approx(r1.objective, abs=1e-12)

    def test_grid(self, seeded_problem, caplog):
        prob, _ = seeded_problem
        lams = geometric_lambdas(prob, 20, 0.05)
        res = regularization_path(prob, "mcp", 3.0, lams)
        sizes = [r.support_size for r in res]
        assert sizes[0] == 0
        assert all(r.status is Status.CONVERGED for r in res)
        # warm-started path: support grows overall; dips are tolerated and logged
        assert sizes[-1] >= sizes[len(sizes) // 2] >= sizes[0]

    def test_rejects_bad_grid(self, small_problem):
        prob, _ = small_problem
        with pytest.raises(ValueError):
            regularization_path(prob, "lasso", 0.0, [0.1, 0.2])
        with pytest.raises(ValueError):
            regularization_path(prob, "lasso", 0.0, [0.1, -0.2])
