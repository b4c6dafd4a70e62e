from __future__ import annotations

import numpy as np
import pytest
import scipy.optimize

from sfsm.errors import NumericalFailure
from sfsm.geometry import exact_rotation, rotation_log, skew
from sfsm.optimizer import (
    EvaluationRejected,
    LmConfig,
    Problem,
    SolveReport,
    check_jacobians,
    huber_cost,
    huber_weight,
    solve,
)


def test_huber_cost_piecewise():
    k = 1.345
    assert huber_cost(1.0, k) == 1.0  # e = 1 <= k
    assert huber_cost(k * k, k) == pytest.approx(k * k)
    s = 9.0  # e = 3 > k
    assert huber_cost(s, k) == pytest.approx(2 * k * 3.0 - k * k)
    # continuous and monotone across the knee
    ss = np.linspace(0.0, 8.0, 200)
    vals = huber_cost(ss, k)
    assert np.all(np.diff(vals) >= 0)
    assert np.all(vals[ss > 0] > 0)


def test_huber_weight_matches_derivative():
    k = 1.345
    for s in [0.3, 1.0, 2.5, 9.0, 100.0]:
        h = 1e-7
        fd = (huber_cost(s + h, k) - huber_cost(s - h, k)) / (2 * h)
        assert huber_weight(s, k) == pytest.approx(fd, rel=1e-6)


def _linear_problem(x0):
    # r(x) = x - 3, scalar
    prob = Problem()
    b = prob.add_parameter(np.array([x0]))

    def fn(x):
        return np.array([x[0] - 3.0]), [np.array([[1.0]])]

    prob.add_residual([b], fn, dim=1)
    return prob, b


def test_linear_scalar_converges_within_three_iterations():
    prob, b = _linear_problem(0.0)
    report = solve(prob, LmConfig())
    assert abs(prob.block_value(b)[0] - 3.0) < 1e-10
    assert report.iterations <= 3
    assert report.converged


def test_linear_one_accepted_step_with_tiny_damping():
    # in the Gauss-Newton limit a linear problem lands on the
    # normal-equations solution in a single accepted step
    rng = np.random.default_rng(0)
    A = rng.normal(size=(8, 3))
    y = rng.normal(size=8)
    x_star = np.linalg.solve(A.T @ A, A.T @ y)

    prob = Problem()
    b = prob.add_parameter(np.zeros(3))

    def fn(values, want_jac):
        x = values[0][0]
        res = (A @ x - y)[None, :]
        if not want_jac:
            return res, None
        return res, [A[None, :, :]]

    prob.add_residual_family([[b]], [np.zeros(1, int)], fn, dim=8)
    report = solve(prob, LmConfig(initial_lambda=1e-12))
    assert np.abs(prob.block_value(b) - x_star).max() < 1e-10
    assert len(report.cost_trace) >= 2
    first_step = report.cost_trace[1]
    # cost after the first accepted step is already the optimum
    assert first_step == pytest.approx(report.final_cost, rel=1e-12, abs=1e-15)


def test_rosenbrock_from_standard_start():
    prob = Problem()
    b = prob.add_parameter(np.array([-1.2, 1.0]))

    def fn(v):
        x, y = v
        res = np.array([10.0 * (y - x * x), 1.0 - x])
        jac = np.array([[-20.0 * x, 10.0], [-1.0, 0.0]])
        return res, [jac]

    prob.add_residual([b], fn, dim=2)
    report = solve(prob, LmConfig(max_iterations=200))
    sol = prob.block_value(b)
    assert np.abs(sol - 1.0).max() < 1e-6
    assert report.final_cost < 1e-12

    ref = scipy.optimize.least_squares(
        lambda v: np.array([10.0 * (v[1] - v[0] ** 2), 1.0 - v[0]]), np.array([-1.2, 1.0])
    )
    assert np.abs(sol - ref.x).max() < 1e-6


def test_trace_strictly_decreasing():
    prob = Problem()
    b = prob.add_parameter(np.array([-1.2, 1.0]))

    def fn(v):
        x, y = v
        return np.array([10.0 * (y - x * x), 1.0 - x]), [
            np.array([[-20.0 * x, 10.0], [-1.0, 0.0]])
        ]

    prob.add_residual([b], fn, dim=2)
    report = solve(prob, LmConfig(max_iterations=200))
    trace = np.array(report.cost_trace)
    assert np.all(np.diff(trace) < 0)


def test_so3_block_alignment():
    # find R aligning body vectors to world observations
    rng = np.random.default_rng(5)
    R_true = exact_rotation(np.array([0.4, -0.2, 0.7]))
    vs = rng.normal(size=(12, 3))
    ws = vs @ R_true.T

    prob = Problem()
    b = prob.add_parameter(np.eye(3), so3=True)

    def fn(values, want_jac):
        R = values[0][0]
        res = vs @ R.T - ws
        if not want_jac:
            return res, None
        # d(R exp([d]) v)/dd at d=0 = -R [v]x
        jac = -np.einsum("ab,kbc->kac", R, skew(vs))
        return res, [jac]

    prob.add_residual_family([[b]], [np.zeros(12, int)], fn, dim=3)
    report = solve(prob, LmConfig())
    R_est = prob.block_value(b)
    assert np.abs(rotation_log(R_est @ R_true.T)).max() < 1e-8
    assert report.converged


def test_check_jacobians_flags_wrong_jacobian():
    prob = Problem()
    b = prob.add_parameter(np.array([0.7, -0.3]))

    def good(v):
        x, y = v
        return np.array([x * y, x + y * y]), [np.array([[y, x], [1.0, 2.0 * y]])]

    def bad(v):
        x, y = v
        return np.array([x * y, x + y * y]), [np.array([[y, x], [1.0, 2.0 * y + 0.05]])]

    prob.add_residual([b], good, dim=2)
    errs = check_jacobians(prob)
    assert errs[b] < 1e-8

    prob2 = Problem()
    b2 = prob2.add_parameter(np.array([0.7, -0.3]))
    prob2.add_residual([b2], bad, dim=2)
    errs2 = check_jacobians(prob2)
    assert errs2[b2] > 1e-3


def test_check_jacobians_so3_on_manifold():
    rng = np.random.default_rng(2)
    R0 = exact_rotation(rng.normal(scale=0.3, size=3))
    v = rng.normal(size=3)

    prob = Problem()
    b = prob.add_parameter(R0, so3=True)

    def fn(values, want_jac):
        R = values[0]
        res = np.einsum("kab,b->ka", R, v)
        if not want_jac:
            return res, None
        return res, [-np.einsum("kab,bc->kac", R, skew(v))]

    prob.add_residual_family([[b]], [np.zeros(1, int)], fn, dim=3)
    errs = check_jacobians(prob)
    assert errs[b] < 1e-9


def test_constant_blocks_never_move():
    prob = Problem()
    fixed = prob.add_parameter(np.array([2.0, -1.0]), constant=True)
    free = prob.add_parameter(np.array([0.0]))
    fixed_before = prob.block_value(fixed)

    def fn(c, x):
        return np.array([x[0] - c[0] * 3.0]), [None, np.array([[1.0]])]

    prob.add_residual([fixed, free], fn, dim=1)
    solve(prob, LmConfig())
    assert np.all(prob.block_value(fixed) == fixed_before)
    assert abs(prob.block_value(free)[0] - 6.0) < 1e-9


def test_robust_loss_downweights_outlier():
    # location estimation with one gross outlier
    data = np.array([1.0, 1.1, 0.9, 1.05, 0.95, 30.0])

    def run(robust):
        prob = Problem()
        b = prob.add_parameter(np.array([5.0]))

        def fn(values, want_jac):
            x = values[0][:, 0]
            res = (x[:, None] * np.ones((1, 1))) - data[:, None]
            res = np.broadcast_to(x.reshape(-1, 1), (6, 1)) - data[:, None]
            if not want_jac:
                return res, None
            return res, [np.ones((6, 1, 1))]

        prob.add_residual_family(
            [[b]], [np.zeros(6, int)], fn, dim=1, robust=robust
        )
        solve(prob, LmConfig(huber_kappa=1.0, max_iterations=200))
        return prob.block_value(b)[0]

    x_robust = run(True)
    x_plain = run(False)
    assert abs(x_plain - np.mean(data)) < 1e-6
    # analytic Huber optimum: inlier mean + kappa / n_inliers
    assert abs(x_robust - 1.2) < 1e-4
    assert abs(x_robust - 1.0) < abs(x_plain - 1.0)


def test_sigma_whitening_scales_cost():
    # sigma = 4 I whitens residuals by 1/2, so the quadratic cost drops 4x
    def build(sigma):
        prob = Problem()
        free = prob.add_parameter(np.array([0.0, 0.0]))

        def fn(v):
            return np.array([1.0, 2.0]) - v, [(-np.eye(2))]

        prob.add_residual([free], fn, dim=2, sigma=sigma)
        return prob

    r1 = solve(build(None), LmConfig(max_iterations=1))
    r2 = solve(build(4.0 * np.eye(2)), LmConfig(max_iterations=1))
    assert r2.initial_cost == pytest.approx(r1.initial_cost / 4.0)


def test_evaluation_rejection_blocks_step():
    # the callback vetoes any x > 0.5; optimum is at x = 3
    prob = Problem()
    b = prob.add_parameter(np.array([0.0]))

    def fn(values, want_jac):
        x = values[0][0, 0]
        if x > 0.5:
            raise EvaluationRejected("region fence")
        res = np.array([[x - 3.0]])
        if not want_jac:
            return res, None
        return res, [np.ones((1, 1, 1))]

    prob.add_residual_family([[b]], [np.zeros(1, int)], fn, dim=1)
    report = solve(prob, LmConfig(max_iterations=30))
    # never crossed the fence, and the run ended without error
    assert prob.block_value(b)[0] <= 0.5
    assert report.termination_reason in ("diverged", "max-iterations", "converged-cost")


def test_numerical_failure_on_bad_initial_state():
    prob = Problem()
    b = prob.add_parameter(np.array([np.nan]))

    def fn(v):
        return np.array([v[0] - 1.0]), [np.ones((1, 1))]

    prob.add_residual([b], fn, dim=1)
    with pytest.raises(NumericalFailure):
        solve(prob, LmConfig())


def test_report_fields():
    prob, b = _linear_problem(0.0)
    report = solve(prob, LmConfig())
    assert isinstance(report, SolveReport)
    assert report.initial_cost == pytest.approx(9.0)
    assert report.final_cost <= report.initial_cost
    assert report.cost_trace[0] == report.initial_cost
    assert report.n_free_parameters == 1
    assert report.n_residuals == 1
