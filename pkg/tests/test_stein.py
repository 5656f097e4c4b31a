"""Bounded Stein-equation solver and the functional-equation step."""

import math

import numpy as np
import pytest
from scipy import integrate

from conftest import function_corpus
from wglab import (DomainError, GammaTarget, GridFunction, GridSpec,
                   TailMassError, ValidationError, apply_S, default_grid,
                   gamma_stein_classical, operator_matrix,
                   solve_functional_equation, solve_stein, target_expectation)
from wglab.chaos import centered_gamma_density

NUS = (0.5, 1.0, 2.0, 5.0)


def identity_fn(grid):
    return GridFunction.from_callable(grid, lambda x: np.asarray(x),
                                      lip_norm=1.0, curv_norm=0.0)


class TestExpectation:
    def test_constant_one(self):
        for nu in NUS:
            h = GridFunction.from_callable(default_grid(nu),
                                           lambda x: np.ones_like(x))
            assert target_expectation(h, GammaTarget(nu)) == pytest.approx(
                1.0, abs=1e-12)

    def test_identity_is_centered(self):
        for nu in NUS:
            h = identity_fn(default_grid(nu))
            assert abs(target_expectation(h, GammaTarget(nu))) <= 1e-10

    def test_square_gives_variance(self):
        grid = default_grid(2.0)
        h = GridFunction.from_callable(grid, lambda x: np.asarray(x) ** 2)
        got = target_expectation(h, GammaTarget(2.0))
        # piecewise-linear reading of x^2 adds spacing^2/6 per cell
        assert got == pytest.approx(4.0, abs=grid.spacing ** 2)

    def test_against_quadrature_oracle(self):
        nu = 1.0
        grid = default_grid(nu, n_points=4096)
        h = GridFunction.from_callable(
            grid, lambda x: np.exp(-0.5 * (np.asarray(x) - 1.0) ** 2))
        want, err = integrate.quad(
            lambda x: (math.exp(-0.5 * (x - 1.0) ** 2)
                       * float(centered_gamma_density(nu, np.array([x]))[0])),
            -nu, 80.0, limit=400)
        got = target_expectation(h, GammaTarget(nu))
        # exact quadrature of the interpolant: the gap is h's interpolation
        # error, at most curv * spacing^2 / 8 per cell
        assert got == pytest.approx(want, abs=grid.spacing ** 2 / 8 + 10 * err)

    def test_narrow_grid_raises(self):
        h = identity_fn(GridSpec(-1.0, 2.0, 64))
        with pytest.raises(TailMassError):
            target_expectation(h, GammaTarget(1.0))


class TestSolveStein:
    def test_identity_gives_minus_one(self):
        for nu in NUS:
            sol = solve_stein(identity_fn(default_grid(nu)), GammaTarget(nu))
            assert np.max(np.abs(sol.solution.values + 1.0)) <= 1e-6

    def test_constant_gives_zero(self):
        for nu in NUS:
            h = GridFunction.from_callable(default_grid(nu),
                                           lambda x: np.full_like(x, 0.7))
            sol = solve_stein(h, GammaTarget(nu))
            assert np.max(np.abs(sol.solution.values)) <= 1e-9

    def test_boundary_value_formula(self):
        for nu in NUS:
            grid = default_grid(nu)
            h = GridFunction.from_callable(grid, lambda x: np.sin(np.asarray(x)),
                                           lip_norm=1.0, curv_norm=1.0)
            sol = solve_stein(h, GammaTarget(nu))
            x = grid.nodes()
            i = int(np.argmin(np.abs(x + nu)))
            assert x[i] == pytest.approx(-nu, abs=1e-12)
            E = sol.solution.meta["expectation"]
            want = (h(-nu) - E) / nu
            assert sol.solution.values[i] == pytest.approx(want, rel=1e-15)

    def test_ode_residual(self):
        # 2(x+nu) f' - x f = h - E away from the degenerate node
        for nu in NUS:
            grid = default_grid(nu)
            h = GridFunction.from_callable(grid,
                                           lambda x: np.sin(np.asarray(x)),
                                           lip_norm=1.0, curv_norm=1.0)
            sol = solve_stein(h, GammaTarget(nu))
            x = grid.nodes()
            E = sol.solution.meta["expectation"]
            f = sol.solution.values
            fp = sol.derivative.values
            keep = np.abs(x + nu) > 1e-6
            resid = (2.0 * (x + nu) * fp - x * f - (h.values - E))[keep]
            assert np.max(np.abs(resid)) <= 1e-6

    def test_dobler_peccati_bounds_on_corpus(self):
        for nu in NUS:
            grid = default_grid(nu)
            c_nu = max(1.0, 2.0 / nu)
            for h in function_corpus(grid, count=12, seed=int(10 * nu)):
                sol = solve_stein(h, GammaTarget(nu))
                assert sol.solution.sup_norm <= h.lip_norm + 1e-6
                disc = float(np.max(np.abs(np.diff(sol.solution.values)))
                             / grid.spacing)
                assert disc <= c_nu * h.lip_norm + 1e-6

    def test_solution_metadata(self):
        sol = solve_stein(identity_fn(default_grid(1.0)), GammaTarget(1.0))
        assert abs(sol.solution.meta["expectation"]) <= 1e-10
        assert sol.quadrature_error_estimate <= 1e-6


class TestApplyS:
    def test_linearity(self):
        grid = default_grid(2.0)
        target = GammaTarget(2.0)
        h1 = GridFunction.from_callable(grid, lambda x: np.sin(np.asarray(x)),
                                        lip_norm=1.0)
        h2 = GridFunction.from_callable(grid,
                                        lambda x: np.cos(0.5 * np.asarray(x)),
                                        lip_norm=0.5)
        combo = GridFunction(grid, 2.0 * h1.values - 3.0 * h2.values)
        lhs = apply_S(combo, target).values
        rhs = (2.0 * apply_S(h1, target).values
               - 3.0 * apply_S(h2, target).values)
        assert np.max(np.abs(lhs - rhs)) <= 1e-8

    def test_iterated_apply_bounded(self):
        grid = default_grid(2.0)
        target = GammaTarget(2.0)
        h = GridFunction.from_callable(grid, lambda x: np.sin(np.asarray(x)),
                                       lip_norm=1.0, curv_norm=1.0)
        once = apply_S(h, target)
        twice = apply_S(once, target)
        c_nu = max(1.0, 2.0 / 2.0)
        assert twice.sup_norm <= c_nu * h.lip_norm + 1e-5


class TestFunctionalEquation:
    def test_tiny_lambda_returns_h(self):
        grid = default_grid(2.0)
        h = GridFunction.from_callable(grid, lambda x: np.sin(np.asarray(x)),
                                       lip_norm=1.0)
        g = solve_functional_equation(h, 1e-15, GammaTarget(2.0))
        assert np.max(np.abs(g.values - h.values)) <= 1e-12

    def test_identity_lambda_two(self):
        grid = default_grid(2.0)
        target = GammaTarget(2.0)
        h = identity_fn(grid)
        g = solve_functional_equation(h, 2.0, target)
        resid = g.values + 2.0 * apply_S(
            GridFunction(grid, g.values), target).values - h.values
        assert np.max(np.abs(resid)) <= 1e-6

    def test_residuals_on_corpus(self):
        grid = default_grid(2.0)
        target = GammaTarget(2.0)
        for h in function_corpus(grid, count=10, seed=99):
            g = solve_functional_equation(h, 2.0, target)
            assert g.meta["residual"] <= 1e-6

    def test_homogeneous_is_trivial(self):
        grid = default_grid(2.0)
        target = GammaTarget(2.0)
        zero = GridFunction(grid, np.zeros(grid.n_points))
        for lam in (-10.0, -2.0, -0.5, 0.5, 2.0, 10.0):
            g = solve_functional_equation(zero, lam, target)
            assert float(np.max(np.abs(g.values))) <= 1e-8

    def test_zero_lambda_rejected(self):
        h = identity_fn(default_grid(2.0))
        with pytest.raises(ValidationError):
            solve_functional_equation(h, 0.0, GammaTarget(2.0))

    def test_solution_norm_stays_bounded(self):
        grid = default_grid(2.0)
        target = GammaTarget(2.0)
        worst = 0.0
        for h in function_corpus(grid, count=10, seed=7):
            g = solve_functional_equation(h, 2.0, target)
            worst = max(worst, g.sup_norm + g.lip_norm)
        assert worst <= 25.0


class TestOperatorMatrix:
    def test_matches_direct_solve(self):
        grid = GridSpec(-8.0, 26.0, 128)
        target = GammaTarget(2.0)
        A = operator_matrix(grid, target)
        h = GridFunction.from_callable(grid, lambda x: np.sin(np.asarray(x)),
                                       lip_norm=1.0)
        direct = solve_stein(h, target).solution.values
        assert np.max(np.abs(A @ h.values - direct)) <= 1e-9

    def test_read_only_and_cached(self):
        grid = GridSpec(-8.0, 26.0, 128)
        A = operator_matrix(grid, GammaTarget(2.0))
        assert operator_matrix(grid, GammaTarget(2.0)) is A
        with pytest.raises(ValueError):
            A[0, 0] = 1.0


class TestClassicalGamma:
    def test_constant_gives_zero(self):
        grid = GridSpec(0.0, 40.0, 512)
        h = GridFunction.from_callable(grid, lambda x: np.full_like(x, 2.0))
        f = gamma_stein_classical(h, 1.0)
        assert np.max(np.abs(f.values)) <= 1e-9

    def test_boundary_value(self):
        grid = GridSpec(0.0, 40.0, 2048)
        h = GridFunction.from_callable(grid, lambda x: np.asarray(x),
                                       lip_norm=1.0)
        f = gamma_stein_classical(h, 1.0)
        # f(0) = (h(0) - E[X_1])/1 = -1
        assert f.values[0] == pytest.approx(-1.0, abs=1e-6)

    def test_consistency_with_centered_solver(self):
        # S(h)(x) = (1/2) f_h((x + nu)/2) for the matching shape r = nu/2
        nu = 3.0
        grid = default_grid(nu)
        h = identity_fn(grid)
        sol = solve_stein(h, GammaTarget(nu))
        y_lo = 0.0
        y_hi = (grid.hi + nu) / 2.0
        ygrid = GridSpec(y_lo, y_hi, 4096)
        hy = GridFunction.from_callable(
            ygrid, lambda y: 2.0 * np.asarray(y) - nu, lip_norm=2.0)
        f = gamma_stein_classical(hy, nu / 2.0)
        x = grid.nodes()
        keep = x > -nu + 0.05
        mapped = 0.5 * f((x[keep] + nu) / 2.0)
        assert np.max(np.abs(mapped - sol.solution.values[keep])) <= 1e-6

    def test_domain_guards(self):
        grid = GridSpec(0.0, 40.0, 512)
        h = GridFunction.from_callable(grid, lambda x: np.asarray(x),
                                       lip_norm=1.0)
        with pytest.raises(DomainError):
            gamma_stein_classical(h, 0.0)
        neg = GridFunction.from_callable(GridSpec(-1.0, 40.0, 512),
                                         lambda x: np.asarray(x), lip_norm=1.0)
        with pytest.raises(ValidationError):
            gamma_stein_classical(neg, 1.0)


class TestDefaultGrid:
    def test_straddles_and_hits_the_corner(self):
        for nu in NUS:
            grid = default_grid(nu)
            assert grid.lo < -nu < grid.hi
            x = grid.nodes()
            assert np.min(np.abs(x + nu)) <= 1e-9

    def test_bad_nu(self):
        with pytest.raises(DomainError):
            default_grid(0.0)
