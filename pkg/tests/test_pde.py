import numpy as np
import pytest

import quenchflow as qf
from quenchflow.pde import (
    CflError,
    GridFunction,
    MassMeasure,
    StepProfile,
    _RangeTable,
    _interface_flux,
    default_profile_step,
    project,
    solve_cauchy_series,
)


class TestRiemannValue:
    def test_singleton_interval(self, lwr_table):
        for r in (0.0, 0.3, 0.5, 1.0):
            for v in (-1.0, 0.0, 2.0):
                rv = qf.riemann_value(lwr_table, r, r, v)
                assert rv.value == pytest.approx(qf.interpolate_flux(lwr_table, r) - v * r)

    def test_increasing_data_minimum(self, lwr_table):
        rv = qf.riemann_value(lwr_table, 0.0, 1.0, 0.0)
        assert rv.value == 0.0
        assert set(rv.argopt) == {0.0, 1.0}
        assert rv.sense == "min"

    def test_decreasing_data_maximum(self, lwr_table):
        rv = qf.riemann_value(lwr_table, 1.0, 0.0, 0.0)
        assert rv.value == pytest.approx(0.25)
        assert rv.argopt == (0.5,)
        assert rv.sense == "max"

    def test_out_of_range_rejected(self, lwr_table):
        with pytest.raises(ValueError):
            qf.riemann_value(lwr_table, -0.2, 0.5, 0.0)

    def test_nonincreasing_in_velocity(self, lwr_table):
        rng = np.random.default_rng(0)
        for _ in range(50):
            lam, rho = sorted(rng.uniform(0, 1, 2))
            vs = np.sort(rng.uniform(-2, 2, 4))
            vals = [qf.riemann_value(lwr_table, lam, rho, v).value for v in vs]
            assert all(a >= b - 1e-12 for a, b in zip(vals[:-1], vals[1:]))

    def test_velocity_slope_bounded_by_interval(self, lwr_table):
        # d/dv of the value is minus the optimizing density, which lies in
        # [lam, rho]; check coarse secant bounds
        lam, rho = 0.2, 0.9
        v1, v2 = -0.7, 1.3
        g1 = qf.riemann_value(lwr_table, lam, rho, v1).value
        g2 = qf.riemann_value(lwr_table, lam, rho, v2).value
        slope = (g2 - g1) / (v2 - v1)
        assert -rho - 1e-12 <= slope <= -lam + 1e-12


class TestRiemannProfile:
    def test_constant_data(self, lwr_table):
        xs = np.linspace(-2, 2, 9)
        prof = qf.riemann_profile(lwr_table, 0.4, 0.4, 1.0, xs)
        np.testing.assert_allclose(prof, 0.4, atol=1e-9)

    def test_stationary_shock_mass_identity(self, lwr_table):
        # increasing 0|1 data: value function is 0 for v<0 and -v for v>0, so
        # the mass carried by [-a, a] equals a at every time
        t = 2.0
        for a in (0.5, 1.0, 1.5):
            gm = qf.riemann_value(lwr_table, 0.0, 1.0, -a / t).value
            gp = qf.riemann_value(lwr_table, 0.0, 1.0, a / t).value
            assert t * (gm - gp) == pytest.approx(a, abs=1e-12)

    def test_rarefaction_pointwise(self, lwr_table):
        xs = np.linspace(-0.9, 0.9, 13)
        prof = qf.riemann_profile(lwr_table, 1.0, 0.0, 1.0, xs)
        np.testing.assert_allclose(prof, (1 - xs) / 2, atol=5e-3)

    def test_time_rejected(self, lwr_table):
        with pytest.raises(ValueError):
            qf.riemann_profile(lwr_table, 0.0, 1.0, 0.0, [0.0])

    def test_integral_identity(self, lwr_table):
        # quadrature of the profile between rays matches the value difference
        lam, rho, t = 0.15, 0.85, 1.7
        h = default_profile_step(lwr_table, lam, rho)
        V = lwr_table.max_speed()
        for v, w in ((-1.2, 0.4), (-0.3, 0.9), (0.1, 1.1)):
            xs = np.linspace(v * t, w * t, 4001)
            prof = qf.riemann_profile(lwr_table, lam, rho, t, xs)
            quad = np.trapezoid(prof, xs)
            gv = qf.riemann_value(lwr_table, lam, rho, v).value
            gw = qf.riemann_value(lwr_table, lam, rho, w).value
            assert abs(quad - t * (gv - gw)) <= t * V * h + (w - v) * t * 2e-3


class TestGodunov:
    def test_constant_state_fixed(self, lwr_table):
        u = GridFunction(0.0, 0.1, np.full(30, 0.37))
        out = qf.godunov_step(lwr_table, u, 0.04)
        np.testing.assert_allclose(out.values, 0.37, atol=1e-15)

    def test_interface_flux_diagonal_is_flux(self, lwr_table):
        table = _RangeTable(lwr_table.values)
        a = np.linspace(0, 1, 11)
        F = _interface_flux(lwr_table, table, a, a.copy())
        np.testing.assert_allclose(F, a * (1 - a), atol=1e-12)

    def test_cfl_violation_raises(self, lwr_table):
        u = GridFunction(0.0, 0.01, np.linspace(0, 1, 50))
        with pytest.raises(CflError):
            qf.godunov_step(lwr_table, u, 0.5)

    def test_invariant_region(self, lwr_table):
        rng = np.random.default_rng(1)
        u = GridFunction(0.0, 0.02, rng.uniform(0, 1, 200))
        dt = 0.45 * 0.02 / lwr_table.max_speed()
        for _ in range(40):
            u = qf.godunov_step(lwr_table, u, dt)
            assert u.values.min() >= -1e-14 and u.values.max() <= 1 + 1e-14

    def test_mass_conservation(self, lwr_table):
        u0 = StepProfile.riemann(0.0, 1.0, 2.0)
        sol = qf.solve_cauchy(lwr_table, u0, 1.0, dx=0.02)
        mass0 = u0.as_mass_measure().total_mass()
        assert abs(sol.mass() - mass0) / mass0 < 1e-12

    def test_stationary_shock_resolved_exactly(self, lwr_table):
        u0 = StepProfile.riemann(0.0, 1.0, 3.0)
        sol = qf.solve_cauchy(lwr_table, u0, 1.0, dx=0.02)
        xs = sol.centers()
        sel = np.abs(xs) < 1.0
        ref = np.where(xs >= 0, 1.0, 0.0)
        assert np.abs(sol.values - ref)[sel].sum() * sol.dx < 1e-12

    @pytest.mark.parametrize("lam,rho", [(1.0, 0.0), (0.1, 0.6)])
    def test_first_order_convergence(self, lwr_table, lam, rho):
        errs = []
        for dx in (1 / 50, 1 / 100, 1 / 200):
            sol = qf.solve_cauchy(lwr_table, StepProfile.riemann(lam, rho, 3.0), 1.0, dx=dx)
            xs = sol.centers()
            ref = qf.riemann_profile(lwr_table, lam, rho, 1.0, xs)
            sel = np.abs(xs) <= 1.2
            errs.append(np.abs(sol.values - ref)[sel].sum() * dx)
        for e1, e2 in zip(errs[:-1], errs[1:]):
            assert 1.5 <= e1 / e2 <= 2.5

    def test_time_zero_is_projection(self, lwr_table):
        u0 = StepProfile([-0.5, 0.3, 1.0], [0.0, 0.8, 0.2, 0.0])
        sol = qf.solve_cauchy(lwr_table, u0, 0.0, dx=0.05)
        ref = project(u0, sol.x0, sol.dx, sol.n)
        np.testing.assert_allclose(sol.values, ref.values, atol=1e-15)

    def test_delta_contraction_between_solutions(self, lwr_table):
        u0 = StepProfile([-1.0, 0.0], [0.0, 1.0, 0.0])
        v0 = StepProfile([-0.8, 0.2], [0.0, 1.0, 0.0])
        dx = 0.01
        d0 = qf.delta_distance(u0.as_mass_measure(), v0.as_mass_measure())
        for t in (0.3, 0.7, 1.2):
            su = qf.solve_cauchy(lwr_table, u0, t, dx=dx)
            sv = qf.solve_cauchy(lwr_table, v0, t, dx=dx)
            dt_ = qf.delta_distance(su, sv)
            assert dt_ <= d0 + 10 * dx


class TestDeltaDistance:
    def test_identity(self):
        m = MassMeasure(pieces=[(0.0, 2.0, 0.7)], atoms=[(0.5, 0.3)])
        assert qf.delta_distance(m, m) == 0.0

    def test_unit_atoms_at_distance_one(self):
        a = MassMeasure.from_atoms([0.0], [1.0])
        b = MassMeasure.from_atoms([1.0], [1.0])
        assert qf.delta_distance(a, b) == 1.0

    def test_offset_uniform_blocks(self):
        a = MassMeasure(pieces=[(0.0, 1.0, 1.0)])
        b = MassMeasure(pieces=[(0.5, 1.5, 1.0)])
        assert qf.delta_distance(a, b) == pytest.approx(0.5)

    def test_metric_axioms_on_random_instances(self):
        rng = np.random.default_rng(2)

        def rand_measure():
            atoms = [(float(rng.uniform(-2, 2)), float(rng.uniform(0, 1)))
                     for _ in range(rng.integers(0, 4))]
            pieces = []
            for _ in range(rng.integers(0, 3)):
                lo = float(rng.uniform(-2, 1))
                pieces.append((lo, lo + float(rng.uniform(0.1, 1.5)), float(rng.uniform(0, 2))))
            return MassMeasure(atoms=atoms, pieces=pieces)

        for _ in range(60):
            a, b, c = rand_measure(), rand_measure(), rand_measure()
            dab = qf.delta_distance(a, b)
            assert dab == pytest.approx(qf.delta_distance(b, a))
            assert dab <= qf.delta_distance(a, c) + qf.delta_distance(c, b) + 1e-12
            assert dab >= 0

    def test_atom_against_density(self):
        # CDF gap between a point mass and its smeared version
        a = MassMeasure.from_atoms([0.0], [1.0])
        b = MassMeasure(pieces=[(-0.5, 0.5, 1.0)])
        assert qf.delta_distance(a, b) == pytest.approx(0.5)


class TestApproximateBySteps:
    def test_fixed_point_on_grid_profile(self):
        p = StepProfile([0.0, 0.35, 1.0], [0.0, 0.3, 0.7, 0.0])
        ap, d = qf.approximate_by_steps(p, 0.1, [i / 10 for i in range(11)])
        assert d <= 1e-12
        np.testing.assert_allclose(ap.breakpoints, p.breakpoints)
        np.testing.assert_allclose(ap.values, p.values)

    def test_linear_ramp_bound(self):
        ramp = GridFunction(0.0, 0.001, np.linspace(0.0005, 0.9995, 1000))
        ap, d = qf.approximate_by_steps(ramp, 0.1, np.linspace(0, 1, 101))
        assert d <= 0.05
        assert ap.values[0] == 0.0 and ap.values[-1] == 0.0
        assert np.all(np.diff(ap.breakpoints) >= 0.1 - 1e-9)

    def test_zero_profile(self):
        ap, d = qf.approximate_by_steps(StepProfile.zero(), 0.1, [0.0, 1.0])
        assert d == 0.0 and ap.breakpoints.size == 0

    def test_error_shrinks_with_mesh(self):
        ramp = GridFunction(0.0, 0.001, np.linspace(0.0005, 0.9995, 1000))
        grid = np.linspace(0, 1, 201)
        _, d1 = qf.approximate_by_steps(ramp, 0.2, grid)
        _, d2 = qf.approximate_by_steps(ramp, 0.05, grid)
        assert d2 < d1


class TestSolveCauchySeries:
    def test_monotone_times_required(self, lwr_table):
        with pytest.raises(ValueError):
            solve_cauchy_series(lwr_table, StepProfile.riemann(0, 1, 1.0), [0.5, 0.2], 0.05)

    def test_single_time_series_matches_solve(self, lwr_table):
        u0 = StepProfile.riemann(0.7, 0.2, 2.0)
        series = solve_cauchy_series(lwr_table, u0, [0.5], 0.02)
        single = qf.solve_cauchy(lwr_table, u0, 0.5, dx=0.02)
        assert series[0].x0 == single.x0 and series[0].n == single.n
        np.testing.assert_array_equal(series[0].values, single.values)

    def test_series_snapshots_stay_close_to_direct(self, lwr_table):
        # restarting the march at a snapshot only reshuffles the dt subdivision
        u0 = StepProfile.riemann(0.7, 0.2, 2.0)
        series = solve_cauchy_series(lwr_table, u0, [0.25, 0.5], 0.02)
        single = qf.solve_cauchy(lwr_table, u0, 0.5, dx=0.02, pad=None)
        a, b = series[1], single
        lo = max(a.x0, b.x0)
        ia = int(round((lo - a.x0) / a.dx))
        ib = int(round((lo - b.x0) / b.dx))
        n = min(a.n - ia, b.n - ib)
        assert np.abs(a.values[ia:ia + n] - b.values[ib:ib + n]).sum() * 0.02 < 0.02


class TestCsvRoundTrips:
    def test_grid_function_round_trip(self, tmp_path, lwr_table):
        sol = qf.solve_cauchy(lwr_table, StepProfile.riemann(0.6, 0.2, 1.0), 0.4, dx=0.05)
        p = tmp_path / "grid.csv"
        sol.to_csv(p)
        back = GridFunction.from_csv(p)
        assert back.dx == pytest.approx(sol.dx)
        np.testing.assert_allclose(back.values, sol.values)

    def test_step_profile_round_trip(self, tmp_path):
        prof = StepProfile([-1.0, 0.25, 2.0], [0.0, 0.4, 0.9, 0.0])
        p = tmp_path / "prof.csv"
        prof.to_csv(p)
        back = StepProfile.from_csv(p)
        np.testing.assert_allclose(back.breakpoints, prof.breakpoints)
        np.testing.assert_allclose(back.values, prof.values)
