import math

import numpy as np
import pytest
from scipy.integrate import quad

from app.core.errors import ConfigError, FrontReachesBoundaryError, InstabilityError, ParameterDomainError
from app.models.fields import FieldState
from app.models.schemas import InitSpec, ModelParams, RadialGrid, SimConfig
from app.services.model_service import coexistence_state
from app.services.solver_service import (
    farmer_mass, init_state, lower_barrier, max_stable_dt, radial_laplacian, rhs, simulate, snapshot_times, step,
)
from app.services.verify_service import laplacian_order


def bump(x):
    return math.exp(1.0 - 1.0 / (1.0 - x * x)) if abs(x) < 1.0 else 0.0


def test_init_state_bump():
    grid = RadialGrid.covering(0.1, 100.0)
    state = init_state(grid, InitSpec(amplitude=1.0, support_radius=5.0))
    assert state.F[0] == pytest.approx(1.0)
    assert np.all(state.F[state.r >= 5.0] == 0.0)
    assert np.all(state.H == 1.0)
    assert np.all(state.C == 0.0)


def test_init_state_is_smooth():
    grid = RadialGrid.covering(0.1, 100.0)
    state = init_state(grid, InitSpec(amplitude=1.0, support_radius=5.0))
    x = np.linspace(0.0, 0.999, 20001)
    slope = np.max(np.abs(np.gradient([bump(v) for v in x], x)))
    assert np.max(np.abs(np.diff(state.F))) < grid.dr * slope / 5.0


@pytest.mark.parametrize('dim_N', [1, 2, 3])
def test_init_mass_matches_quadrature(dim_N):
    grid = RadialGrid.covering(0.01, 40.0, dim_N)
    state = init_state(grid, InitSpec(amplitude=1.0, support_radius=5.0))
    exact, _ = quad(lambda r: bump(r / 5.0) * r ** (dim_N - 1), 0.0, 5.0, epsabs=1e-13, epsrel=1e-12)
    assert farmer_mass(state) == pytest.approx(exact, rel=1e-6)


def test_init_flat_top_profile():
    grid = RadialGrid.covering(0.1, 100.0)
    state = init_state(grid, InitSpec(support_radius=5.0, profile='flat-top'))
    assert np.all(state.F[state.r <= 2.5] == pytest.approx(1.0))
    assert np.all(state.F[state.r >= 5.0] == 0.0)


def test_init_rejects_wide_support():
    with pytest.raises(ConfigError):
        init_state(RadialGrid.covering(0.1, 30.0), InitSpec(support_radius=10.0))


def test_rhs_vanishes_at_hunter_state(kpp_params):
    grid = RadialGrid.covering(0.1, 50.0)
    n = grid.n_points
    state = FieldState.from_components(0.0, grid, np.zeros(n), np.zeros(n), np.ones(n))
    assert np.all(rhs(state, kpp_params) == 0.0)


def test_rhs_vanishes_at_coexistence(coexistence_params):
    grid = RadialGrid.covering(0.1, 50.0, 2)
    m = coexistence_params.with_updates(dim_N=2)
    point = coexistence_state(m)
    n = grid.n_points
    state = FieldState.from_components(0.0, grid, np.zeros(n), np.full(n, point.C_star), np.full(n, point.H_star))
    assert np.max(np.abs(rhs(state, m))) < 1e-14


@pytest.mark.parametrize('dim_N', [1, 2, 3])
def test_laplacian_second_order(dim_N):
    orders = laplacian_order(dim_N)
    assert min(orders) >= 1.9


def test_laplacian_origin_uses_symmetric_limit():
    dr = 0.1
    r = dr * np.arange(50)
    lap = radial_laplacian(r ** 2, dr, 3)
    # Δ(r²) = 2N
    assert lap[0] == pytest.approx(6.0)
    assert lap[10] == pytest.approx(6.0)
    assert lap[-1] == 0.0


def test_max_stable_dt(kpp_params):
    grid = RadialGrid(dr=0.1, n_points=100)
    assert max_stable_dt(grid, kpp_params, 0.8) == pytest.approx(0.004)
    slow = max_stable_dt(grid, kpp_params.with_updates(d=4.0), 0.8)
    assert slow == pytest.approx(0.001)


def test_max_stable_dt_reaction_cap():
    m = ModelParams(a=1.0, b=1.0, s=1.0, g=2.0)
    grid = RadialGrid(dr=2.0, n_points=100)
    # 反应速率 max{a,1+s,b}(1+M) = 2·3 = 6
    assert max_stable_dt(grid, m, 0.8) == pytest.approx(0.1 / 6.0)


def test_step_preserves_equilibria(kpp_params, coexistence_params):
    grid = RadialGrid.covering(0.1, 50.0)
    n = grid.n_points
    hunters = FieldState.from_components(0.0, grid, np.zeros(n), np.zeros(n), np.ones(n))
    assert np.array_equal(step(hunters, kpp_params, 0.004).u, hunters.u)

    point = coexistence_state(coexistence_params)
    mixed = FieldState.from_components(0.0, grid, np.zeros(n), np.full(n, point.C_star), np.full(n, point.H_star))
    moved = step(mixed, coexistence_params, 0.004)
    assert np.max(np.abs(moved.u[:, :-1] - mixed.u[:, :-1])) < 1e-14


def test_step_local_error_is_third_order(kpp_params):
    grid = RadialGrid.covering(0.1, 40.0)
    profile = np.exp(-grid.nodes() ** 2 / 25.0)
    state = FieldState.from_components(0.0, grid, 0.5 * profile, 0.2 * profile, 1.0 - 0.3 * profile)

    def defect(dt):
        full = step(state, kpp_params, dt)
        half = step(step(state, kpp_params, dt / 2.0), kpp_params, dt / 2.0)
        return np.max(np.abs(full.u - half.u))

    ratio = defect(0.002) / defect(0.001)
    assert 6.0 < ratio < 10.0


def test_lower_barrier_closed_form():
    m = ModelParams(a=1.0, b=1.0, s=1.0, g=2.0)
    assert lower_barrier(0.0, m, 0.8) == pytest.approx(0.8)
    # ε₂=1, ε₃=2：趋于 ε₂/ε₃
    assert lower_barrier(50.0, m, 0.8) == pytest.approx(0.5, rel=1e-9)


def test_snapshot_times():
    assert snapshot_times(0.0, 5.0) == [0.0]
    assert snapshot_times(10.0, 5.0) == [0.0, 5.0, 10.0]
    assert snapshot_times(12.0, 5.0) == [0.0, 5.0, 10.0, 12.0]


def test_zero_time_run_returns_initial_state(short_sim):
    config = short_sim.model_copy(update={'t_end': 0.0})
    result = simulate(config)
    assert len(result.snapshots) == 1
    assert np.array_equal(result.final.u, init_state(config.grid, config.init).u)


def test_simulate_rejects_small_domain(kpp_params):
    config = SimConfig(params=kpp_params, grid=RadialGrid.covering(0.2, 40.0), t_end=10.0, snapshot_dt=1.0)
    with pytest.raises(ConfigError):
        simulate(config)


def test_short_run_passes_invariants(short_sim):
    result = simulate(short_sim)
    assert result.audit_ok
    assert [s.t for s in result.snapshots] == pytest.approx([float(k) for k in range(11)])
    assert result.dt <= max_stable_dt(short_sim.grid, short_sim.params, short_sim.cfl_factor)
    ids = {record.invariant_id for record in result.audits}
    assert {'nonnegativity', 'h_upper', 'fc_bound', 'lower_barrier'} <= ids


def test_domain_extension_leaves_interior_unchanged(short_sim):
    wide = short_sim.model_copy(update={'grid': RadialGrid(dr=0.2, n_points=2 * short_sim.grid.n_points)})
    narrow = simulate(short_sim).final
    extended = simulate(wide).final
    n = short_sim.grid.n_points // 2
    assert np.max(np.abs(narrow.u[:, :n] - extended.u[:, :n])) < 1e-12


@pytest.mark.slow
def test_c_front_advances_monotonically(kpp_params):
    config = SimConfig(params=kpp_params, grid=RadialGrid.covering(0.1, 600.0), t_end=150.0, snapshot_dt=5.0)
    result = simulate(config)
    t, x = result.fronts.samples('C', 0.5, (20.0, 150.0))
    assert t.size == 27
    assert np.all(np.diff(x) > 0)
    assert result.audit_ok


def test_step_rejects_unstable_dt(kpp_params):
    grid = RadialGrid.covering(0.1, 50.0)
    n = grid.n_points
    state = FieldState.from_components(0.0, grid, np.zeros(n), np.zeros(n), np.ones(n))
    limit = max_stable_dt(grid, kpp_params, 0.8, 0.0)
    step(state, kpp_params, limit)
    with pytest.raises(ParameterDomainError):
        step(state, kpp_params, 2.0 * limit)


def test_instability_reports_failing_substep(short_sim, monkeypatch):
    from app.services import solver_service
    calls = []
    heun = solver_service._heun

    def fragile(u, params, dr, dt):
        calls.append(dt)
        new = heun(u, params, dr, dt)
        if len(calls) == 3:
            new[0, 5] = np.nan
        return new

    monkeypatch.setattr(solver_service, '_heun', fragile)
    with pytest.raises(InstabilityError) as info:
        simulate(short_sim)
    assert info.value.t == pytest.approx(3 * calls[0])
    assert info.value.t < short_sim.snapshot_dt
    assert info.value.node == 5


def test_front_at_boundary_stops_run(short_sim, monkeypatch):
    from app.services import solver_service
    monkeypatch.setattr(solver_service, 'level_set_position', lambda profile, m, dr: dr * (len(profile) - 1))
    with pytest.raises(FrontReachesBoundaryError):
        simulate(short_sim)
