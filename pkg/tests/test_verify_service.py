import math

import numpy as np
import pytest

from app.core.config import auto_r_max
from app.models.fields import FieldState, FrontSeries, SimulationResult
from app.models.schemas import AuditRecord, ModelParams, OdeSettings, RadialGrid, SimConfig, VerifySettings
from app.services import verify_service
from app.services.front_service import front_positions
from app.services.model_service import classify_regime, coexistence_state, front_order, spreading_speeds
from app.services.verify_service import (
    ACCEPTANCE_RUNS, ALL_CRITERIA, CRITERIA_RUNS, acceptance_config, asymptotic_errors, check_asymptotics,
    check_coexistence, check_envelopes, check_high_conversion, check_invariants, check_leading_edge,
    check_log_drift, check_orders, check_small_peak, check_speed, run_verification,
)

GRID = RadialGrid(dr=1.0, n_points=1200)
LEVELS = (0.05, 0.5)


def invaded_state(t, params, speed_factor=0.99, tail=0.0):
    """FC 在 speed_factor·c*·t 之后阶跃到 tail；F 较慢时中间是 C 平台"""
    speeds = spreading_speeds(params)
    r = GRID.nodes()
    behind = r < speed_factor * speeds.c_star * t
    if front_order(params) == 'F_fast':
        F = behind.astype(float)
    else:
        F = (behind & (r < speeds.c_star_star * t)).astype(float)
    C = behind.astype(float) - F
    C = np.where(behind, C, tail)
    H = np.where(behind, 0.0, 1.0)
    return FieldState.from_components(t, GRID, F, C, H)


def make_result(params, snapshots, fronts=None, audits=None, t_end=None):
    if fronts is None:
        fronts = FrontSeries(levels=LEVELS)
        for state in snapshots:
            fronts.append(state.t, front_positions(state, LEVELS))
    t_end = t_end or max(state.t for state in snapshots) or 1.0
    config = SimConfig(params=params, grid=GRID, t_end=t_end, snapshot_dt=min(5.0, t_end), levels=LEVELS)
    return SimulationResult(config=config, snapshots=snapshots, fronts=fronts, audits=audits or [],
                            steps=0, dt=0.01)


def invaded_runs(names=('kpp', 'fig1'), **kwargs):
    runs = {}
    for name in names:
        params = ACCEPTANCE_RUNS[name][0]
        runs[name] = make_result(params, [invaded_state(t, params, **kwargs) for t in np.arange(0.0, 205.0, 5.0)])
    return runs


def plateau_state(t=0.0, radius=5.0):
    r = GRID.nodes()
    n = GRID.n_points
    return FieldState.from_components(t, GRID, np.where(r < radius, 1.0, 0.0), np.zeros(n), np.ones(n))


def test_acceptance_runs_cover_all_regimes():
    figures = set()
    for params, _ in ACCEPTANCE_RUNS.values():
        figures.add(classify_regime(params).waveform_figure)
    assert figures == {1, 2, 3, 4}


def test_acceptance_config_sizes_domain():
    params, t_end = ACCEPTANCE_RUNS['kpp']
    config = acceptance_config(params, t_end)
    assert config.grid.dr == 0.1
    assert config.grid.r_max >= auto_r_max(params, t_end) - 1e-9
    assert config.snapshot_dt == 5.0
    assert config.levels == (0.05, 0.5)


def test_simulated_criteria_reference_known_runs():
    for number, names in CRITERIA_RUNS.items():
        assert number in ALL_CRITERIA
        assert set(names) <= set(ACCEPTANCE_RUNS)


def test_speed_criterion():
    outcome = check_speed(invaded_runs())
    assert outcome['id'] == 1
    assert outcome['passed']
    assert outcome['metrics']['kpp']['relative_error'] < 0.03

    slow = check_speed(invaded_runs(speed_factor=0.9))
    assert not slow['passed']
    assert slow['metrics']['fig1']['relative_error'] > 0.05


def test_leading_edge_criterion():
    outcome = check_leading_edge(invaded_runs())
    assert outcome['passed']
    assert outcome['metrics']['kpp']['sup_FC'] == 0.0
    assert outcome['metrics']['kpp']['inf_H'] == 1.0

    leaky = check_leading_edge(invaded_runs(tail=1e-2))
    assert not leaky['passed']
    assert leaky['metrics']['fig1']['sup_FC'] == pytest.approx(1e-2)


def test_high_conversion_criterion():
    runs = invaded_runs()
    outcome = check_high_conversion(runs)
    assert outcome['passed']
    assert outcome['metrics']['kpp']['targets'] == {'FC': 1.0, 'H': 0.0}
    # F 较慢的运行额外检查 C 平台所在的环
    assert 'annulus_sup_F' in outcome['metrics']['kpp']
    assert 'annulus_sup_F' not in outcome['metrics']['fig1']

    state = runs['kpp'].snapshot_at(200.0)
    hunters_left = FieldState(t=state.t, grid=GRID, u=state.u.copy())
    hunters_left.u[2, :50] = 0.05
    runs['kpp'].snapshots[-1] = hunters_left
    failed = check_high_conversion(runs)
    assert not failed['passed']
    assert failed['metrics']['kpp']['sup_H'] == pytest.approx(0.05)


def test_high_conversion_fails_when_farmers_fill_the_annulus():
    runs = invaded_runs(names=('kpp',))
    state = runs['kpp'].snapshot_at(200.0)
    u = state.u.copy()
    u[0] = u[0] + u[1]
    u[1] = 0.0
    runs['kpp'].snapshots[-1] = FieldState(t=state.t, grid=GRID, u=u)
    runs['fig1'] = invaded_runs(names=('fig1',))['fig1']
    outcome = check_high_conversion(runs)
    assert not outcome['passed']
    assert outcome['metrics']['kpp']['annulus_sup_F'] == pytest.approx(1.0)


def coexistence_run(C_shift=0.0):
    params = ACCEPTANCE_RUNS['coexistence'][0]
    point = coexistence_state(params)
    n = GRID.n_points
    state = FieldState.from_components(200.0, GRID, np.zeros(n), np.full(n, point.C_star + C_shift),
                                       np.full(n, point.H_star))
    return {'coexistence': make_result(params, [state])}


def test_coexistence_criterion():
    outcome = check_coexistence(coexistence_run())
    assert outcome['passed']
    assert outcome['metrics']['branch'] == 'conversion'
    assert outcome['metrics']['targets']['C'] == pytest.approx(1.25)
    assert outcome['metrics']['targets']['H'] == pytest.approx(0.5)

    shifted = check_coexistence(coexistence_run(C_shift=0.05))
    assert not shifted['passed']
    assert shifted['metrics']['max_abs_C_minus_Cstar'] == pytest.approx(0.05)


def small_peak_run(height):
    params = ACCEPTANCE_RUNS['small_peak'][0]
    c_star = spreading_speeds(params).c_star
    r = GRID.nodes()
    snapshots = []
    for t in np.arange(100.0, 205.0, 10.0):
        behind = r < 0.99 * c_star * t
        band = behind & (r >= 0.9 * c_star * t)
        F = np.where(band, height, 0.0)
        C = np.where(behind, 1.0, 0.0) - F
        snapshots.append(FieldState.from_components(t, GRID, F, C, np.where(behind, 0.0, 1.0)))
    return {'small_peak': make_result(params, snapshots)}


def test_small_peak_criterion():
    outcome = check_small_peak(small_peak_run(0.2))
    assert outcome['passed']
    assert outcome['metrics']['min_peak'] == pytest.approx(0.2)
    assert outcome['metrics']['max_F_at_half_speed'] == 0.0

    flat = check_small_peak(small_peak_run(0.01))
    assert not flat['passed']
    assert flat['metrics']['min_peak'] == pytest.approx(0.01)


def drift_run(k):
    params = ACCEPTANCE_RUNS['kpp'][0]
    c_star = spreading_speeds(params).c_star
    fronts = FrontSeries(levels=LEVELS)
    for t in np.arange(50.0, 305.0, 5.0):
        fronts.append(t, {('FC', 0.5): c_star * t - k * math.log(t) + 2.0})
    return {'kpp': make_result(params, [invaded_state(0.0, params)], fronts=fronts, t_end=300.0)}


def test_log_drift_criterion():
    reference = 3.0 / spreading_speeds(ACCEPTANCE_RUNS['kpp'][0]).c_star
    outcome = check_log_drift(drift_run(reference))
    assert outcome['passed']
    assert outcome['metrics']['k_hat'] == pytest.approx(reference)
    assert outcome['metrics']['b_hat'] == pytest.approx(-2.0)

    outcome = check_log_drift(drift_run(5.0 * reference))
    assert not outcome['passed']


def envelope_runs():
    return {name: make_result(params, [plateau_state()]) for name, (params, _) in ACCEPTANCE_RUNS.items()}


def test_envelope_criterion():
    outcome = check_envelopes(envelope_runs())
    assert outcome['id'] == 7
    assert outcome['passed']
    assert outcome['metrics']['kpp']['violations'] == 0
    assert outcome['metrics']['negative_control_violations'] >= 1

    runs = envelope_runs()
    runs['fig1'].snapshots.append(plateau_state(t=1.0, radius=200.0))
    outcome = check_envelopes(runs, workers=2)
    assert not outcome['passed']
    assert outcome['metrics']['fig1']['violations'] > 0


def test_invariant_criterion():
    def audited(extra):
        records = [AuditRecord(t=0.0, invariant_id='nonnegativity', margin=1e-3),
                   AuditRecord(t=20.0, invariant_id='leading_edge_fc', margin=-1e-4, passed=False)]
        return {name: make_result(params, [plateau_state()], audits=records + extra)
                for name, (params, _) in ACCEPTANCE_RUNS.items()}

    # 前沿前方的记录只作参考，不计入失败
    outcome = check_invariants(audited([]))
    assert outcome['passed']
    assert outcome['metrics']['kpp']['min_margin']['nonnegativity'] == pytest.approx(1e-3)

    runs = audited([])
    runs['coexistence'].audits.append(AuditRecord(t=5.0, invariant_id='h_upper', margin=-1e-3, passed=False))
    outcome = check_invariants(runs)
    assert not outcome['passed']
    assert outcome['metrics']['coexistence']['failed'] == 1


def test_asymptotic_criterion_checks_both_taus(monkeypatch):
    def fake(errors):
        return lambda m, taus, ladder, dxi=0.5: {tau: errors[tau] for tau in taus}

    monkeypatch.setattr(verify_service, 'asymptotic_errors', fake({1.0: [0.6, 0.4, 0.3], 3.0: [0.3, 0.2, 0.1]}))
    outcome = check_asymptotics(ACCEPTANCE_RUNS['kpp'][0])
    assert outcome['passed']
    assert outcome['metrics']['early_relative_errors'] == [0.6, 0.4, 0.3]
    assert outcome['metrics']['monotone'] == {'1': True, '3': True}

    monkeypatch.setattr(verify_service, 'asymptotic_errors', fake({1.0: [0.3, 0.4, 0.2], 3.0: [0.3, 0.2, 0.1]}))
    outcome = check_asymptotics(ACCEPTANCE_RUNS['kpp'][0])
    assert not outcome['passed']
    assert outcome['metrics']['monotone']['1'] is False

    monkeypatch.setattr(verify_service, 'asymptotic_errors', fake({1.0: [0.6, 0.4, 0.3], 3.0: [0.5, 0.4, 0.3]}))
    assert not check_asymptotics(ACCEPTANCE_RUNS['kpp'][0])['passed']


def test_asymptotic_errors_share_one_solve_per_t0():
    errors = asymptotic_errors(ACCEPTANCE_RUNS['kpp'][0], (1.0, 3.0), (25.0, 100.0))
    assert sorted(errors) == [1.0, 3.0]
    for values in errors.values():
        assert len(values) == 2
        assert all(math.isfinite(v) and v > 0 for v in values)


def test_check_orders():
    outcome = check_orders()
    assert outcome['id'] == 12
    assert outcome['passed']
    assert 14.0 <= outcome['metrics']['ode_richardson_ratio'] <= 18.0


def test_run_verification_selected_criteria():
    report = run_verification(VerifySettings(criteria=[12, 10]), seed=0)
    assert [item['id'] for item in report['criteria']] == [10, 12]
    assert report['passed']
    assert report['seed'] == 0
    gap = report['criteria'][0]['metrics']['spectral_gap']
    assert gap['passed']
    assert gap['slope'] <= gap['slope_bound']


def test_run_verification_uses_ode_settings():
    report = run_verification(VerifySettings(criteria=[9]), seed=0, ode=OdeSettings(n_random=20, T_random=100.0))
    outcome = report['criteria'][0]
    assert outcome['metrics']['n_starts'] == 20
    assert outcome['metrics']['T'] == 100.0
    assert outcome['passed']


@pytest.mark.slow
def test_ode_criterion():
    report = run_verification(VerifySettings(criteria=[9]), seed=0)
    assert report['criteria'][0]['passed']
    assert report['criteria'][0]['metrics']['n_starts'] == 1000
