"""验收准则套件：桌面规模的模拟、审计与数值对照"""
import math
import time
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from app.core.config import build_sim_config
from app.core.errors import FrontwaveError
from app.models.fields import SimulationResult
from app.models.schemas import (
    GridSettings, InitSpec, ModelParams, OdeSettings, OdeState, RunSettings, SimConfig, VerifySettings, ZoneStats,
)
from app.services import (
    envelope_service, front_service, model_service, ode_service, solver_service, spectral_service,
)

logger = logging.getLogger('frontwave')

# 验收运行：参数与终止时间
ACCEPTANCE_RUNS = {
    'kpp': (ModelParams(a=1.0, b=1.0, s=1.0, g=2.0, d=1.0), 300.0),
    'fig1': (ModelParams(a=4.0, b=1.0, s=0.5, g=2.0, d=1.0), 200.0),
    'coexistence': (ModelParams(a=1.0, b=1.0, s=0.5, g=0.4, d=1.0), 200.0),
    'small_peak': (ModelParams(a=4.0, b=1.0, s=0.5, g=0.4, d=1.0), 200.0),
}
CRITERIA_RUNS = {
    1: ('kpp', 'fig1'),
    2: ('kpp', 'fig1'),
    3: ('kpp', 'fig1'),
    4: ('coexistence',),
    5: ('small_peak',),
    6: ('kpp',),
    7: tuple(ACCEPTANCE_RUNS),
    8: tuple(ACCEPTANCE_RUNS),
}
ALL_CRITERIA = tuple(range(1, 13))
ODE_PARAMS = ModelParams(a=1.0, b=1.0, s=0.5, g=0.4, d=1.0)


def acceptance_config(params: ModelParams, t_end: float, dr: float = 0.1) -> SimConfig:
    return build_sim_config(params, GridSettings(dr=dr), InitSpec(), RunSettings(t_end=t_end))


def _criterion(number: int, name: str, passed: bool, **metrics) -> Dict:
    return {'id': number, 'name': name, 'passed': bool(passed), 'metrics': metrics}


def check_speed(runs: Dict[str, SimulationResult]) -> Dict:
    metrics = {}
    passed = True
    for name in CRITERIA_RUNS[1]:
        result = runs[name]
        c_star = model_service.spreading_speeds(result.config.params).c_star
        estimate = front_service.speed_estimate(result.fronts, 'FC', 0.5, (75.0, 150.0))
        error = abs(estimate.c_hat - c_star) / c_star
        metrics[name] = {'c_hat': estimate.c_hat, 'c_star': c_star, 'relative_error': error,
                         'discrete_speed': model_service.discrete_spreading_speed(result.config.params,
                                                                                  result.config.grid.dr)}
        passed &= error < 0.03
    return _criterion(1, 'spreading speed', passed, **metrics)


def check_leading_edge(runs: Dict[str, SimulationResult]) -> Dict:
    metrics = {}
    passed = True
    for name in CRITERIA_RUNS[2]:
        result = runs[name]
        c_star = model_service.spreading_speeds(result.config.params).c_star
        stats = front_service.zone_stats(result.snapshot_at(150.0), 1.2 * c_star, exterior=True)
        metrics[name] = {'sup_FC': stats.sup['FC'], 'inf_H': stats.inf['H']}
        passed &= stats.sup['FC'] < 1e-3 and stats.inf['H'] > 0.99
    return _criterion(2, 'leading edge', passed, **metrics)


def _target_deviation(stats: ZoneStats, targets: Dict[str, float]) -> Dict[str, float]:
    """区域内各场相对目标值的最大偏差 max|u − target|"""
    return {name: max(abs(stats.inf[name] - value), abs(stats.sup[name] - value))
            for name, value in targets.items()}


def check_high_conversion(runs: Dict[str, SimulationResult]) -> Dict:
    metrics = {}
    passed = True
    for name in CRITERIA_RUNS[3]:
        result = runs[name]
        params = result.config.params
        speeds = model_service.spreading_speeds(params)
        targets = model_service.final_zone_targets(params)
        state = result.snapshot_at(200.0)
        ball = front_service.zone_stats(state, 0.5 * speeds.c_star)
        if set(targets) != {'FC', 'H'}:
            metrics[name] = {'targets': targets}
            passed = False
            continue
        deviation = _target_deviation(ball, targets)
        entry = {'targets': targets, 'sup_H': deviation['H'], 'sup_abs_1_minus_FC': deviation['FC']}
        passed &= deviation['H'] < 1e-2 and deviation['FC'] < 2e-2
        if model_service.front_order(params) != 'F_fast':
            annulus = front_service.zone_stats(state, 1.1 * speeds.c_star_star, 0.9 * speeds.c_star)
            annulus_dev = _target_deviation(annulus, {'F': 0.0, 'C': targets['FC']})
            entry.update({'annulus_sup_F': annulus_dev['F'], 'annulus_sup_abs_1_minus_C': annulus_dev['C']})
            passed &= annulus_dev['F'] < 1e-2 and annulus_dev['C'] < 2e-2
        metrics[name] = entry
    return _criterion(3, 'high-conversion final zone', passed, **metrics)


def check_coexistence(runs: Dict[str, SimulationResult]) -> Dict:
    result = runs['coexistence']
    params = result.config.params
    condition = model_service.coexistence_sufficient_condition(params)
    targets = model_service.final_zone_targets(params)
    if 'C' not in targets:
        return _criterion(4, 'low-conversion coexistence', False, branch=condition.branch, targets=targets)
    c_star = model_service.spreading_speeds(params).c_star
    ball = front_service.zone_stats(result.snapshot_at(200.0), 0.5 * c_star)
    deviation = _target_deviation(ball, targets)
    passed = (condition.branch == 'conversion' and deviation['C'] < 2e-2 and deviation['H'] < 2e-2
              and deviation['F'] < 1e-2)
    return _criterion(4, 'low-conversion coexistence', passed, branch=condition.branch, targets=targets,
                      max_abs_C_minus_Cstar=deviation['C'], max_abs_H_minus_Hstar=deviation['H'],
                      sup_F=deviation['F'])


def check_small_peak(runs: Dict[str, SimulationResult]) -> Dict:
    result = runs['small_peak']
    c_star = model_service.spreading_speeds(result.config.params).c_star
    dr = result.config.grid.dr
    min_peak, max_behind = math.inf, 0.0
    for state in result.snapshots:
        if not 100.0 <= state.t <= 200.0:
            continue
        front = front_service.level_set_position(state.FC, 0.05, dr)
        if front is None:
            min_peak = 0.0
            continue
        peak, _ = front_service.peak_detect(state.F, front, dr)
        behind = float(np.interp(0.5 * c_star * state.t, state.r, state.F))
        min_peak = min(min_peak, peak)
        max_behind = max(max_behind, behind)
    passed = min_peak > 0.05 and max_behind < 1e-2
    return _criterion(5, 'small peak', passed, min_peak=min_peak, max_F_at_half_speed=max_behind)


def check_log_drift(runs: Dict[str, SimulationResult]) -> Dict:
    result = runs['kpp']
    params = result.config.params
    c_star = model_service.spreading_speeds(params).c_star
    fit = front_service.drift_fit(result.fronts, 'FC', 0.5, c_star, (50.0, 300.0))
    reference = (params.dim_N + 2) / c_star
    passed = 0.5 * reference <= fit.k_hat <= 2.0 * reference
    return _criterion(6, 'logarithmic drift', passed, k_hat=fit.k_hat, b_hat=fit.b_hat,
                      residual_rms=fit.residual_rms, reference=reference,
                      discrete_speed=model_service.discrete_spreading_speed(params, result.config.grid.dr))


def check_envelopes(runs: Dict[str, SimulationResult], workers: int = 1) -> Dict:
    metrics = {}
    passed = True
    for name in CRITERIA_RUNS[7]:
        result = runs[name]
        constants = envelope_service.choose_constants(result.snapshots[0], result.config.params)
        report = envelope_service.audit_envelopes(result, constants, workers=workers)
        metrics[name] = {'violations': len(report.violations), 'A1': constants.A1, 'A2': constants.A2,
                         'h_audit': report.h_audit}
        passed &= report.ok
    kpp = runs['kpp']
    constants = envelope_service.choose_constants(kpp.snapshots[0], kpp.config.params)
    control = envelope_service.audit_envelopes(kpp, envelope_service.negative_control(constants), workers=workers)
    metrics['negative_control_violations'] = len(control.violations)
    passed &= len(control.violations) >= 1
    return _criterion(7, 'envelope audits', passed, **metrics)


def check_invariants(runs: Dict[str, SimulationResult]) -> Dict:
    metrics = {}
    passed = True
    for name in CRITERIA_RUNS[8]:
        result = runs[name]
        worst: Dict[str, float] = {}
        for record in result.audits:
            worst[record.invariant_id] = min(worst.get(record.invariant_id, math.inf), record.margin)
        metrics[name] = {'min_margin': worst, 'failed': len(result.failed_audits)}
        passed &= result.audit_ok
    return _criterion(8, 'solver invariants', passed, **metrics)


def check_ode(seed: int = 0, n_starts: int = 1000, T: float = 500.0) -> Dict:
    m = ODE_PARAMS
    points = ode_service.random_sigma_points(m, 100, seed=seed)
    identity_error = 0.0
    for C, H in points:
        state = OdeState(C=C, H=H)
        grad = ode_service.lyapunov_gradient(state, m)
        flow = ode_service.ode_rhs(state, m)
        chain = grad[0] * flow[0] + grad[1] * flow[1]
        identity_error = max(identity_error, abs(chain - ode_service.lyapunov_dissipation(state, m)))
    starts = ode_service.random_sigma_points(m, n_starts, seed=seed + 1)
    report = ode_service.batch_lyapunov_check(starts, m, T=T)
    passed = report.passed and identity_error < 1e-10
    return _criterion(9, 'ODE Lyapunov', passed, dissipation_identity_error=identity_error,
                      **report.model_dump())


def check_spectral(seed: int = 0, m: Optional[ModelParams] = None, t0: float = 400.0, dxi: float = 0.5) -> Dict:
    report = spectral_service.spectral_checks(seed=seed)
    gap = spectral_service.spectral_gap_fit(m or ACCEPTANCE_RUNS['kpp'][0], t0, dxi)
    passed = report.pop('passed') and gap['passed']
    return _criterion(10, 'spectral suite', passed, spectral_gap=gap, **report)


def asymptotic_errors(m: ModelParams, taus: Sequence[float], ladder: Sequence[float],
                      dxi: float = 0.5) -> Dict[float, List[float]]:
    """每个 t0 只求解一次，返回 {τ: [各 t0 的相对误差]}"""
    rho = spectral_service.rho_grid(0.01)
    zeta0 = spectral_service.default_zeta0(rho)
    moment = spectral_service.first_moment(zeta0)
    errors: Dict[float, List[float]] = {tau: [] for tau in taus}
    for t0 in ladder:
        p = spectral_service.dirichlet_params(m, t0)
        times = {tau: t0 * (math.exp(tau) - 1.0) for tau in taus}
        solution = spectral_service.solve_linear_drift(p, zeta0, max(times.values()), dxi=dxi,
                                                       times=list(times.values()))
        for tau, t in times.items():
            errors[tau].append(spectral_service.numeric_vs_asymptotic(solution, t, moment))
    return errors


def _nonincreasing(values: Sequence[float]) -> bool:
    return all(later <= earlier for earlier, later in zip(values, values[1:]))


def check_asymptotics(m: ModelParams, tau: float = 3.0, ladder: Sequence[float] = (100.0, 400.0, 1600.0),
                      dxi: float = 0.5, early_tau: float = 1.0) -> Dict:
    """τ=early_tau 与 τ=tau 处误差都随 t0 不增，且最大 t0 在 τ=tau 处误差低于 25%"""
    taus = sorted({early_tau, tau})
    errors = asymptotic_errors(m, taus, ladder, dxi)
    monotone = {f"{value:g}": _nonincreasing(errors[value]) for value in taus}
    passed = all(monotone.values()) and errors[tau][-1] < 0.25
    return _criterion(11, 'asymptotic vs numeric', passed, tau=tau, early_tau=early_tau, t0=list(ladder),
                      relative_errors=errors[tau], early_relative_errors=errors[early_tau],
                      monotone=monotone)


def laplacian_order(dim_N: int = 1, spacings: Sequence[float] = (0.2, 0.1, 0.05), r_max: float = 10.0) -> List[float]:
    """cos(πr/r_max) 上径向 Laplace 离散的 Richardson 阶"""
    errors = []
    k = math.pi / r_max
    for dr in spacings:
        r = dr * np.arange(int(round(r_max / dr)) + 1)
        u = np.cos(k * r)
        exact = np.empty_like(r)
        exact[0] = -dim_N * k ** 2
        exact[1:] = -k ** 2 * np.cos(k * r[1:]) - (dim_N - 1) / r[1:] * k * np.sin(k * r[1:])
        numeric = solver_service.radial_laplacian(u, dr, dim_N)
        errors.append(float(np.max(np.abs(numeric[:-1] - exact[:-1]))))
    return [math.log2(coarse / fine) for coarse, fine in zip(errors, errors[1:])]


def check_orders() -> Dict:
    orders = {f'N={n}': laplacian_order(n) for n in (1, 2, 3)}
    m = ODE_PARAMS
    ratio = ode_service.ode_richardson_ratio(OdeState(C=0.2, H=0.9), m, T=4.0)
    passed = all(min(values) >= 1.9 for values in orders.values()) and 14.0 <= ratio <= 18.0
    return _criterion(12, 'order of accuracy', passed, spatial_orders=orders, ode_richardson_ratio=ratio)


def run_acceptance_simulations(names: Sequence[str], dr: float = 0.1, workers: int = 1,
                               run_logger: Optional[logging.Logger] = None) -> Dict[str, SimulationResult]:
    log = run_logger or logger

    def one(name):
        params, t_end = ACCEPTANCE_RUNS[name]
        log.info(f"验收模拟开始: run={name}, t_end={t_end}")
        started = time.perf_counter()
        result = solver_service.simulate(acceptance_config(params, t_end, dr), run_logger=log)
        log.info(f"验收模拟完成: run={name}, 耗时={time.perf_counter() - started:.1f}s")
        return name, result

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return dict(executor.map(one, names))
    return dict(one(name) for name in names)


def run_verification(settings: VerifySettings, seed: int = 0, workers: int = 1, tau: float = 3.0,
                     ladder: Sequence[float] = (100.0, 400.0, 1600.0), dxi: float = 0.5,
                     t0: float = 400.0, ode: Optional[OdeSettings] = None,
                     run_logger: Optional[logging.Logger] = None) -> Dict:
    """按编号运行验收准则，返回 verify-report 内容"""
    log = run_logger or logger
    ode = ode or OdeSettings()
    selected = sorted(settings.criteria or ALL_CRITERIA)
    needed = sorted({name for number in selected for name in CRITERIA_RUNS.get(number, ())})
    runs = run_acceptance_simulations(needed, settings.dr, workers, log) if needed else {}

    checks: Dict[int, Callable[[], Dict]] = {
        1: lambda: check_speed(runs),
        2: lambda: check_leading_edge(runs),
        3: lambda: check_high_conversion(runs),
        4: lambda: check_coexistence(runs),
        5: lambda: check_small_peak(runs),
        6: lambda: check_log_drift(runs),
        7: lambda: check_envelopes(runs, workers),
        8: lambda: check_invariants(runs),
        9: lambda: check_ode(seed, ode.n_random, ode.T_random),
        10: lambda: check_spectral(seed, ACCEPTANCE_RUNS['kpp'][0], t0, dxi),
        11: lambda: check_asymptotics(ACCEPTANCE_RUNS['kpp'][0], tau, ladder, dxi),
        12: check_orders,
    }
    results = []
    for number in selected:
        started = time.perf_counter()
        try:
            outcome = checks[number]()
        except FrontwaveError as e:
            log.exception(f"验收准则 {number} 执行失败: {e}")
            outcome = _criterion(number, 'error', False, error=str(e))
        log.info(f"验收准则 {number} ({outcome['name']}): {'通过' if outcome['passed'] else '未通过'}, "
                 f"耗时={time.perf_counter() - started:.1f}s")
        results.append(outcome)
    return {'criteria': results, 'passed': all(item['passed'] for item in results),
            'dr': settings.dr, 'seed': seed}
