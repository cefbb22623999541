"""实验编排：按模式分派、写出结果文件与清单"""
import math
import sys
import time
import uuid
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import psutil
import pytz
import pydantic
import scipy
from pydantic import ValidationError

import app
from app.core.config import auto_r_max, get_timezone_name
from app.core.errors import ConfigError, FrontwaveError, InsufficientSamplesError
from app.core.logging import close_run_logger, get_run_logger
from app.models.fields import SimulationResult
from app.models.schemas import ExperimentConfig, OdeState, RadialGrid, RunManifest, SimConfig
from app.services import (
    envelope_service, front_service, model_service, ode_service, solver_service, spectral_service,
    verify_service,
)
from app.utils import file_utils
from app.utils.plot_utils import emit_plots

logger = logging.getLogger('frontwave')

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


class _RssTracker:
    def __init__(self):
        self.process = psutil.Process()
        self.peak = 0

    def sample(self):
        self.peak = max(self.peak, self.process.memory_info().rss)

    @property
    def peak_mb(self) -> float:
        return self.peak / (1024 * 1024)


def _fits(result: SimulationResult) -> Dict:
    """各 (场, 水平) 的速度与漂移拟合；样本不足的组合记录原因"""
    params = result.config.params
    c_star = model_service.spreading_speeds(params).c_star
    speeds, drifts, skipped = [], [], []
    for name in result.fronts.fields:
        for level in result.fronts.levels:
            try:
                speeds.append(front_service.speed_estimate(result.fronts, name, level).model_dump())
            except InsufficientSamplesError as e:
                skipped.append({'field': name, 'level': level, 'fit': 'speed', 'reason': str(e)})
            try:
                drifts.append(front_service.drift_fit(result.fronts, name, level, c_star).model_dump())
            except InsufficientSamplesError as e:
                skipped.append({'field': name, 'level': level, 'fit': 'drift', 'reason': str(e)})
    return {
        'c_star': c_star,
        'discrete_speed': model_service.discrete_spreading_speed(params, result.config.grid.dr),
        'drift_coefficients': model_service.log_drift_coefficient(params).model_dump(),
        'speed': speeds,
        'drift': drifts,
        'skipped': skipped,
    }


def simulate_into(sim: SimConfig, out_dir: Path, run_logger: logging.Logger, workers: int = 1) -> Dict:
    """单次模拟：profiles.csv、fronts.csv、audit.ndjson、fits.json、envelope-report.json、plot.gp"""
    out_dir = file_utils.ensure_output_dir(out_dir)
    result = solver_service.simulate(sim, run_logger=run_logger)

    file_utils.write_profiles_csv(out_dir / 'profiles.csv', result.snapshots)
    file_utils.write_fronts_csv(out_dir / 'fronts.csv', front_service.series_to_rows(result.fronts))
    file_utils.write_ndjson(out_dir / 'audit.ndjson', (record.model_dump() for record in result.audits))
    file_utils.json_dump(out_dir / 'fits.json', _fits(result))

    constants = envelope_service.choose_constants(result.snapshots[0], sim.params)
    report = envelope_service.audit_envelopes(result, constants, workers=workers)
    file_utils.json_dump(out_dir / 'envelope-report.json', report.model_dump())
    emit_plots(out_dir, sim.params)

    regime = model_service.classify_regime(sim.params)
    return {
        'passed': result.audit_ok and report.ok,
        'regime': regime.model_dump(),
        'invariant_failures': len(result.failed_audits),
        'envelope_violations': len(report.violations),
        'steps': result.steps,
        'dt': result.dt,
    }


def _sweep_sim(base: SimConfig, point: Dict[str, float]) -> SimConfig:
    try:
        params = base.params.with_updates(**point)
    except ValidationError as e:
        raise ConfigError(f"扫描点参数无效 {point}: {e.errors()[0]['msg']}", key=','.join(point))
    r_max = max(base.grid.r_max, auto_r_max(params, base.t_end))
    grid = RadialGrid.covering(base.grid.dr, r_max, params.dim_N)
    return base.model_copy(update={'params': params, 'grid': grid})


def sweep_points(axes: Dict[str, List[float]]) -> List[Dict[str, float]]:
    names = sorted(axes)
    return [dict(zip(names, values)) for values in itertools.product(*(axes[name] for name in names))]


def _run_simulate(config: ExperimentConfig, out_dir: Path, run_logger, workers: int, rss: _RssTracker) -> Dict:
    summary = simulate_into(config.sim, out_dir, run_logger, workers)
    rss.sample()
    return summary


def _run_sweep(config: ExperimentConfig, out_dir: Path, run_logger, workers: int, rss: _RssTracker) -> Dict:
    points = sweep_points(config.sweep_axes)
    sims = [_sweep_sim(config.sim, point) for point in points]
    run_logger.info(f"参数扫描: {len(points)} 个点, workers={workers}")

    def one(index):
        name = file_utils.sweep_dir_name(points[index])
        try:
            summary = simulate_into(sims[index], out_dir / name, run_logger)
        except FrontwaveError as e:
            run_logger.error(f"扫描点失败: {name}: {e}")
            summary = {'passed': False, 'error': str(e)}
        rss.sample()
        return {'dir': name, 'point': points[index], **summary}

    with ThreadPoolExecutor(max_workers=workers) as executor:
        entries = list(executor.map(one, range(len(points))))
    file_utils.json_dump(out_dir / 'sweep-index.json', {'entries': entries})
    return {'passed': all(entry['passed'] for entry in entries), 'entries': len(entries),
            'failed': [entry['dir'] for entry in entries if not entry['passed']]}


def _run_verify(config: ExperimentConfig, out_dir: Path, run_logger, workers: int, rss: _RssTracker) -> Dict:
    report = verify_service.run_verification(
        config.verify, seed=config.seed, workers=workers, tau=config.dirichlet.tau,
        ladder=config.dirichlet.t0_ladder, dxi=config.dirichlet.dxi, t0=config.dirichlet.t0, ode=config.ode,
        run_logger=run_logger)
    rss.sample()
    file_utils.json_dump(out_dir / 'verify-report.json', report)
    return {'passed': report['passed'],
            'failed_criteria': [item['id'] for item in report['criteria'] if not item['passed']]}


def _run_ode(config: ExperimentConfig, out_dir: Path, run_logger, workers: int, rss: _RssTracker) -> Dict:
    m = config.params
    settings = config.ode
    trajectory = ode_service.integrate_ode(OdeState(C=settings.C0, H=settings.H0), m, settings.dt, settings.T)
    rss.sample()
    summary: Dict = {'final_state': list(trajectory.final), 'steps': len(trajectory.t) - 1,
                     'steady_states': [state.model_dump() for state in model_service.steady_states(m)]}
    if m.g < 1 and settings.C0 > 0 and settings.H0 > 0:
        phi = ode_service.lyapunov_values(trajectory.C, trajectory.H, m)
        C_star, H_star = ode_service.equilibrium(m)
        dphi = ode_service.lyapunov_dissipation_values(trajectory.C, trajectory.H, m)
        step = float(trajectory.t[1] - trajectory.t[0])
        increase = float(np.max(np.diff(phi))) if phi.size > 1 else 0.0
        summary.update({'max_phi_increase': increase,
                        'final_distance': float(math.hypot(trajectory.C[-1] - C_star, trajectory.H[-1] - H_star))})
        starts = ode_service.random_sigma_points(m, settings.n_random, seed=config.seed)
        batch = ode_service.batch_lyapunov_check(starts, m, T=settings.T_random)
        rss.sample()
        summary['random_starts'] = {**batch.model_dump(), 'passed': batch.passed}
        summary['passed'] = increase <= 1e-8 * step and batch.passed
    else:
        phi = np.full_like(trajectory.C, np.nan)
        dphi = np.full_like(trajectory.C, np.nan)
        summary['passed'] = True
    file_utils.write_table_csv(out_dir / 'ode.csv', ('t', 'C', 'H', 'Phi', 'dPhi_dt'),
                               (trajectory.t, trajectory.C, trajectory.H, phi, dphi))
    return summary


def _run_dirichlet(config: ExperimentConfig, out_dir: Path, run_logger, workers: int, rss: _RssTracker) -> Dict:
    settings = config.dirichlet
    p = spectral_service.dirichlet_params(config.params, settings.t0, settings.delta)
    rho = spectral_service.rho_grid(0.01)
    zeta0 = (spectral_service.orthogonal_zeta0(rho) if settings.zeta0 == 'orthogonal'
             else spectral_service.default_zeta0(rho))
    moment = spectral_service.first_moment(zeta0)
    t_end = settings.t0 * (math.exp(settings.tau) - 1.0)
    sample_times = [settings.t0 * (math.exp(tau) - 1.0) for tau in np.linspace(0.0, settings.tau, 7)[1:]]
    solution = spectral_service.solve_linear_drift(p, zeta0, t_end, dxi=settings.dxi, times=sample_times)
    rss.sample()

    columns = [[], [], [], [], []]
    errors = {}
    for t in sample_times:
        mask = solution.xi <= 3.0 * math.sqrt(t + p.t0)
        xi = solution.xi[mask]
        w = solution.w_at(t)[mask]
        w_asym = spectral_service.asymptotic_leading(t, xi, p, moment, weighted=True)
        with np.errstate(under='ignore', divide='ignore', invalid='ignore'):
            decay = np.exp(-p.lambda_star * xi)
            rel = np.where(w_asym != 0, np.abs(w - w_asym) / np.abs(w_asym), 0.0)
        for column, values in zip(columns, (np.full_like(xi, t), xi, w * decay, w_asym * decay, rel)):
            column.append(values)
        if moment != 0:
            errors[f"{t:.6g}"] = spectral_service.numeric_vs_asymptotic(solution, t, moment)
    file_utils.write_table_csv(out_dir / 'dirichlet.csv', ('t', 'xi', 'z_numeric', 'z_asymptotic', 'rel_error'),
                               [np.concatenate(column) for column in columns])

    checks = spectral_service.spectral_checks(seed=config.seed)
    min_z = float(np.min(solution.w))
    report = {
        'params': p.model_dump(),
        'gamma': p.gamma,
        'zeta0': settings.zeta0,
        'zeta0_moment': moment,
        'relative_errors': errors,
        'min_w': min_z,
        'remainder_envelopes': spectral_service.remainder_envelopes(p, zeta0, t_end),
        'checks': checks,
    }
    if settings.zeta0 == 'orthogonal':
        report['spectral_gap'] = spectral_service.spectral_gap_fit(config.params, settings.t0, settings.dxi)
    file_utils.json_dump(out_dir / 'spectral-report.json', report)
    positive_ok = settings.zeta0 != 'bump' or min_z >= -1e-10
    gap_ok = report.get('spectral_gap', {}).get('passed', True)
    return {'passed': checks['passed'] and positive_ok and gap_ok, 'relative_errors': errors}


def _run_fit(config: ExperimentConfig, out_dir: Path, run_logger, workers: int, rss: _RssTracker) -> Dict:
    settings = config.fit
    source = Path(settings.source_dir) / 'fronts.csv'
    if not source.exists():
        raise ConfigError(f"找不到波前数据: {source}", key='source_dir')
    series = front_service.series_from_rows(file_utils.read_fronts_csv(source))
    c_star = model_service.spreading_speeds(config.params).c_star
    window = tuple(settings.window) if settings.window else None
    speed = front_service.speed_estimate(series, settings.field, settings.level, window)
    drift = front_service.drift_fit(series, settings.field, settings.level, c_star, window)
    file_utils.json_dump(out_dir / 'fits.json', {'c_star': c_star, 'speed': [speed.model_dump()],
                                                 'drift': [drift.model_dump()]})
    return {'passed': True, 'c_hat': speed.c_hat, 'k_hat': drift.k_hat}


MODE_HANDLERS = {
    'simulate': _run_simulate,
    'sweep': _run_sweep,
    'verify': _run_verify,
    'ode': _run_ode,
    'dirichlet': _run_dirichlet,
    'fit': _run_fit,
}


def versions() -> Dict[str, str]:
    return {
        'frontwave': app.__version__,
        'python': sys.version.split()[0],
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pydantic': pydantic.VERSION,
    }


def run(config: ExperimentConfig, output_dir=None, workers: Optional[int] = None) -> RunManifest:
    """执行一次实验并写出 manifest.json；配置错误向上抛出"""
    out_dir = Path(output_dir or config.output_dir)
    try:
        out_dir = file_utils.ensure_output_dir(out_dir)
    except OSError as e:
        raise ConfigError(f"输出目录不可用: {e}", key='output_dir')
    workers = workers or config.workers
    run_id = uuid.uuid4().hex[:12]
    run_logger = get_run_logger(run_id)
    rss = _RssTracker()
    rss.sample()
    started = time.perf_counter()
    logger.info(f"开始运行: run_id={run_id}, mode={config.mode}, out={out_dir}, workers={workers}")

    try:
        summary = MODE_HANDLERS[config.mode](config, out_dir, run_logger, workers, rss)
        exit_code = EXIT_OK if summary.get('passed', True) else EXIT_FAILED
    except ConfigError:
        close_run_logger(run_logger)
        raise
    except FrontwaveError as e:
        logger.exception(f"运行失败: run_id={run_id}, mode={config.mode}: {e}")
        summary = {'passed': False, 'error': f"{type(e).__name__}: {e}"}
        exit_code = EXIT_FAILED

    rss.sample()
    manifest = RunManifest(
        run_id=run_id,
        mode=config.mode,
        created_at=datetime.now(pytz.timezone(get_timezone_name())).isoformat(),
        config=config.model_dump(mode='json'),
        versions=versions(),
        wall_time_s=round(time.perf_counter() - started, 3),
        peak_rss_mb=round(rss.peak_mb, 1),
        audit_summary=summary,
        files=file_utils.file_inventory(out_dir),
        exit_code=exit_code,
    )
    file_utils.json_dump(out_dir / file_utils.MANIFEST_NAME, manifest.model_dump())
    logger.info(f"运行结束: run_id={run_id}, exit_code={exit_code}, 耗时={manifest.wall_time_s}s")
    close_run_logger(run_logger)
    return manifest
