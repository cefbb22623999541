"""径向对称反应扩散系统的有限差分求解"""
import math
import logging
from typing import Callable, List, Optional

import numpy as np
from scipy.integrate import trapezoid

from app.core.errors import ConfigError, FrontReachesBoundaryError, InstabilityError, ParameterDomainError
from app.models.fields import FieldState, FrontSeries, SimulationResult
from app.models.schemas import AuditRecord, InitSpec, ModelParams, RadialGrid, SimConfig
from app.services.front_service import front_positions, level_set_position
from app.services.model_service import reaction_bound, spreading_speeds

logger = logging.getLogger('frontwave')

TOL_NEG = 1e-10
TOL_BOUND = 1e-6
BOUNDARY_LEVEL = 0.01
LEADING_EDGE_FACTOR = 1.2
LEADING_EDGE_START = 20.0
RIGHT_STATE = np.array([0.0, 0.0, 1.0])


def _smooth_cutoff(y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    pos = y > 0
    out[pos] = np.exp(-1.0 / y[pos])
    return out


def init_state(grid: RadialGrid, init: InitSpec) -> FieldState:
    """初值：H≡1，C≡0，F 为紧支撑光滑剖面"""
    if init.support_radius >= grid.r_max / 4.0:
        raise ConfigError(
            f"初值支撑半径需小于 r_max/4: support_radius={init.support_radius}, r_max={grid.r_max:.6g}",
            key='support_radius')
    x = grid.nodes() / init.support_radius
    F = np.zeros(grid.n_points)
    inside = np.abs(x) < 1.0
    if init.profile == 'plateau-with-smooth-edge':
        F[inside] = init.amplitude * np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
    else:
        # x ≤ 1/2 上取平台值，(1/2, 1) 内光滑过渡到 0
        rise = _smooth_cutoff(1.0 - x)
        fall = _smooth_cutoff(2.0 * x - 1.0)
        F = init.amplitude * np.divide(rise, rise + fall, out=np.zeros_like(rise), where=(rise + fall) > 0)
    return FieldState.from_components(0.0, grid, F, np.zeros(grid.n_points), np.ones(grid.n_points))


def radial_laplacian(u: np.ndarray, dr: float, dim_N: int) -> np.ndarray:
    """∂_r² u + (N−1)/r ∂_r u，沿最后一维；r=0 处取对称极限 N·∂_r² u，右端点置 0"""
    lap = np.zeros_like(u)
    inv_dr2 = 1.0 / (dr * dr)
    lap[..., 1:-1] = (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) * inv_dr2
    if dim_N > 1:
        r = dr * np.arange(1, u.shape[-1] - 1)
        lap[..., 1:-1] += (dim_N - 1) / r * (u[..., 2:] - u[..., :-2]) / (2.0 * dr)
    lap[..., 0] = dim_N * 2.0 * (u[..., 1] - u[..., 0]) * inv_dr2
    return lap


def reaction(u: np.ndarray, params: ModelParams) -> np.ndarray:
    F, C, H = u
    total = F + C
    crowding = 1.0 - total
    return np.stack([
        params.a * F * crowding,
        C * crowding + params.s * H * total,
        params.b * H * (1.0 - H - params.g * total),
    ])


def _rhs_array(u: np.ndarray, params: ModelParams, dr: float) -> np.ndarray:
    du = radial_laplacian(u, dr, params.dim_N)
    du[2] *= params.d
    du += reaction(u, params)
    du[:, -1] = 0.0
    return du


def rhs(state: FieldState, params: ModelParams) -> np.ndarray:
    """(F, C, H) 的时间导数，形状 (3, n_points)；右端点 Dirichlet 固定，导数为 0"""
    return _rhs_array(state.u, params, state.grid.dr)


def max_stable_dt(grid: RadialGrid, params: ModelParams, cfl_factor: float,
                  initial_sup: float = 0.0) -> float:
    """显式扩散稳定步长 cfl·dr²/(2N·max{1,d})，并受反应时间尺度 0.1/ρ_reaction 限制"""
    diffusion_dt = cfl_factor * grid.dr ** 2 / (2.0 * grid.dim_N * max(1.0, params.d))
    bound = reaction_bound(params, initial_sup)
    rho_reaction = max(params.a, 1.0 + params.s, params.b) * (1.0 + bound)
    return min(diffusion_dt, 0.1 / rho_reaction)


def _heun(u: np.ndarray, params: ModelParams, dr: float, dt: float) -> np.ndarray:
    k1 = _rhs_array(u, params, dr)
    k2 = _rhs_array(u + dt * k1, params, dr)
    new = u + 0.5 * dt * (k1 + k2)
    new[:, -1] = RIGHT_STATE
    return new


def _check_finite(u: np.ndarray, t: float):
    if not np.all(np.isfinite(u)):
        node = int(np.argwhere(~np.isfinite(u))[0][1])
        raise InstabilityError("时间推进出现 NaN/Inf", t=t, node=node)


def step(state: FieldState, params: ModelParams, dt: float, cfl_factor: float = 0.8) -> FieldState:
    """Heun（显式梯形）一步；dt 超过 max_stable_dt 时抛 ParameterDomainError"""
    dt_max = max_stable_dt(state.grid, params, cfl_factor, float(state.FC.max()))
    if dt > dt_max * (1.0 + 1e-12):
        raise ParameterDomainError(f"步长超过稳定上限: dt={dt:.6g} > dt_max={dt_max:.6g}")
    new = _heun(state.u, params, state.grid.dr, dt)
    _check_finite(new, state.t + dt)
    return FieldState(t=state.t + dt, grid=state.grid, u=new)


def farmer_mass(state: FieldState) -> float:
    """∫F r^{N−1} dr（梯形公式）"""
    r = state.r
    return float(trapezoid(state.F * r ** (state.grid.dim_N - 1), r))


def lower_barrier(t: float, params: ModelParams, m0: float) -> float:
    """m′ = ε₂m − ε₃m² 的解析解，m(0) = m0"""
    eps1 = max(1.0, params.a, params.s, params.g)
    eps2 = min(1.0, params.a, params.b)
    eps3 = max(1.0, eps1, eps1 * params.b)
    if m0 <= 0:
        return 0.0
    return eps2 * m0 / (eps3 * m0 + (eps2 - eps3 * m0) * math.exp(-eps2 * t))


def snapshot_times(t_end: float, snapshot_dt: float) -> List[float]:
    if t_end <= 0:
        return [0.0]
    count = int(math.floor(t_end / snapshot_dt + 1e-9))
    times = [k * snapshot_dt for k in range(count + 1)]
    if t_end - times[-1] > 1e-9 * max(1.0, t_end):
        times.append(t_end)
    return times


def audit_state(state: FieldState, params: ModelParams, bound: float, barrier0: float,
                c_star: float) -> List[AuditRecord]:
    """快照不变量审计；margin ≥ 0 表示满足"""
    t = state.t
    F, C, H = state.u
    records = [
        AuditRecord(t=t, invariant_id='nonnegativity',
                    margin=float(min(F.min(), C.min(), H.min()) + TOL_NEG)),
        AuditRecord(t=t, invariant_id='h_upper', margin=float(1.0 + TOL_NEG - H.max())),
        AuditRecord(t=t, invariant_id='fc_bound', margin=float(bound + TOL_BOUND - (F + C).max())),
    ]
    if params.d == 1:
        barrier = lower_barrier(t, params, barrier0)
        records.append(AuditRecord(t=t, invariant_id='lower_barrier',
                                   margin=float((F + C + H).min() - barrier + TOL_BOUND)))
    if t >= LEADING_EDGE_START:
        edge = state.r >= LEADING_EDGE_FACTOR * c_star * t
        if np.any(edge):
            records.append(AuditRecord(t=t, invariant_id='leading_edge_fc',
                                       margin=float(1e-3 - (F + C)[edge].max())))
            records.append(AuditRecord(t=t, invariant_id='leading_edge_h',
                                       margin=float(H[edge].min() - 0.99)))
    for record in records:
        record.passed = record.margin >= 0
    return records


def simulate(config: SimConfig, run_logger: Optional[logging.Logger] = None,
             on_snapshot: Optional[Callable[[FieldState], None]] = None) -> SimulationResult:
    """积分到 t_end，在 snapshot_dt 的整数倍处输出快照、记录波前并审计"""
    log = run_logger or logger
    params = config.params
    grid = config.grid
    c_star = spreading_speeds(params).c_star
    if grid.r_max <= c_star * config.t_end + 20.0:
        raise ConfigError(
            f"截断半径过小: r_max={grid.r_max:.6g} 需大于 c*·t_end+20={c_star * config.t_end + 20.0:.6g}",
            key='r_max')

    state = init_state(grid, config.init)
    initial_sup = float(state.FC.max())
    bound = reaction_bound(params, initial_sup)
    barrier0 = float((state.F + state.C + state.H).min())
    dt_max = max_stable_dt(grid, params, config.cfl_factor, initial_sup)
    limit = grid.r_max - 10.0 * grid.dr

    fronts = FrontSeries(levels=tuple(config.levels))
    snapshots: List[FieldState] = []
    audits: List[AuditRecord] = []
    steps = 0
    dt_used = dt_max
    log.info(f"开始模拟: N={params.dim_N}, a={params.a}, b={params.b}, s={params.s}, g={params.g}, "
             f"d={params.d}, n_points={grid.n_points}, dr={grid.dr}, dt_max={dt_max:.6g}, t_end={config.t_end}")

    def record(current: FieldState):
        snapshots.append(current)
        fronts.append(current.t, front_positions(current, config.levels))
        audits.extend(audit_state(current, params, bound, barrier0, c_star))
        edge = level_set_position(current.FC, BOUNDARY_LEVEL, grid.dr)
        if edge is not None and edge > limit:
            raise FrontReachesBoundaryError(
                f"波前到达截断边界: t={current.t:.6g}, x_0.01={edge:.6g} > r_max−10dr={limit:.6g}")
        if on_snapshot is not None:
            on_snapshot(current)

    record(state)
    times = snapshot_times(config.t_end, config.snapshot_dt)
    u = state.u
    for t_prev, t_next in zip(times[:-1], times[1:]):
        interval = t_next - t_prev
        n_sub = max(1, int(math.ceil(interval / dt_max - 1e-12)))
        dt_used = interval / n_sub
        for k in range(n_sub):
            u = _heun(u, params, grid.dr, dt_used)
            _check_finite(u, t_prev + (k + 1) * dt_used)
        steps += n_sub
        state = FieldState(t=t_next, grid=grid, u=u)
        record(state)
        log.debug(f"snapshot t={t_next:.6g} step={steps}")

    result = SimulationResult(config=config, snapshots=snapshots, fronts=fronts, audits=audits,
                              steps=steps, dt=dt_used)
    failed = result.failed_audits
    if failed:
        log.warning(f"不变量审计失败 {len(failed)} 项，首项: {failed[0].invariant_id} t={failed[0].t:.6g} "
                    f"margin={failed[0].margin:.3e}")
    log.info(f"模拟完成: steps={steps}, snapshots={len(snapshots)}")
    return result
