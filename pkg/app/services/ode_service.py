"""空间齐次 (C, H) 子系统的积分与 Lyapunov 函数"""
import logging
from typing import Optional, Tuple

import numpy as np

from app.core.errors import DivergenceError, ParameterDomainError
from app.models.fields import OdeTrajectory
from app.models.schemas import LyapunovBatchReport, ModelParams, OdeState
from app.services.model_service import coexistence_state

logger = logging.getLogger('frontwave')

GUARD_LOW = -1e-8
GUARD_HIGH = 1e3


def _rhs(C, H, m: ModelParams):
    return C * (1.0 - C) + m.s * C * H, m.b * H * (1.0 - H - m.g * C)


def ode_rhs(x: OdeState, m: ModelParams) -> Tuple[float, float]:
    dC, dH = _rhs(x.C, x.H, m)
    return float(dC), float(dH)


def max_ode_dt(m: ModelParams) -> float:
    return 0.01 / max(1.0 + m.s, m.b * (1.0 + m.g * (1.0 + m.s)))


def _rk4(C, H, m: ModelParams, dt: float):
    k1c, k1h = _rhs(C, H, m)
    k2c, k2h = _rhs(C + 0.5 * dt * k1c, H + 0.5 * dt * k1h, m)
    k3c, k3h = _rhs(C + 0.5 * dt * k2c, H + 0.5 * dt * k2h, m)
    k4c, k4h = _rhs(C + dt * k3c, H + dt * k3h, m)
    return (C + dt / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c),
            H + dt / 6.0 * (k1h + 2.0 * k2h + 2.0 * k3h + k4h))


def _check_dt(dt: float, m: ModelParams):
    limit = max_ode_dt(m)
    if dt > limit * (1.0 + 1e-12):
        raise ParameterDomainError(f"ODE 步长 dt={dt:.6g} 超过上限 {limit:.6g}")


def integrate_ode(x0: OdeState, m: ModelParams, dt: Optional[float] = None, T: float = 200.0) -> OdeTrajectory:
    """经典四阶 Runge-Kutta，逐步采样"""
    dt = dt or max_ode_dt(m)
    _check_dt(dt, m)
    n_steps = int(np.ceil(T / dt - 1e-9))
    dt = T / n_steps
    C = np.empty(n_steps + 1)
    H = np.empty(n_steps + 1)
    C[0], H[0] = x0.C, x0.H
    c, h = float(x0.C), float(x0.H)
    for k in range(1, n_steps + 1):
        c, h = _rk4(c, h, m, dt)
        if not (GUARD_LOW <= c <= GUARD_HIGH and GUARD_LOW <= h <= GUARD_HIGH):
            raise DivergenceError(f"ODE 轨道离开保护区域 (C={c:.6g}, H={h:.6g})", t=k * dt)
        C[k], H[k] = c, h
    return OdeTrajectory(params=m, t=dt * np.arange(n_steps + 1), C=C, H=H)


def equilibrium(m: ModelParams) -> Tuple[float, float]:
    coexistence = coexistence_state(m)
    if coexistence is None:
        raise ParameterDomainError(f"Lyapunov 函数只对 g<1 定义，当前 g={m.g}")
    return coexistence.C_star, coexistence.H_star


def _check_sigma(C, H):
    if np.any(np.asarray(C) <= 0) or np.any(np.asarray(H) <= 0):
        raise ParameterDomainError("Lyapunov 函数要求 C>0 且 H>0")


def _log_gap(x, x_star):
    # (x − x*) − x*·ln(x/x*)，q 接近 1 时用 log1p 保持精度
    q_minus_one = (x - x_star) / x_star
    return x_star * (q_minus_one - np.log1p(q_minus_one))


def lyapunov(x: OdeState, m: ModelParams) -> float:
    C_star, H_star = equilibrium(m)
    _check_sigma(x.C, x.H)
    return float(m.b * m.g * _log_gap(x.C, C_star) + m.s * _log_gap(x.H, H_star))


def lyapunov_values(C: np.ndarray, H: np.ndarray, m: ModelParams) -> np.ndarray:
    C_star, H_star = equilibrium(m)
    return m.b * m.g * _log_gap(C, C_star) + m.s * _log_gap(H, H_star)


def lyapunov_gradient(x: OdeState, m: ModelParams) -> Tuple[float, float]:
    C_star, H_star = equilibrium(m)
    _check_sigma(x.C, x.H)
    return m.b * m.g * (1.0 - C_star / x.C), m.s * (1.0 - H_star / x.H)


def lyapunov_dissipation(x: OdeState, m: ModelParams) -> float:
    """dΦ/dt = −bg(C−C*)² − bs(H−H*)²"""
    C_star, H_star = equilibrium(m)
    _check_sigma(x.C, x.H)
    return float(-m.b * m.g * (x.C - C_star) ** 2 - m.b * m.s * (x.H - H_star) ** 2)


def lyapunov_dissipation_values(C: np.ndarray, H: np.ndarray, m: ModelParams) -> np.ndarray:
    C_star, H_star = equilibrium(m)
    return -m.b * m.g * (C - C_star) ** 2 - m.b * m.s * (H - H_star) ** 2


def hessian_diagonal(x: OdeState, m: ModelParams) -> Tuple[float, float]:
    C_star, H_star = equilibrium(m)
    return m.b * m.g * C_star / x.C ** 2, m.s * H_star / x.H ** 2


def random_sigma_points(m: ModelParams, n: int, seed: int = 0, margin: float = 1e-3) -> np.ndarray:
    """Σ = (0, 1+s) × (0, 1) 内均匀随机点，形状 (n, 2)"""
    rng = np.random.default_rng(seed)
    C = rng.uniform(margin, (1.0 + m.s) * (1.0 - margin), size=n)
    H = rng.uniform(margin, 1.0 - margin, size=n)
    return np.column_stack([C, H])


def batch_lyapunov_check(starts: np.ndarray, m: ModelParams, T: float = 500.0,
                         dt: Optional[float] = None) -> LyapunovBatchReport:
    """批量积分多条轨道，逐步检查 Φ 单调性与 Σ 不变性，不保存轨道"""
    C_star, H_star = equilibrium(m)
    dt = dt or max_ode_dt(m)
    _check_dt(dt, m)
    n_steps = int(np.ceil(T / dt - 1e-9))
    dt = T / n_steps
    upper_C = 1.0 + m.s
    C = starts[:, 0].astype(np.float64).copy()
    H = starts[:, 1].astype(np.float64).copy()
    phi = lyapunov_values(C, H, m)
    max_increase = -np.inf
    excursion = 0.0
    for k in range(n_steps):
        C, H = _rk4(C, H, m, dt)
        excursion = max(excursion, float(np.max(-C)), float(np.max(-H)),
                        float(np.max(C - upper_C)), float(np.max(H - 1.0)))
        if excursion > 1.0:
            raise DivergenceError("批量 ODE 轨道离开 Σ", t=(k + 1) * dt)
        with np.errstate(invalid='ignore', divide='ignore'):
            phi_next = lyapunov_values(np.maximum(C, 1e-300), np.maximum(H, 1e-300), m)
        max_increase = max(max_increase, float(np.max(phi_next - phi)))
        phi = phi_next
    distance = np.hypot(C - C_star, H - H_star)
    report = LyapunovBatchReport(
        n_starts=int(starts.shape[0]), T=T, dt=dt,
        max_phi_increase=max_increase,
        max_sigma_excursion=max(0.0, excursion),
        max_final_distance=float(distance.max()),
        phi_tolerance=1e-8 * dt,
        distance_tolerance=1e-6,
    )
    logger.info(f"Lyapunov 批量检查: n={report.n_starts}, T={T}, max_dphi={report.max_phi_increase:.3e}, "
                f"max_dist={report.max_final_distance:.3e}")
    return report


def ode_richardson_ratio(x0: OdeState, m: ModelParams, T: float, dt: Optional[float] = None) -> float:
    """步长减半的 Richardson 比值 |x_h − x_{h/2}| / |x_{h/2} − x_{h/4}|，四阶方法约为 16"""
    dt = dt or max_ode_dt(m)
    finals = []
    for factor in (1, 2, 4):
        trajectory = integrate_ode(x0, m, dt / factor, T)
        finals.append(np.array(trajectory.final))
    return float(np.linalg.norm(finals[0] - finals[1]) / np.linalg.norm(finals[1] - finals[2]))
