"""自相似线性漂移方程：加权 Hermite 算子、谱分解、渐近公式与数值对照"""
import math
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from numpy.polynomial import hermite_e
from scipy.integrate import trapezoid

from app.core.errors import GridMismatchError, InstabilityError
from app.models.fields import DirichletSolution, SpectralProfile
from app.models.schemas import DirichletParams, ModelParams, MovingFrame
from app.services.model_service import spreading_speeds

logger = logging.getLogger('frontwave')

RHO_MAX = 12.0
GAP_SLACK = 4.0
PROJECTION_SLACK = 2.0


def rho_grid(d_rho: float = 0.005, rho_max: float = RHO_MAX) -> np.ndarray:
    n = int(round(rho_max / d_rho)) + 1
    return np.linspace(0.0, rho_max, n)


def bridging_delta(m: ModelParams) -> float:
    """使 γ = 1/2 的漂移系数 δ = (N+2)/(2λ*)"""
    return (m.dim_N + 2) / (2.0 * spreading_speeds(m).lambda_star)


def dirichlet_params(m: ModelParams, t0: float, delta: Optional[float] = None) -> DirichletParams:
    speeds = spreading_speeds(m)
    delta = bridging_delta(m) if delta is None else delta
    return DirichletParams(delta=delta, t0=t0, lambda_star=speeds.lambda_star, dim_N=m.dim_N)


def frame_position(t: float, p: DirichletParams) -> MovingFrame:
    s = t + p.t0
    xi_front = p.c_star * s - p.delta * math.log(s / p.t0)
    return MovingFrame(t=t, t0=p.t0, delta=p.delta, xi_front=xi_front)


def eigenfunction(k: int, rho: np.ndarray) -> SpectralProfile:
    """单位范数特征函数 φ_k ∝ He_{2k−1}(ρ/√2)·e^{−ρ²/4}，特征值 −(k−1)"""
    if k < 1:
        raise ValueError(f"特征函数序号从 1 开始，当前 k={k}")
    n = 2 * k - 1
    coefficients = np.zeros(n + 1)
    coefficients[n] = 1.0
    norm = math.sqrt(math.sqrt(math.pi) * math.factorial(n))
    values = hermite_e.hermeval(rho / math.sqrt(2.0), coefficients) * np.exp(-rho ** 2 / 4.0) / norm
    return SpectralProfile(rho=rho, values=values)


def _same_grid(f: SpectralProfile, g: SpectralProfile):
    if f.rho.shape != g.rho.shape or not np.array_equal(f.rho, g.rho):
        raise GridMismatchError(f"ρ 网格不一致: {f.rho.shape} vs {g.rho.shape}")


def weighted_inner(f: SpectralProfile, g: SpectralProfile) -> float:
    """⟨f, g⟩_m = ∫ f·g·e^{ρ²/4} dρ（梯形公式）"""
    _same_grid(f, g)
    return float(trapezoid(f.values * g.values * np.exp(f.rho ** 2 / 4.0), f.rho))


def weighted_norm(f: SpectralProfile) -> float:
    return math.sqrt(max(weighted_inner(f, f), 0.0))


def rho_derivative(f: SpectralProfile) -> SpectralProfile:
    return f.with_values(np.gradient(f.values, f.d_rho, edge_order=2))


def operator_L(f: SpectralProfile) -> SpectralProfile:
    """𝓛f = f″ + (ρ/2)f′ + f；内部中心差分，端点二阶单侧差分"""
    v = f.values
    h = f.d_rho
    second = np.empty_like(v)
    second[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h ** 2
    second[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h ** 2
    second[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h ** 2
    first = np.gradient(v, h, edge_order=2)
    return f.with_values(second + 0.5 * f.rho * first + v)


def project_Q(f: SpectralProfile) -> SpectralProfile:
    """Qf = f − ⟨f, φ₁⟩_m φ₁"""
    phi1 = eigenfunction(1, f.rho)
    return f.with_values(f.values - weighted_inner(f, phi1) * phi1.values)


def poincare_ratio(f: SpectralProfile) -> float:
    """‖f‖_m / ‖∂_ρ f‖_m"""
    return weighted_norm(f) / weighted_norm(rho_derivative(f))


def _bump(y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    inside = np.abs(y) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - y[inside] ** 2))
    return out


def default_zeta0(rho: np.ndarray) -> SpectralProfile:
    """C∞ 鼓包 exp(1 − 1/(1 − (ρ−1)²))，支撑 (0, 2)"""
    return SpectralProfile(rho=rho, values=_bump(rho - 1.0))


def orthogonal_zeta0(rho: np.ndarray) -> SpectralProfile:
    """两个鼓包之差，一阶矩为零，从而与 φ₁ 正交"""
    near = _bump(rho - 1.0)
    far = _bump(rho - 2.5)
    scale = trapezoid(near * rho, rho) / trapezoid(far * rho, rho)
    return SpectralProfile(rho=rho, values=near - scale * far)


def first_moment(zeta0: SpectralProfile) -> float:
    return float(trapezoid(zeta0.values * zeta0.rho, zeta0.rho))


def asymptotic_leading(t, xi, p: DirichletParams, zeta0_moment: float, weighted: bool = False):
    """z 的主导项 ((t+t0)^{γ−1/2}/t0^γ)·ξ·e^{−λ*ξ}·M/(2√π)·e^{−ξ²/(4(t+t0))}

    weighted=True 时返回 w = e^{λ*ξ} z，避免大 ξ 处下溢。
    """
    xi = np.asarray(xi, dtype=np.float64)
    s = t + p.t0
    prefactor = s ** (p.gamma - 0.5) / p.t0 ** p.gamma * zeta0_moment / (2.0 * math.sqrt(math.pi))
    w = prefactor * xi * np.exp(-xi ** 2 / (4.0 * s))
    if weighted:
        return w
    with np.errstate(under='ignore'):
        return w * np.exp(-p.lambda_star * xi)


def remainder_envelopes(p: DirichletParams, zeta0: SpectralProfile, t: float) -> Dict[str, float]:
    """h₁、h₂ 界的形状（常数取 1）"""
    norm = zeta0.weighted_norm
    return {
        'h1': norm / math.sqrt(p.t0),
        'h2': norm * p.t0 ** 0.25 / math.sqrt(t + p.t0),
    }


def solve_linear_drift(p: DirichletParams, zeta0: SpectralProfile, t_end: float,
                       dxi: float = 0.5, times: Optional[Sequence[float]] = None) -> DirichletSolution:
    """显式有限差分求解 w = e^{λ*ξ}z 满足的方程

    w_t = w_ξξ + β w_ξ − λ*β w，β = −δ/(t+t0) + (N−1)/(ξ+ξ_front(t))，
    漂移项迎风，两端 Dirichlet 零边界，dt ≤ 0.4·dξ²。
    """
    xi_max = 10.0 * math.sqrt(t_end + p.t0)
    n = int(math.ceil(xi_max / dxi)) + 1
    xi = dxi * np.arange(n)
    w = np.interp(xi / math.sqrt(p.t0), zeta0.rho, zeta0.values, left=0.0, right=0.0)
    w[0] = 0.0
    w[-1] = 0.0

    output_times = sorted(set([0.0, float(t_end)] + [float(t) for t in (times or [])]))
    dt_max = 0.4 * dxi ** 2
    lam = p.lambda_star
    inner_xi = xi[1:-1]

    frames: List[np.ndarray] = [w.copy()]
    t = 0.0
    for t_next in output_times[1:]:
        interval = t_next - t
        n_sub = max(1, int(math.ceil(interval / dt_max - 1e-12)))
        dt = interval / n_sub
        for _ in range(n_sub):
            s = t + p.t0
            beta = -p.delta / s
            if p.dim_N > 1:
                xi_front = p.c_star * s - p.delta * math.log(s / p.t0)
                beta = beta + (p.dim_N - 1) / (inner_xi + xi_front)
            forward = (w[2:] - w[1:-1]) / dxi
            backward = (w[1:-1] - w[:-2]) / dxi
            if np.ndim(beta) == 0:
                drift = forward if beta > 0 else backward
            else:
                drift = np.where(beta > 0, forward, backward)
            diffusion = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / dxi ** 2
            w[1:-1] = w[1:-1] + dt * (diffusion + beta * drift - lam * beta * w[1:-1])
            t += dt
        t = t_next
        if not np.all(np.isfinite(w)):
            raise InstabilityError("线性漂移方程求解出现 NaN/Inf", t=t, node=int(np.argwhere(~np.isfinite(w))[0][0]))
        frames.append(w.copy())
        logger.debug(f"线性漂移方程 t={t:.6g} 完成")

    return DirichletSolution(params=p, xi=xi, times=np.array(output_times), w=np.array(frames))


def to_self_similar(solution: DirichletSolution, t: float, rho: np.ndarray) -> SpectralProfile:
    """(t, ξ) → (τ, ρ)：ζ(τ, ρ) = e^{−γτ}·w(t, ρ√(t+t0))"""
    p = solution.params
    s = t + p.t0
    tau = math.log(s / p.t0)
    w = np.interp(rho * math.sqrt(s), solution.xi, solution.w_at(t), right=0.0)
    return SpectralProfile(rho=rho, values=math.exp(-p.gamma * tau) * w, check_tail=False)


def numeric_vs_asymptotic(solution: DirichletSolution, t: float, zeta0_moment: float) -> float:
    """ξ ∈ [1, √(t+t0)] 上的逐点最大相对误差（在 w 变量中计算，比值与 z 相同）"""
    p = solution.params
    mask = (solution.xi >= 1.0) & (solution.xi <= math.sqrt(t + p.t0))
    numeric = solution.w_at(t)[mask]
    asymptotic = asymptotic_leading(t, solution.xi[mask], p, zeta0_moment, weighted=True)
    return float(np.max(np.abs(numeric - asymptotic) / np.abs(asymptotic)))


def random_test_function(rho: np.ndarray, rng: np.random.Generator, n_bumps: int = 3) -> SpectralProfile:
    """ρ·Σ 高斯鼓包，满足 f(0)=0 且尾部快速衰减"""
    values = np.zeros_like(rho)
    for _ in range(n_bumps):
        center = rng.uniform(0.5, 3.0)
        width = rng.uniform(0.8, 1.2)
        values += rng.uniform(-1.0, 1.0) * np.exp(-(rho - center) ** 2 / (2.0 * width ** 2))
    return SpectralProfile(rho=rho, values=rho * values)


def _normalized(f: SpectralProfile) -> SpectralProfile:
    return f.with_values(f.values / weighted_norm(f))


def spectral_checks(seed: int = 0, n_pairs: int = 20, n_poincare: int = 200) -> Dict:
    """特征关系、自伴性、Poincaré 不等式与归一化的数值检查"""
    rng = np.random.default_rng(seed)
    coarse = rho_grid(0.01)
    fine = rho_grid(0.005)

    phi1_coarse = eigenfunction(1, coarse)
    phi1_residual = float(np.max(np.abs(operator_L(phi1_coarse).values)))
    eigen_residuals = {}
    for k in (1, 2, 3):
        phi = eigenfunction(k, fine)
        residual = phi.with_values(operator_L(phi).values + (k - 1) * phi.values)
        eigen_residuals[str(k)] = weighted_norm(residual) / weighted_norm(phi)

    defect = 0.0
    for _ in range(n_pairs):
        f = _normalized(random_test_function(fine, rng))
        g = _normalized(random_test_function(fine, rng))
        defect = max(defect, abs(weighted_inner(operator_L(f), g) - weighted_inner(f, operator_L(g))))

    ratios = [poincare_ratio(random_test_function(fine, rng)) for _ in range(n_poincare)]

    report = {
        'phi1_residual_max': phi1_residual,
        'eigen_residuals': eigen_residuals,
        'phi1_norm_squared': weighted_inner(eigenfunction(1, fine), eigenfunction(1, fine)),
        'self_adjoint_defect': defect,
        'poincare_max_ratio': float(max(ratios)),
        'poincare_samples': n_poincare,
    }
    report['passed'] = bool(
        phi1_residual < 1e-4
        and eigen_residuals['2'] < 1e-3 and eigen_residuals['3'] < 1e-3
        and defect < 1e-4
        and report['poincare_max_ratio'] <= 1.0
        and abs(report['phi1_norm_squared'] - 1.0) < 1e-6
    )
    return report


def spectral_gap_verdict(slope: float, max_projection: float, zeta0_norm: float, t0: float,
                         delta: float) -> Dict:
    """谱间隙判据

    ‖Qζ‖²_m 至少按 e^{−(2 − c/√t0)τ} 衰减，c = GAP_SLACK·δ；
    φ₁ 方向的投影不超过 PROJECTION_SLACK·δ·‖ζ₀‖_m/√t0。
    漂移扰动 −δ/√(t+t0)·∂_ρ 对衰减率的最坏影响是 2√2·δ/√t0。
    """
    slope_bound = -(2.0 - GAP_SLACK * delta / math.sqrt(t0))
    projection_bound = PROJECTION_SLACK * delta * zeta0_norm / math.sqrt(t0)
    decay_ok = slope <= slope_bound
    projection_ok = max_projection <= projection_bound
    return {
        'slope_bound': slope_bound,
        'projection_bound': projection_bound,
        'decay_ok': bool(decay_ok),
        'projection_ok': bool(projection_ok),
        'passed': bool(decay_ok and projection_ok),
    }


def spectral_gap_fit(m: ModelParams, t0: float = 400.0, dxi: float = 0.5,
                     taus: Sequence[float] = (1.0, 1.5, 2.0, 2.5, 3.0)) -> Dict:
    """φ₁ 正交初值：拟合 ln‖Qζ(τ)‖²_m 对 τ 的斜率，并记录 φ₁ 方向的最大投影"""
    p = dirichlet_params(m, t0)
    rho = rho_grid(0.01)
    zeta0 = orthogonal_zeta0(rho)
    times = [t0 * (math.exp(tau) - 1.0) for tau in taus]
    solution = solve_linear_drift(p, zeta0, times[-1], dxi=dxi, times=times)
    phi1 = eigenfunction(1, rho)
    norms, projections = [], []
    for t in times:
        zeta = to_self_similar(solution, t, rho)
        projections.append(abs(weighted_inner(zeta, phi1)))
        norms.append(weighted_norm(project_Q(zeta)) ** 2)
    slope = float(np.polyfit(np.array(taus), np.log(np.array(norms)), 1)[0])
    fit = {
        't0': t0,
        'delta': p.delta,
        'taus': list(taus),
        'q_norm_squared': [float(v) for v in norms],
        'slope': slope,
        'max_projection': float(max(projections)),
        'zeta0_norm': zeta0.weighted_norm,
    }
    fit.update(spectral_gap_verdict(slope, fit['max_projection'], fit['zeta0_norm'], t0, p.delta))
    logger.info(f"谱间隙拟合: t0={t0}, slope={slope:.4f} (上限 {fit['slope_bound']:.4f}), "
                f"max_projection={fit['max_projection']:.3e} (上限 {fit['projection_bound']:.3e})")
    return fit
