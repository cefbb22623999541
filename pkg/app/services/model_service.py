"""模型参数、导出量（传播速度、平衡点）与区域分类"""
import math
import logging
from typing import List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from app.core.errors import ParameterDomainError
from app.models.schemas import (
    CoexistenceState, DerivedSpeeds, DimensionalParams, DriftCoefficients, ModelParams,
    Regime, SteadyState, SufficientCondition,
)

logger = logging.getLogger('frontwave')

FIGURE_LABELS = {
    1: "High conversion rate case, a>1+s",
    2: "High conversion rate case, a<1+s",
    3: "Low conversion rate case, a>1+s",
    4: "Low conversion rate case, a<1+s",
}


def nondimensionalize(p: DimensionalParams, dim_N: int = 1) -> ModelParams:
    """(D, D_h, r_f, r_c, r_h, K, L, e) -> (a, b, s, g, d)"""
    if not isinstance(p, DimensionalParams):
        try:
            p = DimensionalParams(**dict(p))
        except ValidationError as e:
            raise ParameterDomainError(f"量纲参数无效: {e.errors()[0]['msg']}")
    try:
        return ModelParams(
            a=p.r_f / p.r_c,
            b=p.r_h / p.r_c,
            s=p.e_conv * p.L / p.r_c,
            g=p.e_conv * p.K / p.r_h,
            d=p.D_h / p.D,
            dim_N=dim_N,
        )
    except ValidationError as e:
        raise ParameterDomainError(f"无量纲参数无效: {e.errors()[0]['msg']}")


def spreading_speeds(m: ModelParams) -> DerivedSpeeds:
    fast = 2.0 * math.sqrt(m.a)
    slow = 2.0 * math.sqrt(1.0 + m.s)
    c_star = max(fast, slow)
    return DerivedSpeeds(c_star=c_star, c_star_star=min(fast, slow), lambda_star=c_star / 2.0)


def coexistence_state(m: ModelParams) -> Optional[CoexistenceState]:
    if m.g >= 1:
        return None
    denominator = 1.0 + m.s * m.g
    return CoexistenceState(C_star=(1.0 + m.s) / denominator, H_star=(1.0 - m.g) / denominator)


def ode_residual(state: Tuple[float, float, float], m: ModelParams) -> np.ndarray:
    """空间常数态的反应项 (F, C, H) 导数"""
    F, C, H = state
    total = F + C
    return np.array([
        m.a * F * (1.0 - total),
        C * (1.0 - total) + m.s * H * total,
        m.b * H * (1.0 - H - m.g * total),
    ])


def steady_states(m: ModelParams) -> List[SteadyState]:
    states = [
        SteadyState(label='extinction', kind='point', F=0.0, C=0.0, H=0.0,
                    stability='unstable (the first two states are unstable)'),
        SteadyState(label='hunter-gatherers only', kind='point', F=0.0, C=0.0, H=1.0,
                    stability='unstable (the first two states are unstable)'),
        SteadyState(label='farmers only', kind='line', F=0.0, C=1.0, H=0.0,
                    stability='stable if g>=1'),
    ]
    coexistence = coexistence_state(m)
    if coexistence is not None:
        states.append(SteadyState(label='coexistence', kind='point', F=0.0,
                                  C=coexistence.C_star, H=coexistence.H_star,
                                  stability='stable if and only if g<1'))
    return states


def conversion_class(m: ModelParams) -> str:
    return 'High' if m.g >= 1 else 'Low'


def front_order(m: ModelParams) -> str:
    threshold = 1.0 + m.s
    if m.a > threshold:
        return 'F_fast'
    if m.a < threshold:
        return 'F_slow'
    return 'Degenerate'


def classify_regime(m: ModelParams) -> Regime:
    conversion = conversion_class(m)
    order = front_order(m)
    column = 0 if order == 'F_fast' else 1
    figure = (1 if conversion == 'High' else 3) + column
    return Regime(conversion=conversion, front_order=order, waveform_figure=figure)


def fig_label(regime: Regime) -> str:
    return FIGURE_LABELS[regime.waveform_figure]


def log_drift_coefficient(m: ModelParams) -> DriftCoefficients:
    """对数漂移系数：位置 ≈ c*t − k·ln t"""
    speeds = spreading_speeds(m)
    c_star = speeds.c_star
    N = m.dim_N
    order = front_order(m)
    if order == 'F_fast':
        return DriftCoefficients(branch=order, c_star=c_star,
                                 k_FC=(N + 2) * c_star / min(1.0, m.a),
                                 k_up=(N + 2) / (2.0 * speeds.lambda_star),
                                 k_H_lower=(N + 2) / c_star)
    if order == 'F_slow':
        return DriftCoefficients(branch=order, c_star=c_star,
                                 k_C=(N + 2) / c_star,
                                 k_H_lower=(N + 2) / c_star)
    return DriftCoefficients(branch=order, c_star=c_star,
                             k_FC=(N + 2) / c_star,
                             k_H_lower=N / c_star)


def coexistence_sufficient_condition(m: ModelParams) -> SufficientCondition:
    if m.g >= 1:
        raise ParameterDomainError(f"充分条件只对低转化率 g<1 定义，当前 g={m.g}")
    low = min(1.0, m.a)
    conversion_threshold = low / (low + m.s)
    motility_threshold = spreading_speeds(m).c_star / (1.0 - m.g)
    motility_product = m.b * m.d
    branch = None
    if m.g < conversion_threshold:
        branch = 'conversion'
    elif motility_product >= motility_threshold:
        branch = 'motility'
    return SufficientCondition(holds=branch is not None, branch=branch,
                               conversion_threshold=conversion_threshold,
                               motility_product=motility_product,
                               motility_threshold=motility_threshold)


def reaction_bound(m: ModelParams, initial_sup: float = 0.0) -> float:
    """F+C 的先验上界 M = max(sup(F0+C0), (max{1,a}+s)/min{1,a})"""
    return max(initial_sup, (max(1.0, m.a) + m.s) / min(1.0, m.a))


def final_zone_targets(m: ModelParams) -> dict:
    """各区域在 ‖x‖ ≤ 0.5·c*t 内的预期极限"""
    coexistence = coexistence_state(m)
    if coexistence is None:
        return {'FC': 1.0, 'H': 0.0}
    return {'F': 0.0, 'C': coexistence.C_star, 'H': coexistence.H_star}


def discrete_spreading_speed(m: ModelParams, dr: float) -> float:
    """中心差分半离散格式的线性传播速度 min_λ (2(cosh λdr − 1)/dr² + f′(0))/λ"""
    from scipy.optimize import minimize_scalar

    growth = max(m.a, 1.0 + m.s)

    def speed(lam):
        return (2.0 * (math.cosh(lam * dr) - 1.0) / dr ** 2 + growth) / lam

    guess = math.sqrt(growth)
    result = minimize_scalar(speed, bounds=(guess / 4.0, guess * 4.0), method='bounded',
                             options={'xatol': 1e-12})
    return float(result.fun)
