"""闭式上/下解包络及其对模拟结果的逐点审计"""
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np

from app.models.fields import FieldState, SimulationResult
from app.models.schemas import (
    DerivedSpeeds, EnvelopeConstants, EnvelopeReport, EnvelopeViolation, ModelParams,
)
from app.services.model_service import spreading_speeds

logger = logging.getLogger('frontwave')

AUDIT_SPEED_FACTOR = 1.05
SAFETY_FACTOR = 2.0
AMPLITUDE_FLOOR = 1e-6
TOL_ABS = 1e-8
TOL_REL = 1e-6


def _exp(x):
    with np.errstate(over='ignore', under='ignore'):
        return np.exp(x)


def super_F(t, r, k: EnvelopeConstants, speeds: DerivedSpeeds):
    """A1·e^{−c*(r − c*t)/2}"""
    c = speeds.c_star
    return k.A1 * _exp(-c * (np.asarray(r) - c * t) / 2.0)


def super_F_star(t, r, A_star: float, a: float):
    """A*·e^{−√a(r − 2√a·t)}，用于 a < 1+s"""
    root = math.sqrt(a)
    return A_star * _exp(-root * (np.asarray(r) - 2.0 * root * t))


def super_C(t, r, k: EnvelopeConstants, speeds: DerivedSpeeds, c_audit: float):
    """A2·e^{−(c*/2)(r − c_audit·t)}"""
    return k.A2 * _exp(-speeds.lambda_star * (np.asarray(r) - c_audit * t))


def sub_H(t, r, k: EnvelopeConstants, speeds: DerivedSpeeds, g: float, d: float, c_audit: float):
    """max(0, 1 − g(A1+A2)e^{−c*(r − c_audit·t)/(2d)})"""
    decay = _exp(-speeds.c_star * (np.asarray(r) - c_audit * t) / (2.0 * d))
    return np.maximum(0.0, 1.0 - g * (k.A1 + k.A2) * decay)


def _minimal_amplitude(values: np.ndarray, rate: float, r: np.ndarray) -> float:
    """max u·e^{rate·r}，只在 u > 0 处求值（远处 e^{rate·r} 会溢出）"""
    positive = values > 0
    if not np.any(positive):
        return 0.0
    return float(np.max(values[positive] * _exp(rate * r[positive])))


def choose_constants(state0: FieldState, m: ModelParams, c_audit: Optional[float] = None) -> EnvelopeConstants:
    """在网格上选取使 t=0 包络有序的最小振幅，再乘安全系数 2"""
    speeds = spreading_speeds(m)
    c_star = speeds.c_star
    lam = speeds.lambda_star
    c_audit = c_audit or AUDIT_SPEED_FACTOR * c_star
    r = state0.r

    a1_minimal = _minimal_amplitude(state0.F, c_star / 2.0, r)
    a_star_minimal = _minimal_amplitude(state0.F, math.sqrt(m.a), r)
    A1 = SAFETY_FACTOR * a1_minimal if a1_minimal > 0 else AMPLITUDE_FLOOR
    A_star = SAFETY_FACTOR * a_star_minimal if a_star_minimal > 0 else AMPLITUDE_FLOOR

    # C 上解需要 κ·A2 ≥ s·A1，κ = c·λ − λ² − (1+s) > 0
    kappa = c_audit * lam - lam ** 2 - (1.0 + m.s)
    A2 = SAFETY_FACTOR * m.s * A1 / kappa
    if m.a > 1.0 + m.s:
        A2 = max(A2, SAFETY_FACTOR * m.s * A1 / (m.a - 1.0 - m.s))
    # C0 ≡ 0 外还需 g(A1+A2) > 1，使 H 下解在波前后方截断为 0
    if m.g * (A1 + A2) <= 1.0:
        A2 = SAFETY_FACTOR / m.g - A1
    A2 = max(A2, AMPLITUDE_FLOOR)
    C0_minimal = _minimal_amplitude(state0.C, lam, r)
    A2 = max(A2, SAFETY_FACTOR * C0_minimal)

    constants = EnvelopeConstants(A1=A1, A2=A2, A_star=A_star, c_audit=c_audit, a1_minimal=a1_minimal)
    logger.debug(f"包络常数: A1={A1:.6g}, A2={A2:.6g}, A*={A_star:.6g}, c_audit={c_audit:.6g}")
    return constants


def negative_control(k: EnvelopeConstants) -> EnvelopeConstants:
    """把 A1 取为最小可行振幅的一半"""
    return k.model_copy(update={'A1': max(k.a1_minimal / 2.0, AMPLITUDE_FLOOR)})


def _tolerance(value: np.ndarray) -> np.ndarray:
    return TOL_ABS + TOL_REL * np.abs(value)


def audit_snapshot(state: FieldState, m: ModelParams, k: EnvelopeConstants, c_audit: float) -> List[EnvelopeViolation]:
    speeds = spreading_speeds(m)
    t, r = state.t, state.r
    violations: List[EnvelopeViolation] = []

    def collect(field, margin, mask=None):
        bad = margin < 0
        if mask is not None:
            bad &= mask
        for i in np.nonzero(bad)[0]:
            violations.append(EnvelopeViolation(t=t, r=float(r[i]), field=field, margin=float(margin[i])))

    bound_F = super_F(t, r, k, speeds)
    collect('F', bound_F + _tolerance(bound_F) - state.F)
    if m.a < 1.0 + m.s:
        bound_star = super_F_star(t, r, k.A_star, m.a)
        collect('F_star', bound_star + _tolerance(bound_star) - state.F)
    bound_C = super_C(t, r, k, speeds, c_audit)
    collect('C', bound_C + _tolerance(bound_C) - state.C)
    bound_H = sub_H(t, r, k, speeds, m.g, m.d, c_audit)
    margin_H = state.H - bound_H + _tolerance(bound_H)
    collect('H', margin_H, None if m.d == 1 else r >= c_audit * t)
    return violations


def audit_envelopes(sim: SimulationResult, k: EnvelopeConstants, c_audit: Optional[float] = None,
                    workers: int = 1) -> EnvelopeReport:
    """逐快照、逐节点检查 F ≤ F̄、C ≤ C̄ 与 H ≥ H̲（a < 1+s 时另查 F ≤ F̄*）；违例按 (t, r) 排序返回"""
    m = sim.config.params
    c_audit = c_audit or k.c_audit

    def audit(state):
        return audit_snapshot(state, m, k, c_audit)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            chunks = list(executor.map(audit, sim.snapshots))
    else:
        chunks = [audit(state) for state in sim.snapshots]

    violations = sorted((v for chunk in chunks for v in chunk), key=lambda v: (v.t, v.r))
    report = EnvelopeReport(constants=k, c_audit=c_audit,
                            h_audit='global' if m.d == 1 else 'leading_edge_only',
                            n_checked=len(sim.snapshots) * sim.config.grid.n_points,
                            violations=violations)
    if violations:
        logger.info(f"包络审计发现 {len(violations)} 处违例，首个: field={violations[0].field}, "
                    f"t={violations[0].t:.6g}, r={violations[0].r:.6g}")
    return report
