"""波前位置提取、速度估计、对数漂移拟合与区域统计"""
import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from app.core.errors import EmptyZoneError, InsufficientSamplesError
from app.models.fields import FieldState, FrontSeries
from app.models.schemas import DriftFit, SpeedEstimate, TRACKED_FIELDS, ZoneStats

logger = logging.getLogger('frontwave')

MIN_SPEED_SAMPLES = 10
MIN_DRIFT_SAMPLES = 20
DRIFT_MIN_TIME = 10.0


def level_set_position(profile: np.ndarray, m: float, dr: float) -> Optional[float]:
    """最右侧下降穿越点：profile_i ≥ m > profile_{i+1}，节点间线性插值"""
    profile = np.asarray(profile)
    hits = np.nonzero((profile[:-1] >= m) & (profile[1:] < m))[0]
    if hits.size == 0:
        return None
    i = int(hits[-1])
    frac = (profile[i] - m) / (profile[i] - profile[i + 1])
    return (i + frac) * dr


def upward_crossing_position(profile: np.ndarray, m: float, dr: float) -> Optional[float]:
    """最右侧上升穿越点：profile_i < m ≤ profile_{i+1}（H 在波前前方回升到 1）"""
    profile = np.asarray(profile)
    hits = np.nonzero((profile[:-1] < m) & (profile[1:] >= m))[0]
    if hits.size == 0:
        return None
    i = int(hits[-1])
    frac = (m - profile[i]) / (profile[i + 1] - profile[i])
    return (i + frac) * dr


def front_positions(state: FieldState, levels: Sequence[float],
                    fields: Sequence[str] = TRACKED_FIELDS) -> Dict[Tuple[str, float], Optional[float]]:
    dr = state.grid.dr
    found = {}
    for name in fields:
        profile = state.component(name)
        locate = upward_crossing_position if name == 'H' else level_set_position
        for level in levels:
            found[(name, level)] = locate(profile, level, dr)
    return found


def default_window(series: FrontSeries) -> Tuple[float, float]:
    """缺省拟合窗口：运行的后一半"""
    if not series.times:
        return 0.0, 0.0
    t_end = max(series.times)
    return t_end / 2.0, t_end


def speed_estimate(series: FrontSeries, field: str, m: float,
                   window: Optional[Tuple[float, float]] = None) -> SpeedEstimate:
    """窗口内 x_m(t) 对 t 的最小二乘斜率"""
    window = window or default_window(series)
    t, x = series.samples(field, m, window)
    if t.size < MIN_SPEED_SAMPLES:
        raise InsufficientSamplesError(
            f"速度估计至少需要 {MIN_SPEED_SAMPLES} 个样本，窗口 {window} 内只有 {t.size} 个 (field={field}, level={m})")
    fit = stats.linregress(t, x)
    return SpeedEstimate(field=field, level=m, c_hat=float(fit.slope), stderr=float(fit.stderr),
                         n_samples=int(t.size), window=(float(window[0]), float(window[1])))


def drift_fit(series: FrontSeries, field: str, m: float, c_star: float,
              window: Optional[Tuple[float, float]] = None) -> DriftFit:
    """固定 c = c*，拟合 c*t − x_m(t) ≈ k·ln t + b"""
    window = window or (DRIFT_MIN_TIME, max(series.times) if series.times else DRIFT_MIN_TIME)
    lo = max(window[0], DRIFT_MIN_TIME)
    t, x = series.samples(field, m, (lo, window[1]))
    if t.size < MIN_DRIFT_SAMPLES:
        raise InsufficientSamplesError(
            f"漂移拟合至少需要 {MIN_DRIFT_SAMPLES} 个 t≥{DRIFT_MIN_TIME:g} 的样本，实际 {t.size} 个 (field={field}, level={m})")
    lag = c_star * t - x
    design = np.column_stack([np.log(t), np.ones_like(t)])
    (k_hat, b_hat), *_ = np.linalg.lstsq(design, lag, rcond=None)
    residual = lag - design @ np.array([k_hat, b_hat])
    return DriftFit(field=field, level=m, c_hat=float(c_star), k_hat=float(k_hat), b_hat=float(b_hat),
                    residual_rms=float(np.sqrt(np.mean(residual ** 2))), n_samples=int(t.size),
                    window=(float(lo), float(window[1])))


def zone_stats(state: FieldState, c: float, c2: Optional[float] = None,
               exterior: bool = False) -> ZoneStats:
    """区域内各场的下确界与上确界

    c2 为 None 时为球 ‖x‖ ≤ ct（exterior=True 时为外部 ‖x‖ ≥ ct），否则为环 c·t ≤ ‖x‖ ≤ c2·t。
    """
    r = state.r
    t = state.t
    eps = 1e-12 * max(1.0, state.grid.r_max)
    if c2 is not None:
        kind, lo, hi = 'annulus', c * t, c2 * t
    elif exterior:
        kind, lo, hi = 'exterior', c * t, state.grid.r_max
    else:
        kind, lo, hi = 'ball', 0.0, c * t
    mask = (r >= lo - eps) & (r <= hi + eps)
    if not np.any(mask):
        raise EmptyZoneError(f"{kind} 区域 [{lo:.6g}, {hi:.6g}] 与网格无交集 (t={t:.6g})")
    inf, sup = {}, {}
    for name in TRACKED_FIELDS:
        values = state.component(name)[mask]
        inf[name] = float(values.min())
        sup[name] = float(values.max())
    return ZoneStats(t=t, kind=kind, r_low=float(lo), r_high=float(hi), n_nodes=int(mask.sum()),
                     inf=inf, sup=sup)


def peak_detect(profile_F: np.ndarray, front_position: float, dr: float) -> Tuple[float, float]:
    """r ≥ 0.8·front_position 范围内 F 的最大值及其位置"""
    r = dr * np.arange(len(profile_F))
    start = int(np.searchsorted(r, 0.8 * front_position - 1e-12))
    start = min(start, len(profile_F) - 1)
    window = np.asarray(profile_F)[start:]
    i = int(np.argmax(window))
    return float(window[i]), float(r[start + i])


def series_to_rows(series: FrontSeries) -> List[Tuple[float, str, float, float]]:
    """fronts.csv 行 (t, field, level, position)，缺失位置不输出"""
    rows = []
    for k, t in enumerate(series.times):
        for name in series.fields:
            for level in series.levels:
                position = series.positions[(name, level)][k]
                if np.isfinite(position):
                    rows.append((t, name, level, position))
    return rows


def series_from_rows(rows: Iterable[Tuple[float, str, float, float]]) -> FrontSeries:
    rows = list(rows)
    levels = tuple(sorted({float(row[2]) for row in rows}))
    names = {row[1] for row in rows}
    fields = tuple(name for name in TRACKED_FIELDS if name in names)
    by_time: Dict[float, Dict[Tuple[str, float], float]] = {}
    for t, name, level, position in rows:
        by_time.setdefault(float(t), {})[(name, float(level))] = float(position)
    series = FrontSeries(levels=levels, fields=fields)
    for t in sorted(by_time):
        series.append(t, by_time[t])
    return series
