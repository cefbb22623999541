"""携带 numpy 数组的数据容器

标量配置用 pydantic（schemas.py），数组场用 dataclass。
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.core.errors import SpectralDomainError
from app.models.schemas import (
    AuditRecord, DirichletParams, ModelParams, RadialGrid, SimConfig, TRACKED_FIELDS,
)

COMPONENTS = ('F', 'C', 'H')

# 只记录裕量、不计入失败的审计项
INFORMATIONAL_AUDITS = ('leading_edge_fc', 'leading_edge_h')


@dataclass(frozen=True)
class FieldState:
    """某一时刻网格上的 (F, C, H)，u 的形状为 (3, n_points)"""
    t: float
    grid: RadialGrid
    u: np.ndarray

    @classmethod
    def from_components(cls, t, grid, F, C, H) -> 'FieldState':
        return cls(t=float(t), grid=grid, u=np.stack([np.asarray(F, dtype=np.float64),
                                                      np.asarray(C, dtype=np.float64),
                                                      np.asarray(H, dtype=np.float64)]))

    @property
    def r(self) -> np.ndarray:
        return self.grid.nodes()

    @property
    def F(self) -> np.ndarray:
        return self.u[0]

    @property
    def C(self) -> np.ndarray:
        return self.u[1]

    @property
    def H(self) -> np.ndarray:
        return self.u[2]

    @property
    def FC(self) -> np.ndarray:
        return self.u[0] + self.u[1]

    def component(self, name: str) -> np.ndarray:
        if name == 'FC':
            return self.FC
        return self.u[COMPONENTS.index(name)]


@dataclass
class FrontSeries:
    """逐快照的水平集位置；缺失记为 NaN"""
    levels: Tuple[float, ...]
    fields: Tuple[str, ...] = TRACKED_FIELDS
    times: List[float] = field(default_factory=list)
    positions: Dict[Tuple[str, float], List[float]] = field(default_factory=dict)

    def append(self, t: float, found: Dict[Tuple[str, float], Optional[float]]):
        self.times.append(float(t))
        for name in self.fields:
            for level in self.levels:
                value = found.get((name, level))
                self.positions.setdefault((name, level), []).append(
                    np.nan if value is None else float(value))

    def series(self, name: str, level: float) -> Tuple[np.ndarray, np.ndarray]:
        t = np.asarray(self.times, dtype=np.float64)
        x = np.asarray(self.positions.get((name, level), [np.nan] * len(t)), dtype=np.float64)
        return t, x

    def samples(self, name: str, level: float, window: Optional[Tuple[float, float]] = None):
        """窗口内存在的样本 (t, x)"""
        t, x = self.series(name, level)
        mask = np.isfinite(x)
        if window is not None:
            mask &= (t >= window[0]) & (t <= window[1])
        return t[mask], x[mask]

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class SpectralProfile:
    """自相似变量 ρ 网格上的函数样本，配 e^{ρ²/4} 加权范数"""
    rho: np.ndarray
    values: np.ndarray
    check_tail: bool = True

    def __post_init__(self):
        if self.rho.shape != self.values.shape:
            raise ValueError(f"rho 与 values 形状不一致: {self.rho.shape} vs {self.values.shape}")
        if self.check_tail:
            tail = self.rho >= self.rho[-1] - 2.0
            peak = float(np.max(np.abs(self.values))) if self.values.size else 0.0
            decay = np.abs(self.values[tail]) * np.exp(self.rho[tail] ** 2 / 8.0)
            if peak > 0 and np.any(decay > peak):
                raise SpectralDomainError(
                    f"剖面在 ρ ≥ {self.rho[-1] - 2.0:.3g} 处衰减慢于 e^(-ρ²/8)，加权范数不可控")

    @property
    def d_rho(self) -> float:
        return float(self.rho[1] - self.rho[0])

    @property
    def weighted_norm(self) -> float:
        from scipy.integrate import trapezoid
        return float(np.sqrt(trapezoid(self.values ** 2 * np.exp(self.rho ** 2 / 4.0), self.rho)))

    def with_values(self, values: np.ndarray, check_tail: bool = False) -> 'SpectralProfile':
        return SpectralProfile(rho=self.rho, values=values, check_tail=check_tail)


@dataclass
class SimulationResult:
    config: SimConfig
    snapshots: List[FieldState]
    fronts: FrontSeries
    audits: List[AuditRecord]
    steps: int
    dt: float

    @property
    def final(self) -> FieldState:
        return self.snapshots[-1]

    @property
    def failed_audits(self) -> List[AuditRecord]:
        return [record for record in self.audits
                if not record.passed and record.invariant_id not in INFORMATIONAL_AUDITS]

    @property
    def audit_ok(self) -> bool:
        return not self.failed_audits

    def snapshot_at(self, t: float) -> FieldState:
        """与 t 最接近的快照"""
        times = np.array([s.t for s in self.snapshots])
        return self.snapshots[int(np.argmin(np.abs(times - t)))]


@dataclass
class OdeTrajectory:
    params: ModelParams
    t: np.ndarray
    C: np.ndarray
    H: np.ndarray

    @property
    def final(self) -> Tuple[float, float]:
        return float(self.C[-1]), float(self.H[-1])


@dataclass
class DirichletSolution:
    """线性漂移方程在 (t, ξ) 上的数值解；存储 w = e^{λ*ξ} z"""
    params: DirichletParams
    xi: np.ndarray
    times: np.ndarray
    w: np.ndarray

    def w_at(self, t: float) -> np.ndarray:
        return self.w[int(np.argmin(np.abs(self.times - t)))]

    def z_at(self, t: float) -> np.ndarray:
        with np.errstate(under='ignore'):
            return np.exp(-self.params.lambda_star * self.xi) * self.w_at(t)
