from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Optional, List, Dict, Literal, Tuple
import math

import numpy as np

FieldName = Literal['F', 'C', 'H', 'FC']
TRACKED_FIELDS: Tuple[str, ...] = ('F', 'C', 'H', 'FC')


class DimensionalParams(BaseModel):
    """原始量纲参数（七个正参数 + 转化率）"""
    model_config = ConfigDict(frozen=True)

    D: float = Field(gt=0, description="农民扩散系数")
    D_h: float = Field(gt=0, description="狩猎采集者扩散系数")
    r_f: float = Field(gt=0)
    r_c: float = Field(gt=0)
    r_h: float = Field(gt=0)
    K: float = Field(gt=0)
    L: float = Field(gt=0)
    e_conv: float = Field(gt=0, description="转化率")

    @model_validator(mode='after')
    def check_motility(self):
        if self.D_h < self.D:
            raise ValueError(f"需要 D_h ≥ D (d≥1)，当前 D_h={self.D_h}, D={self.D}")
        return self


class ModelParams(BaseModel):
    """无量纲参数 (a, b, s, g, d) 与空间维数 N"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    a: float = Field(gt=0)
    b: float = Field(gt=0)
    s: float = Field(gt=0)
    g: float = Field(gt=0)
    d: float = 1.0
    dim_N: int = Field(default=1, ge=1)

    @field_validator('d')
    @classmethod
    def check_d(cls, v):
        if not v >= 1:
            raise ValueError(f"d 必须满足 d≥1 (D_h ≥ D)，当前 d={v}")
        return v

    def with_updates(self, **changes) -> 'ModelParams':
        return ModelParams(**{**self.model_dump(), **changes})


class DerivedSpeeds(BaseModel):
    model_config = ConfigDict(frozen=True)

    c_star: float
    c_star_star: float
    lambda_star: float


class CoexistenceState(BaseModel):
    model_config = ConfigDict(frozen=True)

    C_star: float
    H_star: float


class Regime(BaseModel):
    model_config = ConfigDict(frozen=True)

    conversion: Literal['High', 'Low']
    front_order: Literal['F_fast', 'F_slow', 'Degenerate']
    waveform_figure: int = Field(ge=1, le=4)


class SteadyState(BaseModel):
    """ODE 稳态族；kind='line' 时 (F, C) 为 F+C=1 上参数 theta 对应的点"""
    model_config = ConfigDict(frozen=True)

    label: str
    kind: Literal['point', 'line']
    F: float
    C: float
    H: float
    stability: str

    def point(self, theta: float) -> Tuple[float, float, float]:
        if self.kind == 'point':
            return self.F, self.C, self.H
        if not 0.0 <= theta <= 1.0:
            raise ValueError(f"直线族参数 theta 必须在 [0, 1] 内，当前 {theta}")
        return theta, 1.0 - theta, 0.0


class DriftCoefficients(BaseModel):
    """对数漂移系数；未适用的分支为 None"""
    model_config = ConfigDict(frozen=True)

    branch: Literal['F_fast', 'F_slow', 'Degenerate']
    c_star: float
    k_FC: Optional[float] = None
    k_up: Optional[float] = None
    k_C: Optional[float] = None
    k_H_lower: Optional[float] = None


class SufficientCondition(BaseModel):
    model_config = ConfigDict(frozen=True)

    holds: bool
    branch: Optional[Literal['conversion', 'motility']] = None
    conversion_threshold: float
    motility_product: float
    motility_threshold: float


class RadialGrid(BaseModel):
    model_config = ConfigDict(frozen=True)

    dr: float = Field(gt=0)
    n_points: int = Field(ge=16)
    dim_N: int = Field(default=1, ge=1)

    @property
    def r_max(self) -> float:
        return self.dr * (self.n_points - 1)

    def nodes(self) -> np.ndarray:
        return self.dr * np.arange(self.n_points, dtype=np.float64)

    @classmethod
    def covering(cls, dr: float, r_max: float, dim_N: int = 1) -> 'RadialGrid':
        """覆盖 [0, r_max] 的最小均匀网格"""
        n_points = max(16, int(math.ceil(r_max / dr - 1e-9)) + 1)
        return cls(dr=dr, n_points=n_points, dim_N=dim_N)


class InitSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    amplitude: float = Field(default=1.0, gt=0)
    support_radius: float = Field(default=5.0, gt=0)
    profile: Literal['plateau-with-smooth-edge', 'flat-top'] = 'plateau-with-smooth-edge'


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    params: ModelParams
    grid: RadialGrid
    init: InitSpec = InitSpec()
    t_end: float = Field(ge=0)
    snapshot_dt: float = Field(default=5.0, gt=0)
    cfl_factor: float = Field(default=0.8, gt=0, lt=1)
    levels: Tuple[float, ...] = (0.05, 0.5)

    @model_validator(mode='after')
    def check_times(self):
        if self.t_end > 0 and self.snapshot_dt > self.t_end:
            raise ValueError(f"snapshot_dt 不能大于 t_end (snapshot_dt={self.snapshot_dt}, t_end={self.t_end})")
        if self.grid.dim_N != self.params.dim_N:
            raise ValueError(f"网格维数 {self.grid.dim_N} 与参数维数 {self.params.dim_N} 不一致")
        for level in self.levels:
            if not 0 < level < 1:
                raise ValueError(f"水平集 level 必须在 (0, 1) 内，当前 {level}")
        return self


class SpeedEstimate(BaseModel):
    field: str
    level: float
    c_hat: float
    stderr: float
    n_samples: int
    window: Tuple[float, float]


class DriftFit(BaseModel):
    field: str
    level: float
    c_hat: float
    k_hat: float
    b_hat: float
    residual_rms: float
    n_samples: int
    window: Tuple[float, float]


class ZoneStats(BaseModel):
    t: float
    kind: Literal['ball', 'annulus', 'exterior']
    r_low: float
    r_high: float
    n_nodes: int
    inf: Dict[str, float]
    sup: Dict[str, float]


class AuditRecord(BaseModel):
    """不变量审计记录；margin ≥ 0 表示满足"""
    t: float
    invariant_id: str
    margin: float
    passed: bool = True


class EnvelopeConstants(BaseModel):
    model_config = ConfigDict(frozen=True)

    A1: float = Field(gt=0)
    A2: float = Field(gt=0)
    A_star: float = Field(gt=0)
    c_audit: float = Field(gt=0)
    a1_minimal: float = Field(default=0.0, ge=0)


class EnvelopeViolation(BaseModel):
    t: float
    r: float
    field: Literal['F', 'F_star', 'C', 'H']
    margin: float


class EnvelopeReport(BaseModel):
    constants: EnvelopeConstants
    c_audit: float
    h_audit: Literal['global', 'leading_edge_only']
    n_checked: int
    violations: List[EnvelopeViolation] = []

    @property
    def ok(self) -> bool:
        return not self.violations


class OdeState(BaseModel):
    model_config = ConfigDict(frozen=True)

    C: float
    H: float


class LyapunovBatchReport(BaseModel):
    """多初值 ODE 轨道的 Lyapunov 检查汇总"""
    n_starts: int
    T: float
    dt: float
    max_phi_increase: float
    max_sigma_excursion: float
    max_final_distance: float
    phi_tolerance: float
    distance_tolerance: float

    @property
    def passed(self) -> bool:
        return (self.max_phi_increase <= self.phi_tolerance
                and self.max_sigma_excursion <= 1e-8
                and self.max_final_distance < self.distance_tolerance)


class DirichletParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    delta: float
    t0: float = Field(gt=0)
    lambda_star: float = Field(gt=0)
    dim_N: int = Field(default=1, ge=1)

    @property
    def gamma(self) -> float:
        return self.delta * self.lambda_star - (self.dim_N + 1) / 2.0

    @property
    def c_star(self) -> float:
        return 2.0 * self.lambda_star

    @model_validator(mode='after')
    def check_t0(self):
        if self.t0 < self.delta / (2.0 * self.lambda_star):
            raise ValueError(f"需要 t0 ≥ δ/(2λ*)，当前 t0={self.t0}, δ={self.delta}")
        return self


class MovingFrame(BaseModel):
    t: float
    t0: float
    delta: float
    xi_front: float

    @property
    def tau(self) -> float:
        return math.log((self.t + self.t0) / self.t0)


class GridSettings(BaseModel):
    """网格配置；r_max 缺省时按 c*·t_end·1.3+50 自动确定"""
    model_config = ConfigDict(extra='forbid')

    dr: float = Field(default=0.1, gt=0)
    r_max: Optional[float] = Field(default=None, gt=0)
    n_points: Optional[int] = Field(default=None, ge=16)


class RunSettings(BaseModel):
    model_config = ConfigDict(extra='forbid')

    t_end: Optional[float] = Field(default=None, ge=0)
    snapshot_dt: float = Field(default=5.0, gt=0)
    cfl_factor: float = Field(default=0.8, gt=0, lt=1)
    levels: List[float] = [0.05, 0.5]


class OdeSettings(BaseModel):
    model_config = ConfigDict(extra='forbid')

    C0: float = 0.1
    H0: float = 0.9
    T: float = Field(default=200.0, gt=0)
    dt: Optional[float] = Field(default=None, gt=0)
    n_random: int = Field(default=1000, ge=1)
    T_random: float = Field(default=500.0, gt=0)


class DirichletSettings(BaseModel):
    model_config = ConfigDict(extra='forbid')

    t0: float = Field(default=400.0, gt=0)
    tau: float = Field(default=3.0, gt=0)
    dxi: float = Field(default=0.5, gt=0)
    delta: Optional[float] = None
    t0_ladder: List[float] = [100.0, 400.0, 1600.0]
    zeta0: Literal['bump', 'orthogonal'] = 'bump'


class FitSettings(BaseModel):
    model_config = ConfigDict(extra='forbid')

    source_dir: Optional[str] = None
    field: FieldName = 'FC'
    level: float = 0.5
    window: Optional[Tuple[float, float]] = None


class VerifySettings(BaseModel):
    model_config = ConfigDict(extra='forbid')

    criteria: Optional[List[int]] = None
    dr: float = Field(default=0.1, gt=0)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: Literal['simulate', 'sweep', 'verify', 'ode', 'dirichlet', 'fit']
    params: Optional[ModelParams] = None
    sim: Optional[SimConfig] = None
    sweep_axes: Optional[Dict[str, List[float]]] = None
    output_dir: str = 'runs/default'
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    ode: OdeSettings = OdeSettings()
    dirichlet: DirichletSettings = DirichletSettings()
    fit: FitSettings = FitSettings()
    verify: VerifySettings = VerifySettings()


class FileEntry(BaseModel):
    path: str
    sha256: str
    bytes: int


class RunManifest(BaseModel):
    run_id: str
    mode: str
    created_at: str
    config: Dict
    versions: Dict[str, str]
    wall_time_s: float
    peak_rss_mb: float
    audit_summary: Dict
    files: List[FileEntry] = []
    exit_code: int = 0


class RunStatus(BaseModel):
    """HTTP 服务中的运行状态"""
    run_id: str
    status: Literal['pending', 'running', 'success', 'failed', 'error']
    mode: str
    output_dir: str
    submit_time: str
    end_time: Optional[str] = None
    exit_code: Optional[int] = None
    message: Optional[str] = None


class RunSubmitRequest(BaseModel):
    config_text: str
    output_dir: Optional[str] = None

    model_config = ConfigDict(json_schema_extra={
        "example": {
            "config_text": "mode = \"simulate\"\na = 1\nb = 1\ns = 1\ng = 2\nt_end = 150\n",
            "output_dir": "runs/fig2",
        }
    })


class RunListResponse(BaseModel):
    total_runs: int
    runs: List[RunStatus]
