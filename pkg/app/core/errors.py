"""frontwave 异常定义

审计违例（不变量、包络）作为报告数据返回，不在这里抛出。
"""
from typing import Optional


class FrontwaveError(Exception):
    """所有 frontwave 错误的基类"""


class ParameterDomainError(FrontwaveError, ValueError):
    """模型参数超出定义域（非正参数、D_h < D、g≥1 时调用低转化率公式等）"""


class ConfigError(FrontwaveError):
    """配置解析或校验失败，附带出错的键和行号"""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        context = []
        if key is not None:
            context.append(f"键 '{key}'")
        if line is not None:
            context.append(f"第 {line} 行")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class InstabilityError(FrontwaveError):
    """时间推进产生 NaN/Inf"""

    def __init__(self, message: str, t: float, node: int):
        self.t = t
        self.node = node
        super().__init__(f"{message} (t={t:.6g}, node={node})")


class FrontReachesBoundaryError(FrontwaveError):
    """波前接近截断区域右边界"""


class InsufficientSamplesError(FrontwaveError):
    """拟合窗口内的有效样本不足"""


class EmptyZoneError(FrontwaveError):
    """统计区域与网格无交集"""


class GridMismatchError(FrontwaveError):
    """两个谱剖面不在同一 ρ 网格上"""


class DivergenceError(FrontwaveError):
    """ODE 积分离开保护区域"""

    def __init__(self, message: str, t: float):
        self.t = t
        super().__init__(f"{message} (t={t:.6g})")


class SpectralDomainError(FrontwaveError, ValueError):
    """谱剖面的加权范数不可控（尾部衰减不足）"""


class PlotInputError(FrontwaveError):
    """绘图脚本生成缺少输入数据"""
