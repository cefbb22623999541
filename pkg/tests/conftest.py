import pytest

from app.core import logging as frontwave_logging
from app.models.schemas import InitSpec, ModelParams, RadialGrid, SimConfig


@pytest.fixture
def kpp_params():
    """高转化率、a < 1+s 的区域（波形图 2）"""
    return ModelParams(a=1.0, b=1.0, s=1.0, g=2.0, d=1.0)


@pytest.fixture
def coexistence_params():
    return ModelParams(a=1.0, b=1.0, s=0.5, g=0.4, d=1.0)


@pytest.fixture
def short_sim(kpp_params):
    """几秒内可跑完的小模拟"""
    return SimConfig(params=kpp_params, grid=RadialGrid.covering(0.2, 80.0), init=InitSpec(),
                     t_end=10.0, snapshot_dt=1.0)


@pytest.fixture(autouse=True)
def run_log_dir(tmp_path, monkeypatch):
    """单次运行日志写到临时目录"""
    log_dir = tmp_path / 'logs'
    monkeypatch.setattr(frontwave_logging, 'get_log_dir', lambda: log_dir)
    return log_dir
