from pathlib import Path
from typing import Dict, Optional, Tuple
import logging
import os
import re
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from app.core.errors import ConfigError
from app.models.schemas import (
    ModelParams, GridSettings, InitSpec, RunSettings, OdeSettings, DirichletSettings,
    FitSettings, VerifySettings, SimConfig, RadialGrid, ExperimentConfig,
)

load_dotenv()

logger = logging.getLogger('frontwave')

# 全局常量
MODES = ('simulate', 'sweep', 'verify', 'ode', 'dirichlet', 'fit')
TOP_LEVEL_KEYS = ('mode', 'output_dir', 'seed', 'workers')

# 扁平键 -> 所属配置段
KEY_SECTIONS = {
    'a': 'params', 'b': 'params', 's': 'params', 'g': 'params', 'd': 'params', 'dim_N': 'params',
    'dr': 'grid', 'r_max': 'grid', 'n_points': 'grid',
    'amplitude': 'init', 'support_radius': 'init', 'profile': 'init',
    't_end': 'run', 'snapshot_dt': 'run', 'cfl_factor': 'run', 'levels': 'run',
}
KEY_ALIASES = {'N': 'dim_N', 'cfl': 'cfl_factor'}

SECTION_MODELS: Dict[str, type] = {
    'params': ModelParams,
    'grid': GridSettings,
    'init': InitSpec,
    'run': RunSettings,
    'ode': OdeSettings,
    'dirichlet': DirichletSettings,
    'fit': FitSettings,
    'verify': VerifySettings,
}
SECTIONS = tuple(SECTION_MODELS) + ('sweep',)

_HEADER_RE = re.compile(r'^\s*\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]\s*(#.*)?$')
_KEY_RE = re.compile(r'^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=')
_TOML_LINE_RE = re.compile(r'line (\d+)')


# 获取应用根目录
def get_app_root():
    home = os.environ.get('FRONTWAVE_HOME')
    if home:
        return Path(home)
    return Path(__file__).parent.parent.parent


DATA_DIR = get_app_root() / "data"
LOGS_DIR = DATA_DIR / "logs"
CONFIG_PATH = get_app_root() / "config.json"


def get_log_dir():
    return LOGS_DIR


def get_timezone_name():
    return os.environ.get('FRONTWAVE_TIMEZONE', 'Asia/Shanghai')


def resolve_workers(cli_workers: Optional[int] = None) -> int:
    """并发数：环境变量 FRONTWAVE_WORKERS 优先于 --workers"""
    env_value = os.environ.get('FRONTWAVE_WORKERS')
    if env_value:
        try:
            workers = int(env_value)
        except ValueError:
            raise ConfigError(f"FRONTWAVE_WORKERS 不是整数: {env_value!r}", key='FRONTWAVE_WORKERS')
        if workers < 1:
            raise ConfigError(f"FRONTWAVE_WORKERS 必须 ≥ 1，当前 {workers}", key='FRONTWAVE_WORKERS')
        return workers
    return cli_workers if cli_workers else 1


# 读取配置文件
def read_config():
    """读取默认实验配置 config.json，缺失项用 DEFAULT_CONFIG 补齐"""
    if not CONFIG_PATH.exists():
        update_config(DEFAULT_CONFIG)
        return dict(DEFAULT_CONFIG)

    try:
        with open(CONFIG_PATH, 'r', encoding='utf-8') as f:
            config = json.load(f)
        for key, value in DEFAULT_CONFIG.items():
            if key not in config:
                config[key] = value
        return config
    except Exception as e:
        logger.error(f"读取配置文件失败: {str(e)}")
        return dict(DEFAULT_CONFIG)


# 更新配置文件
def update_config(new_config):
    try:
        with open(CONFIG_PATH, 'w', encoding='utf-8') as f:
            json.dump(new_config, f, indent=4, ensure_ascii=False)
        return True
    except Exception as e:
        logger.error(f"更新配置文件失败: {str(e)}")
        return False


def _scan_toml_keys(text: str) -> Dict[Tuple[str, str], int]:
    """逐行扫描 TOML 文本，返回 (段, 键) -> 行号；重复键直接报错"""
    seen: Dict[Tuple[str, str], int] = {}
    section = ''
    for lineno, line in enumerate(text.splitlines(), start=1):
        header = _HEADER_RE.match(line)
        if header:
            section = header.group(1)
            continue
        match = _KEY_RE.match(line)
        if not match:
            continue
        key = KEY_ALIASES.get(match.group(1), match.group(1))
        # 扁平键与其所属段内的同名键视为同一个键
        target = section or KEY_SECTIONS.get(key, '')
        if target == 'sweep':
            target = f'sweep.{key}'
        ident = (target, key)
        if ident in seen:
            raise ConfigError(f"重复的配置键 (首次出现在第 {seen[ident]} 行)", key=key, line=lineno)
        seen[ident] = lineno
    return seen


def _json_line_of(text: str, key: str) -> Optional[int]:
    for lineno, line in enumerate(text.splitlines(), start=1):
        if f'"{key}"' in line:
            return lineno
    return None


def _load_json(text: str) -> Dict:
    def no_duplicates(pairs):
        result = {}
        for key, value in pairs:
            if key in result:
                raise ConfigError("重复的配置键", key=key, line=_json_line_of(text, key))
            result[key] = value
        return result

    try:
        return json.loads(text, object_pairs_hook=no_duplicates)
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON 解析失败: {e.msg}", line=e.lineno)


def _load_toml(text: str) -> Tuple[Dict, Dict[Tuple[str, str], int]]:
    lines = _scan_toml_keys(text)
    try:
        return tomllib.loads(text), lines
    except tomllib.TOMLDecodeError as e:
        match = _TOML_LINE_RE.search(str(e))
        raise ConfigError(f"配置解析失败: {e}", line=int(match.group(1)) if match else None)


def _route_keys(raw: Dict, lines: Dict[Tuple[str, str], int]) -> Tuple[Dict, Dict[str, Dict]]:
    """把扁平键归入所属段；段内键保持原样"""
    top: Dict = {}
    sections: Dict[str, Dict] = {name: {} for name in SECTIONS}

    def line_of(section, key):
        return lines.get((section, key)) or lines.get(('', key))

    for raw_key, value in raw.items():
        key = KEY_ALIASES.get(raw_key, raw_key)
        if key in TOP_LEVEL_KEYS:
            top[key] = value
        elif key in KEY_SECTIONS:
            section = KEY_SECTIONS[key]
            if key in sections[section]:
                raise ConfigError("重复的配置键", key=key, line=line_of(section, key))
            sections[section][key] = value
        elif key in SECTIONS and isinstance(value, dict):
            for sub_key, sub_value in value.items():
                sub_key = KEY_ALIASES.get(sub_key, sub_key)
                if sub_key in sections[key]:
                    raise ConfigError("重复的配置键", key=sub_key, line=line_of(key, sub_key))
                sections[key][sub_key] = sub_value
        else:
            raise ConfigError("未知的配置键", key=raw_key, line=lines.get(('', key)))
    return top, sections


def _validate_section(name: str, model: type, values: Dict, lines) -> BaseModel:
    try:
        return model(**values)
    except ValidationError as e:
        first = e.errors()[0]
        loc = '.'.join(str(part) for part in first['loc']) or name
        key = str(first['loc'][0]) if first['loc'] else name
        raise ConfigError(f"配置段 [{name}] 校验失败: {first['msg']}", key=loc,
                          line=lines.get((name, key)) or lines.get(('', key)))


def auto_r_max(params: ModelParams, t_end: float) -> float:
    """自动截断半径 c*·t_end·1.3 + 50"""
    from app.services.model_service import spreading_speeds
    return spreading_speeds(params).c_star * t_end * 1.3 + 50.0


def build_sim_config(params: ModelParams, grid: GridSettings, init: InitSpec, run: RunSettings) -> SimConfig:
    """由配置段构造 SimConfig；检查截断区域与初值支撑"""
    from app.services.model_service import spreading_speeds

    t_end = run.t_end
    c_star = spreading_speeds(params).c_star
    if grid.n_points is not None:
        radial = RadialGrid(dr=grid.dr, n_points=grid.n_points, dim_N=params.dim_N)
    else:
        r_max = grid.r_max if grid.r_max is not None else auto_r_max(params, t_end)
        radial = RadialGrid.covering(grid.dr, r_max, params.dim_N)

    if radial.r_max <= c_star * t_end + 20.0:
        raise ConfigError(
            f"截断半径过小: r_max={radial.r_max:.6g} 需大于 c*·t_end+20={c_star * t_end + 20.0:.6g}",
            key='r_max')
    if init.support_radius >= radial.r_max / 4.0:
        raise ConfigError(
            f"初值支撑半径需小于 r_max/4: support_radius={init.support_radius}, r_max={radial.r_max:.6g}",
            key='support_radius')

    try:
        return SimConfig(params=params, grid=radial, init=init, t_end=t_end,
                         snapshot_dt=run.snapshot_dt, cfl_factor=run.cfl_factor,
                         levels=tuple(run.levels))
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(f"模拟配置校验失败: {first['msg']}", key='run')


def parse_config(text: str, mode: Optional[str] = None) -> ExperimentConfig:
    """解析实验配置文本（TOML 键值/表格式，或以 '{' 开头的 JSON）

    mode 非空时覆盖文本中的 mode（命令行子命令）
    """
    if text.lstrip().startswith('{'):
        raw = _load_json(text)
        lines: Dict[Tuple[str, str], int] = {}
        for key in raw:
            lineno = _json_line_of(text, key)
            if lineno:
                lines[('', key)] = lineno
    else:
        raw, lines = _load_toml(text)

    top, sections = _route_keys(raw, lines)

    mode = mode or top.get('mode', 'simulate')
    if mode not in MODES:
        raise ConfigError(f"未知的运行模式 {mode!r}，可选: {', '.join(MODES)}", key='mode',
                          line=lines.get(('', 'mode')))

    validated = {}
    for name, model in SECTION_MODELS.items():
        if name == 'params' and not sections[name]:
            continue
        validated[name] = _validate_section(name, model, sections[name], lines)

    params = validated.get('params')
    if params is None and mode in ('simulate', 'sweep', 'ode', 'dirichlet', 'fit'):
        raise ConfigError(f"{mode} 模式需要模型参数 a, b, s, g", key='params')

    sweep_axes = None
    if sections['sweep']:
        sweep_axes = {}
        for axis, values in sections['sweep'].items():
            axis = KEY_ALIASES.get(axis, axis)
            if axis not in ModelParams.model_fields:
                raise ConfigError("扫描轴必须是模型参数", key=axis, line=lines.get(('sweep', axis)))
            if not isinstance(values, list) or not values:
                raise ConfigError("扫描轴取值必须是非空列表", key=axis, line=lines.get(('sweep', axis)))
            sweep_axes[axis] = [float(v) for v in values]
    if mode == 'sweep' and not sweep_axes:
        raise ConfigError("sweep 模式需要 [sweep] 段", key='sweep')

    run_settings: RunSettings = validated['run']
    if mode in ('simulate', 'sweep') and run_settings.t_end is None:
        raise ConfigError(f"{mode} 模式需要 t_end", key='t_end')
    if mode == 'fit' and not validated['fit'].source_dir:
        raise ConfigError("fit 模式需要 fit.source_dir", key='source_dir')

    sim = None
    if params is not None and run_settings.t_end is not None:
        sim = build_sim_config(params, validated['grid'], validated['init'], run_settings)

    try:
        return ExperimentConfig(
            mode=mode,
            params=params,
            sim=sim,
            sweep_axes=sweep_axes,
            output_dir=top.get('output_dir', 'runs/default'),
            seed=top.get('seed', 0),
            workers=top.get('workers', 1),
            ode=validated['ode'],
            dirichlet=validated['dirichlet'],
            fit=validated['fit'],
            verify=validated['verify'],
        )
    except ValidationError as e:
        first = e.errors()[0]
        key = str(first['loc'][0]) if first['loc'] else None
        raise ConfigError(f"配置校验失败: {first['msg']}", key=key, line=lines.get(('', key)))


def load_config_file(path, mode: Optional[str] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"无法读取配置文件 {path}: {e}")
    logger.info(f"读取配置文件: {path}")
    return parse_config(text, mode)


# 默认配置（高转化率、a < 1+s 区域的单次模拟）
DEFAULT_CONFIG = {
    'mode': 'simulate',
    'output_dir': 'runs/default',
    'seed': 0,
    'workers': 1,
    'params': {'a': 1.0, 'b': 1.0, 's': 1.0, 'g': 2.0, 'd': 1.0, 'dim_N': 1},
    'grid': {'dr': 0.1},
    'init': {'amplitude': 1.0, 'support_radius': 5.0},
    'run': {'t_end': 150.0, 'snapshot_dt': 5.0, 'cfl_factor': 0.8, 'levels': [0.05, 0.5]},
}
