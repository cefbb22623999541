"""gnuplot 脚本生成：按波形图样式绘制选定时刻的 F, C, H 剖面"""
import logging
from pathlib import Path
from typing import List, Optional, Sequence

from app.core.errors import PlotInputError
from app.models.schemas import ModelParams
from app.services.model_service import classify_regime, fig_label, spreading_speeds
from app.utils.file_utils import read_profiles_csv

logger = logging.getLogger('frontwave')

PLOT_SCRIPT = 'plot.gp'
PROFILES = 'profiles.csv'
MAX_PANELS = 4


def select_times(times: Sequence[float], count: int = MAX_PANELS) -> List[float]:
    """从快照时刻中均匀挑选 count 个非零时刻（含最后一个）"""
    positive = [t for t in sorted(times) if t > 0] or sorted(times)
    if len(positive) <= count:
        return positive
    step = len(positive) / count
    return [positive[min(len(positive) - 1, int(round((k + 1) * step)) - 1)] for k in range(count)]


def _panel(t: float, params: Optional[ModelParams]) -> List[str]:
    select = f"(abs($1-{t:.15g})<1e-9 ? $%d : 1/0)"
    lines = [f"set title 't = {t:g}'"]
    if params is not None:
        speeds = spreading_speeds(params)
        final_zone = 0.5 * speeds.c_star * t
        leading_edge = speeds.c_star * t
        lines += [
            f"set arrow 1 from {final_zone:.6g}, graph 0 to {final_zone:.6g}, graph 1 nohead dt 2",
            f"set label 1 'final zone' at {final_zone / 2.0:.6g}, graph 0.95 center",
            f"set arrow 2 from {leading_edge:.6g}, graph 0 to {leading_edge:.6g}, graph 1 nohead dt 3",
            f"set label 2 'leading edge' at {leading_edge:.6g}, graph 0.9 left offset 1,0",
            f"set xrange [0:{max(1.5 * leading_edge, 10.0):.6g}]",
        ]
    lines += [
        f"plot '{PROFILES}' skip 1 using 2:{select % 3} with lines lw 2 dt 1 lc rgb 'black' title 'F', \\",
        f"     '' skip 1 using 2:{select % 4} with lines lw 5 lc rgb 'black' title 'C', \\",
        f"     '' skip 1 using 2:{select % 5} with lines lw 1 lc rgb 'gray40' title 'H'",
        "unset arrow",
        "unset label",
    ]
    return lines


def emit_plots(run_dir, params: Optional[ModelParams] = None) -> Path:
    """在 run_dir 写入 plot.gp，只引用 run_dir 内的相对路径"""
    run_dir = Path(run_dir)
    profiles_path = run_dir / PROFILES
    if not profiles_path.exists():
        raise PlotInputError(f"缺少剖面数据: {profiles_path}")
    profiles = read_profiles_csv(profiles_path)
    if not profiles:
        raise PlotInputError(f"剖面数据为空: {profiles_path}")

    times = select_times(list(profiles))
    title = fig_label(classify_regime(params)) if params is not None else 'transient waveforms'
    rows = 2 if len(times) > 2 else 1
    cols = 2 if len(times) > 1 else 1

    lines = [
        "# F: solid, C: heavy, H: thin",
        "set datafile separator ','",
        "set terminal pngcairo size 1200,900",
        "set output 'waveforms.png'",
        "set xlabel 'x'",
        "set yrange [-0.05:*]",
        "set key top right",
        f"set multiplot layout {rows},{cols} title '{title}'",
    ]
    for t in times:
        lines += _panel(t, params)
    lines.append("unset multiplot")

    script_path = run_dir / PLOT_SCRIPT
    script_path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    logger.info(f"已生成绘图脚本: {script_path} (时刻: {', '.join(f'{t:g}' for t in times)})")
    return script_path
