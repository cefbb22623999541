import os
import re
import csv
import json
import hashlib
import tempfile
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from app.models.fields import FieldState
from app.models.schemas import FileEntry

MANIFEST_NAME = 'manifest.json'
PROFILE_HEADER = 't,r,F,C,H'
FLOAT_FORMAT = '%.15g'


def format_value(value: float) -> str:
    return f"{value:g}"


def secure_dirname(name: str) -> str:
    """安全化目录名，保留 '=' '.' '-' 以便写入 g=0.4 这类参数标签"""
    name = re.sub(r'[^\w\-=.]+', '_', name)
    name = name.strip('_')
    return name or 'unnamed'


def sweep_dir_name(point: Dict[str, float]) -> str:
    """参数点 -> 稳定的目录名，如 g=0.4 或 a=2_g=0.4（按轴名排序）"""
    return secure_dirname('_'.join(f"{axis}={format_value(point[axis])}" for axis in sorted(point)))


def ensure_output_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"输出目录不可写: {path}")
    return path


def _atomic_write_text(path: Path, text: str):
    """先写临时文件再替换，避免留下半截文件"""
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(mode='w', delete=False, dir=path.parent, encoding='utf-8',
                                     newline='', suffix='.tmp') as temp_file:
        temp_file.write(text)
        temp_path = Path(temp_file.name)
    os.replace(temp_path, path)


def json_dump(path, payload) -> Path:
    path = Path(path)
    _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + '\n')
    return path


def write_ndjson(path, records: Iterable[dict]) -> Path:
    path = Path(path)
    lines = [json.dumps(record, sort_keys=True, ensure_ascii=False) for record in records]
    _atomic_write_text(path, ''.join(line + '\n' for line in lines))
    return path


def write_profiles_csv(path, snapshots: Sequence[FieldState]) -> Path:
    """profiles.csv：每个快照每个节点一行 (t, r, F, C, H)，15 位有效数字"""
    path = Path(path)
    blocks = []
    for state in snapshots:
        r = state.r
        blocks.append(np.column_stack([np.full_like(r, state.t), r, state.F, state.C, state.H]))
    data = np.vstack(blocks) if blocks else np.empty((0, 5))
    np.savetxt(path, data, fmt=FLOAT_FORMAT, delimiter=',', header=PROFILE_HEADER, comments='')
    return path


def read_profiles_csv(path) -> Dict[float, np.ndarray]:
    """读取 profiles.csv，返回 t -> (n, 4) 数组 [r, F, C, H]"""
    data = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
    if data.size == 0:
        return {}
    profiles = {}
    for t in np.unique(data[:, 0]):
        profiles[float(t)] = data[data[:, 0] == t][:, 1:]
    return profiles


def write_fronts_csv(path, rows: Iterable[Tuple[float, str, float, float]]) -> Path:
    path = Path(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['t', 'field', 'level', 'position'])
        for t, name, level, position in rows:
            writer.writerow([FLOAT_FORMAT % t, name, format_value(level), FLOAT_FORMAT % position])
    return path


def read_fronts_csv(path) -> List[Tuple[float, str, float, float]]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f)
        return [(float(row['t']), row['field'], float(row['level']), float(row['position'])) for row in reader]


def write_table_csv(path, header: Sequence[str], columns: Sequence[np.ndarray]) -> Path:
    path = Path(path)
    data = np.column_stack(columns) if len(columns) else np.empty((0, len(header)))
    np.savetxt(path, data, fmt=FLOAT_FORMAT, delimiter=',', header=','.join(header), comments='')
    return path


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def file_inventory(run_dir) -> List[FileEntry]:
    """运行目录下除 manifest.json 外的全部文件及其 SHA-256"""
    run_dir = Path(run_dir)
    entries = []
    for path in sorted(p for p in run_dir.rglob('*') if p.is_file()):
        relative = path.relative_to(run_dir).as_posix()
        if relative == MANIFEST_NAME:
            continue
        entries.append(FileEntry(path=relative, sha256=sha256_file(path), bytes=path.stat().st_size))
    return entries
