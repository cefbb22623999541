import uuid
import threading
import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from typing import Dict

import pytz
from fastapi import APIRouter, HTTPException

from app.core.config import get_timezone_name, resolve_workers, parse_config
from app.core.errors import ConfigError
from app.models.schemas import RunListResponse, RunStatus, RunSubmitRequest
from app.services import run_service

router = APIRouter(prefix="/runs", tags=["实验运行"])
logger = logging.getLogger('frontwave')

# 运行在后台线程执行，HTTP 请求立即返回
run_executor = ThreadPoolExecutor(max_workers=2, thread_name_prefix='run')
runs: Dict[str, RunStatus] = {}
runs_lock = threading.Lock()


def _now() -> str:
    return datetime.now(pytz.timezone(get_timezone_name())).strftime('%Y-%m-%d %H:%M:%S')


def _update(run_id: str, **changes):
    with runs_lock:
        runs[run_id] = runs[run_id].model_copy(update=changes)


def _execute(run_id: str, config, output_dir: str):
    _update(run_id, status='running')
    try:
        manifest = run_service.run(config, output_dir=output_dir, workers=resolve_workers(config.workers))
        _update(run_id, status='success' if manifest.exit_code == 0 else 'failed',
                exit_code=manifest.exit_code, end_time=_now(),
                message=f"manifest run_id={manifest.run_id}")
    except ConfigError as e:
        _update(run_id, status='error', exit_code=2, end_time=_now(), message=str(e))
    except Exception as e:
        logger.exception(f"后台运行异常 - run_id={run_id}: {str(e)}")
        _update(run_id, status='error', exit_code=1, end_time=_now(), message=str(e))


@router.post("")
async def submit_run(request: RunSubmitRequest):
    """提交一次实验运行，配置文本格式与命令行 --config 相同"""
    try:
        config = parse_config(request.config_text)
    except ConfigError as e:
        logger.warning(f"提交的配置无效: {e}")
        return {"status": "error", "message": str(e), "key": e.key, "line": e.line}

    run_id = uuid.uuid4().hex[:12]
    output_dir = request.output_dir or f"{config.output_dir}/{run_id}"
    with runs_lock:
        runs[run_id] = RunStatus(run_id=run_id, status='pending', mode=config.mode,
                                 output_dir=output_dir, submit_time=_now())
    run_executor.submit(_execute, run_id, config, output_dir)
    logger.info(f"已提交运行 - run_id={run_id}, mode={config.mode}, output_dir={output_dir}")
    return {"status": "success", "run_id": run_id, "output_dir": output_dir}


@router.get("", response_model=RunListResponse)
async def list_runs():
    with runs_lock:
        items = sorted(runs.values(), key=lambda item: item.submit_time, reverse=True)
    return RunListResponse(total_runs=len(items), runs=items)


@router.get("/{run_id}", response_model=RunStatus)
async def get_run(run_id: str):
    with runs_lock:
        status = runs.get(run_id)
    if status is None:
        raise HTTPException(status_code=404, detail="运行不存在")
    return status
