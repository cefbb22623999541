import time
import uuid
import logging
from contextlib import asynccontextmanager

import pytz
import uvicorn
from apscheduler.schedulers.background import BackgroundScheduler
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from app import __version__
from app.api import api_router
from app.api.runs import run_executor
from app.core.config import DATA_DIR, get_app_root, get_log_dir, get_timezone_name
from app.core.logging import cleanup_old_logs, setup_logging

# 全局常量
APP_VERSION = __version__

logger = setup_logging()


@asynccontextmanager
async def lifespan(app):
    """应用生命周期管理"""
    logger.info('应用启动初始化开始')
    for dir_path in (get_app_root(), DATA_DIR, get_log_dir()):
        dir_path.mkdir(parents=True, exist_ok=True)
        logger.info(f'确保目录存在: {dir_path}')

    scheduler = BackgroundScheduler(
        timezone=pytz.timezone(get_timezone_name()),
        job_defaults={'misfire_grace_time': 60}
    )
    # 每天凌晨 2 点清理过期的运行日志
    scheduler.add_job(cleanup_old_logs, 'cron', hour=2, minute=0, id="log_cleanup", replace_existing=True)
    scheduler.start()
    logger.info('已添加日志清理调度任务')

    yield

    logger.info('开始执行清理工作')
    if scheduler.running:
        scheduler.shutdown()
        logger.info('调度器已关闭')
    run_executor.shutdown(wait=False, cancel_futures=True)
    logger.info('清理工作完成')


app = FastAPI(
    title="Frontwave API",
    description="农耕者/狩猎采集者反应扩散模拟与验证的运行服务",
    version=APP_VERSION,
    lifespan=lifespan
)


@app.middleware("http")
async def log_requests_and_handle_exceptions(request: Request, call_next):
    """请求日志和错误处理中间件"""
    start_time = time.time()
    method = request.method
    url = str(request.url)
    logger.info(f"{method} {url}")

    try:
        response = await call_next(request)
        logger.info(f"{response.status_code} {method} {url} 处理时间: {time.time() - start_time:.3f}s")
        return response
    except Exception as e:
        error_id = str(uuid.uuid4())
        logger.exception(f"请求异常 [{error_id}] {method} {url}: {str(e)}")
        return JSONResponse(
            status_code=500,
            content={"status": "error", "message": "服务器内部错误", "error_id": error_id}
        )


@app.get("/api/version")
async def get_version():
    """返回应用版本信息"""
    return {"version": APP_VERSION}


app.include_router(api_router, prefix="/api")


def serve(host: str = '127.0.0.1', port: int = 8000):
    logger.info(f'启动服务: {host}:{port}')
    try:
        uvicorn.run(app, host=host, port=port, log_level="info", access_log=False)
    finally:
        logger.info('服务已关闭')


if __name__ == '__main__':
    serve()
