import json
import logging

from fastapi import APIRouter

from app.core.config import CONFIG_PATH, parse_config, read_config, update_config
from app.core.errors import ConfigError

router = APIRouter(prefix="/config", tags=["配置管理"])
logger = logging.getLogger('frontwave')


@router.get("")
async def get_config():
    """获取默认实验配置（命令行未给 --config 时使用）"""
    if not CONFIG_PATH.exists():
        logger.info("默认配置文件不存在，将写入内置默认值")
    try:
        return {"status": "success", "config": read_config()}
    except Exception as e:
        logger.error(f"读取配置失败: {str(e)}")
        return {"status": "error", "message": str(e)}


@router.put("")
async def update_default_config(new_config: dict):
    """校验后替换默认实验配置"""
    try:
        parse_config(json.dumps(new_config))
    except ConfigError as e:
        return {"status": "error", "message": str(e), "key": e.key}

    if update_config(new_config):
        logger.info(f"配置已更新: {', '.join(new_config.keys())}")
        return {"status": "success", "message": "配置已更新"}
    return {"status": "error", "message": "配置更新失败"}
