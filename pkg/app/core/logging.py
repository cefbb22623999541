import logging
from datetime import datetime, timedelta
from logging.handlers import RotatingFileHandler

import colorlog
import pytz

from app.core.config import get_log_dir, get_timezone_name

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s'
RUN_LOG_FORMAT = '[%(asctime)s] %(levelname)-8s: %(message)s'


class TimezoneFormatter(logging.Formatter):
    """按 FRONTWAVE_TIMEZONE（默认北京时区）输出时间的日志格式化器"""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.tz = pytz.timezone(get_timezone_name())

    def formatTime(self, record, datefmt=None):
        dt = datetime.fromtimestamp(record.created).astimezone(self.tz)
        if datefmt:
            return dt.strftime(datefmt)
        return dt.strftime("%Y-%m-%d %H:%M:%S,%f")[:-3]


class ColoredTimezoneFormatter(colorlog.ColoredFormatter):
    """控制台彩色输出，时间同样使用配置时区"""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.tz = pytz.timezone(get_timezone_name())

    def formatTime(self, record, datefmt=None):
        dt = datetime.fromtimestamp(record.created).astimezone(self.tz)
        return dt.strftime(datefmt or "%H:%M:%S")


def ensure_logs_dir():
    """确保日志存储目录存在"""
    get_log_dir().mkdir(parents=True, exist_ok=True)


def cleanup_old_logs(days: int = 7):
    """清理 days 天以前的单次运行日志"""
    logger = logging.getLogger('frontwave')
    log_dir = get_log_dir()
    if not log_dir.exists():
        return 0
    threshold = datetime.now() - timedelta(days=days)
    count = 0
    for log_file in log_dir.glob('run_*.log'):
        try:
            mod_time = datetime.fromtimestamp(log_file.stat().st_mtime)
            if mod_time < threshold:
                log_file.unlink()
                count += 1
        except OSError as e:
            logger.error(f'删除旧日志文件失败: {log_file}, 错误: {str(e)}')
    if count > 0:
        logger.info(f'已清理 {count} 个超过{days}天的运行日志文件')
    return count


_configured = False


def setup_logging(level=logging.INFO, log_to_file: bool = True):
    """设置日志系统：轮转文件 + 彩色控制台"""
    global _configured
    logger = logging.getLogger('frontwave')
    if _configured:
        return logger

    console_handler = colorlog.StreamHandler()
    console_handler.setFormatter(ColoredTimezoneFormatter(
        '%(log_color)s%(asctime)s %(levelname)-8s%(reset)s %(message)s',
        log_colors={
            'DEBUG': 'cyan',
            'INFO': 'green',
            'WARNING': 'yellow',
            'ERROR': 'red',
            'CRITICAL': 'red,bg_white',
        },
    ))
    logger.addHandler(console_handler)

    if log_to_file:
        ensure_logs_dir()
        file_handler = RotatingFileHandler(
            get_log_dir() / 'app.log',
            maxBytes=10 * 1024 * 1024,  # 10MB
            backupCount=5,
            encoding='utf-8'
        )
        file_handler.setFormatter(TimezoneFormatter(LOG_FORMAT))
        logger.addHandler(file_handler)

    logger.setLevel(level)
    _configured = True
    return logger


class AuditLogFilter(logging.Filter):
    """运行日志过滤器

    时间推进的进度消息每 100 条只保留 1 条；警告和错误总是保留。
    """

    progress_patterns = ('step=', 'snapshot', '进度')

    def __init__(self, every: int = 100):
        super().__init__()
        self.every = every
        self.progress_count = 0

    def filter(self, record):
        if record.levelno >= logging.WARNING:
            return True
        message = record.getMessage()
        if any(pattern in message for pattern in self.progress_patterns):
            self.progress_count += 1
            return self.progress_count % self.every == 1 or self.every == 1
        return True


def get_run_logger(run_id: str, log_dir=None):
    """获取单次运行专用日志记录器，写入 run_<id>.log"""
    log_dir = log_dir or get_log_dir()
    log_dir.mkdir(parents=True, exist_ok=True)
    run_logger = logging.getLogger(f'frontwave.run.{run_id}')
    run_logger.setLevel(logging.DEBUG)

    for handler in list(run_logger.handlers):
        run_logger.removeHandler(handler)
        handler.close()

    file_handler = logging.FileHandler(log_dir / f'run_{run_id}.log', encoding='utf-8')
    file_handler.setFormatter(TimezoneFormatter(RUN_LOG_FORMAT))
    file_handler.addFilter(AuditLogFilter())
    run_logger.addHandler(file_handler)
    return run_logger


def close_run_logger(run_logger):
    for handler in list(run_logger.handlers):
        run_logger.removeHandler(handler)
        handler.close()
