"""命令行入口：python -m app <mode> --config <file> --out <dir> [--workers k]"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from app.core.config import MODES, load_config_file, parse_config, read_config, resolve_workers
from app.core.errors import ConfigError, FrontwaveError
from app.core.logging import setup_logging
from app.services import run_service

logger = logging.getLogger('frontwave')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='frontwave', description='农耕者/狩猎采集者波前模拟与验证')
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    subparsers = parser.add_subparsers(dest='command', required=True)

    for mode in MODES:
        sub = subparsers.add_parser(mode, help=f'{mode} 模式')
        sub.add_argument('--config', help='TOML 或 JSON 配置文件；省略时使用 config.json')
        sub.add_argument('--out', help='输出目录；省略时使用配置中的 output_dir')
        sub.add_argument('--workers', type=int, default=None, help='并发数（FRONTWAVE_WORKERS 优先）')

    serve = subparsers.add_parser('serve', help='启动 HTTP 服务')
    serve.add_argument('--host', default='127.0.0.1')
    serve.add_argument('--port', type=int, default=8000)
    return parser


def load_experiment(path: Optional[str], mode: str):
    if path:
        return load_config_file(path, mode)
    logger.info("未指定 --config，使用默认配置 config.json")
    return parse_config(json.dumps(read_config()), mode)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(getattr(logging, args.log_level))

    if args.command == 'serve':
        from app.main import serve
        serve(args.host, args.port)
        return run_service.EXIT_OK

    try:
        config = load_experiment(args.config, args.command)
        workers = resolve_workers(args.workers or config.workers)
        manifest = run_service.run(config, output_dir=args.out, workers=workers)
    except ConfigError as e:
        logger.error(f"配置错误: {e}")
        return run_service.EXIT_CONFIG
    except FrontwaveError as e:
        logger.exception(f"运行失败: {e}")
        return run_service.EXIT_FAILED

    status = '成功' if manifest.exit_code == run_service.EXIT_OK else '存在失败的审计或准则'
    logger.info(f"{args.command} 完成: {status}, run_id={manifest.run_id}")
    return manifest.exit_code


if __name__ == '__main__':
    sys.exit(main())
