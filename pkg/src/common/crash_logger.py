import os
import sys
import traceback
import logging
from pathlib import Path
from logging.handlers import RotatingFileHandler

CRASH_LOGGER_NAME = "tricks_crash"


def setup_crash_logger(log_root: str | None = None) -> logging.Logger:
    """设置崩溃日志记录器，写入 <日志根目录>/crash/crash.log"""
    crash_log_dir = Path(log_root or os.getenv("TRICKS_LOG_DIR", "logs")) / "crash"
    crash_log_dir.mkdir(parents=True, exist_ok=True)

    crash_logger = logging.getLogger(CRASH_LOGGER_NAME)
    crash_logger.setLevel(logging.ERROR)
    # 重复安装时不叠加处理器
    if crash_logger.handlers:
        return crash_logger

    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s\n异常类型: %(exc_info)s\n详细信息:\n%(message)s\n-------------------\n"
    )

    # 按大小轮转（最大10MB，保留5个备份）
    file_handler = RotatingFileHandler(
        crash_log_dir / "crash.log",
        maxBytes=10 * 1024 * 1024,
        backupCount=5,
        encoding="utf-8",
    )
    file_handler.setFormatter(formatter)
    crash_logger.addHandler(file_handler)

    return crash_logger


def log_crash(exc_type, exc_value, exc_traceback):
    """记录崩溃信息到日志文件"""
    if exc_type is None:
        return
    # Ctrl+C 不算崩溃
    if issubclass(exc_type, KeyboardInterrupt):
        return

    stack_trace = "".join(traceback.format_exception(exc_type, exc_value, exc_traceback))
    logging.getLogger(CRASH_LOGGER_NAME).error(stack_trace, exc_info=(exc_type, exc_value, exc_traceback))


def install_crash_handler(log_root: str | None = None):
    """安装全局异常处理器"""
    setup_crash_logger(log_root)

    original_hook = sys.excepthook

    def exception_handler(exc_type, exc_value, exc_traceback):
        log_crash(exc_type, exc_value, exc_traceback)
        original_hook(exc_type, exc_value, exc_traceback)

    sys.excepthook = exception_handler
