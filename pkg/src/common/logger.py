from loguru import logger
from typing import Callable, Dict, Optional, Union, List
import sys
import os
from types import ModuleType
from pathlib import Path
from dotenv import load_dotenv

load_dotenv(dotenv_path=Path(__file__).resolve().parent.parent.parent / ".env")

# 去掉 loguru 默认的 stderr 处理器，改由各模块自行注册
logger.remove()

LoguruLogger = logger.__class__

# 模块名 -> 该模块的处理器 ID
_handler_registry: Dict[str, List[int]] = {}


def _env_flag(name: str, default: str = "false") -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


LOG_ROOT = os.getenv("TRICKS_LOG_DIR", "logs")
SIMPLE_OUTPUT = _env_flag("SIMPLE_OUTPUT")
_VARIANT = "simple" if SIMPLE_OUTPUT else "advanced"

_TIME = "<green>{time:YYYY-MM-DD HH:mm:ss}</green>"
_SHORT_TIME = "<green>{time:MM-DD HH:mm}</green>"
_LEVEL = "<level>{level: <8}</level>"


def _file_format(tag: str = "") -> str:
    middle = f" | {tag}" if tag else ""
    return "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {extra[module]: <15}" + middle + " | {message}"


DEFAULT_CONFIG = {
    "console_level": "INFO",
    "file_level": "DEBUG",
    "console_format": (
        f"{_SHORT_TIME} | <cyan>{{extra[module]}}</cyan> | {{message}}"
        if SIMPLE_OUTPUT
        else f"{_TIME} | {_LEVEL} | <cyan>{{extra[module]: <12}}</cyan> | <level>{{message}}</level>"
    ),
    "file_format": _file_format(),
    "log_dir": LOG_ROOT,
    "rotation": "00:00",
    "retention": "3 days",
    "compression": "zip",
}


def _style(tag: str, color: str) -> dict:
    """带彩色标签的控制台格式，按 SIMPLE_OUTPUT 选精简或完整版本"""
    label = f"<{color}>{tag}</{color}>"
    if _VARIANT == "simple":
        console = f"{_SHORT_TIME} | {label} | {{message}}"
    else:
        console = f"{_TIME} | {_LEVEL} | <cyan>{{extra[module]: <12}}</cyan> | {label} | <level>{{message}}</level>"
    return {"console_format": console, "file_format": _file_format(tag)}


SCENE_STYLE_CONFIG = _style("场景生成", "light-yellow")
RASTER_STYLE_CONFIG = _style("渲染", "light-blue")
PROMPT_STYLE_CONFIG = _style("提示词", "light-magenta")
METRICS_STYLE_CONFIG = _style("评测", "light-green")
MAS_STYLE_CONFIG = _style("注意力份额", "light-red")
TOY_STYLE_CONFIG = _style("玩具模型", "magenta")
HARNESS_STYLE_CONFIG = _style("主控", "light-cyan")
CONFIG_STYLE_CONFIG = _style("配置", "yellow")


def is_unregistered_module(record: dict) -> bool:
    return record["extra"].get("module") not in _handler_registry


def _only(module_name: str) -> Callable[[dict], bool]:
    return lambda record: record["extra"].get("module") == module_name


def log_patcher(record: dict) -> None:
    """没有绑定模块名的记录用 loguru 的 name 兜底"""
    record["extra"].setdefault("module", record.get("name", "") or "root")


logger.configure(patcher=log_patcher)


class LogConfig:
    """在 DEFAULT_CONFIG 上覆盖若干项"""

    def __init__(self, **kwargs):
        self.config = {**DEFAULT_CONFIG, **kwargs}

    def to_dict(self) -> dict:
        return dict(self.config)

    def update(self, **kwargs):
        self.config.update(kwargs)


def _add_file_sink(directory: Path, level: str, fmt: str, settings: dict, record_filter) -> int:
    directory.mkdir(parents=True, exist_ok=True)
    return logger.add(
        sink=str(directory / "{time:YYYY-MM-DD}.log"),
        level=level,
        format=fmt,
        rotation=settings["rotation"],
        retention=settings["retention"],
        compression=settings["compression"],
        encoding="utf-8",
        filter=record_filter,
        enqueue=True,
    )


def get_module_logger(
    module: Union[str, ModuleType],
    *,
    console_level: Optional[str] = None,
    file_level: Optional[str] = None,
    config: Optional[LogConfig] = None,
) -> LoguruLogger:
    """为模块注册控制台和按天轮转的文件处理器，返回绑定了模块名的 logger；重复调用会替换旧处理器"""
    module_name = module if isinstance(module, str) else module.__name__
    settings = config.config if config else DEFAULT_CONFIG
    remove_module_logger(module_name)

    console_id = logger.add(
        sink=sys.stderr,
        level=os.getenv("CONSOLE_LOG_LEVEL", console_level or settings["console_level"]),
        format=settings["console_format"],
        filter=_only(module_name),
        enqueue=True,
    )
    file_id = _add_file_sink(
        Path(settings["log_dir"]) / module_name,
        os.getenv("FILE_LOG_LEVEL", file_level or settings["file_level"]),
        settings["file_format"],
        settings,
        _only(module_name),
    )
    _handler_registry[module_name] = [console_id, file_id]
    return logger.bind(module=module_name)


def remove_module_logger(module_name: str) -> None:
    for handler_id in _handler_registry.pop(module_name, []):
        logger.remove(handler_id)


# 第三方库等未注册模块的日志
DEFAULT_GLOBAL_HANDLER = logger.add(
    sink=sys.stderr,
    level=os.getenv("DEFAULT_CONSOLE_LOG_LEVEL", "SUCCESS"),
    format=f"{_TIME} | {_LEVEL} | <cyan>{{name: <12}}</cyan> | <level>{{message}}</level>",
    filter=is_unregistered_module,
    enqueue=True,
)
DEFAULT_FILE_HANDLER = _add_file_sink(
    Path(LOG_ROOT) / "other",
    os.getenv("DEFAULT_FILE_LOG_LEVEL", "DEBUG"),
    "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name: <15} | {message}",
    DEFAULT_CONFIG,
    is_unregistered_module,
)
