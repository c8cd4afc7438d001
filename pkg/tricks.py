import os
import shutil
import sys

from dotenv import load_dotenv

from src.common.crash_logger import install_crash_handler
from src.common.logger import get_module_logger
from src.main import main
from src.plugins.config.config import update_config

logger = get_module_logger("tricks")


def init_env():
    # .env 只是可选的日志开关，缺失时从模板复制一份
    if not os.path.exists(".env") and os.path.exists("template/template.env"):
        shutil.copy("template/template.env", "./.env")
        logger.info("已从 template/template.env 复制创建 .env")


def load_env():
    if os.path.exists(".env"):
        load_dotenv(".env", override=True)
        logger.debug("已加载 .env")


def raw_main(argv=None) -> int:
    install_crash_handler()
    init_env()
    load_env()
    update_config()
    return main(argv)


if __name__ == "__main__":
    try:
        sys.exit(raw_main())
    except KeyboardInterrupt:
        logger.warning("收到中断信号，退出")
        sys.exit(130)
