import os
import shutil
from dataclasses import dataclass, field, asdict
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import tomli
import tomlkit
from packaging import version
from packaging.version import Version, InvalidVersion
from packaging.specifiers import SpecifierSet, InvalidSpecifier

from src.common.logger import get_module_logger, CONFIG_STYLE_CONFIG, LogConfig

config_config = LogConfig(
    console_format=CONFIG_STYLE_CONFIG["console_format"],
    file_format=CONFIG_STYLE_CONFIG["file_format"],
)
logger = get_module_logger("config", config=config_config)

tricks_version = "0.1.0"

ROOT_DIR = Path(__file__).resolve().parent.parent.parent.parent
TEMPLATE_PATH = ROOT_DIR / "template" / "tricks_config_template.toml"
CONFIG_DIR = ROOT_DIR / "config"
CONFIG_PATH = CONFIG_DIR / "tricks_config.toml"


class ConfigError(ValueError):
    """配置文件内容不合法"""


def update_config(template_path: Path = TEMPLATE_PATH, config_path: Path = CONFIG_PATH) -> Path:
    """用模板刷新用户配置：版本不同则备份旧文件并把旧值合并进新模板"""
    old_config_dir = config_path.parent / "old"

    if not config_path.exists():
        logger.info("配置文件不存在，从模板创建新配置")
        config_path.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(template_path, config_path)
        logger.info(f"已创建新配置文件: {config_path}")
        return config_path

    with open(config_path, "r", encoding="utf-8") as f:
        old_config = tomlkit.load(f)
    with open(template_path, "r", encoding="utf-8") as f:
        new_config = tomlkit.load(f)

    if "inner" in old_config and "inner" in new_config:
        old_version = old_config["inner"].get("version")
        new_version = new_config["inner"].get("version")
        if old_version and new_version and old_version == new_version:
            logger.debug(f"配置文件版本号相同 (v{old_version})，跳过更新")
            return config_path
        logger.info(f"检测到版本号不同: 旧版本 v{old_version} -> 新版本 v{new_version}")

    old_config_dir.mkdir(parents=True, exist_ok=True)
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    old_backup_path = old_config_dir / f"tricks_config_{timestamp}.toml"
    shutil.move(config_path, old_backup_path)
    logger.info(f"已备份旧配置文件到: {old_backup_path}")

    def update_dict(target, source):
        for key, value in source.items():
            # version 以模板为准
            if key == "version":
                continue
            if key not in target:
                continue
            if isinstance(value, dict) and isinstance(target[key], (dict, tomlkit.items.Table)):
                update_dict(target[key], value)
                continue
            try:
                if isinstance(value, list):
                    target[key] = tomlkit.array(value) if value else tomlkit.array()
                else:
                    target[key] = tomlkit.item(value)
            except (TypeError, ValueError):
                target[key] = value

    logger.info("开始合并新旧配置...")
    update_dict(new_config, old_config)

    with open(config_path, "w", encoding="utf-8") as f:
        f.write(tomlkit.dumps(new_config))
    logger.info("配置文件更新完成")
    return config_path


@dataclass
class TricksConfig:
    """工具包配置，默认值与模板一致"""

    INNER_VERSION: Version = None

    # 网格
    image_size: int = 448
    patch_size: int = 28

    # 数据生成
    cases: List[str] = field(default_factory=lambda: ["all"])
    n_per_case: int = 100
    seed: int = 0
    conflict_deltas: List[int] = field(default_factory=list)
    workers: int = 1
    max_retries: int = 1000

    # 指标
    k_percent: float = 10.0
    iou_threshold: float = 0.5

    # 注意力份额约束
    tau: float = 0.4
    mas_lambda: float = 0.1
    mas_layers: List[int] = field(default_factory=list)  # 空表示全部层
    all_keys: bool = False

    # 玩具模型
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    visual_grid: int = 8
    learning_rate: float = 0.05
    batch_size: int = 8
    epochs: int = 10
    sink_logit: float = 1.8
    held_out_fraction: float = 0.2
    demo_cases: List[str] = field(default_factory=lambda: ["all"])
    demo_n_per_case: int = 10
    demo_conflict: bool = False

    # 输出
    out_dir: str = "out"
    report_name: str = "report.json"

    @classmethod
    def convert_to_specifierset(cls, value: str) -> SpecifierSet:
        """将字符串版本表达式转换成 SpecifierSet"""
        try:
            return SpecifierSet(value)
        except InvalidSpecifier as e:
            logger.error(f"{value} 使用了错误的版本约束表达式")
            raise ConfigError(f"错误的版本约束表达式: {value}") from e

    @classmethod
    def get_config_version(cls, toml: dict) -> Version:
        """提取配置文件 [inner] 段的版本号，缺失时视为 0.0.0"""
        if "inner" in toml:
            try:
                config_version: str = toml["inner"]["version"]
            except KeyError as e:
                logger.error("配置文件中 inner 段缺少 version, 这是错误的配置文件")
                raise KeyError(f"配置文件中 inner 段缺少 version {e}") from e
        else:
            toml["inner"] = {"version": "0.0.0"}
            config_version = toml["inner"]["version"]

        try:
            return version.parse(config_version)
        except InvalidVersion as e:
            logger.error("配置文件中 inner 段的 version 不是合法的版本描述，请参考模板修改")
            raise InvalidVersion("配置文件中 inner 段的 version 不是合法的版本描述") from e

    @classmethod
    def load_config(cls, config_path: Optional[str] = None) -> "TricksConfig":
        """从 TOML 配置文件加载配置，文件不存在时返回默认配置"""
        config = cls()

        def grid(parent: dict):
            grid_config = parent["grid"]
            config.image_size = int(grid_config.get("image_size", config.image_size))
            config.patch_size = int(grid_config.get("patch_size", config.patch_size))

        def generate(parent: dict):
            generate_config = parent["generate"]
            config.cases = list(generate_config.get("cases", config.cases))
            config.n_per_case = int(generate_config.get("n_per_case", config.n_per_case))
            config.seed = int(generate_config.get("seed", config.seed))
            config.conflict_deltas = [int(d) for d in generate_config.get("conflict_deltas", config.conflict_deltas)]
            config.workers = int(generate_config.get("workers", config.workers))
            config.max_retries = int(generate_config.get("max_retries", config.max_retries))

        def metrics(parent: dict):
            metrics_config = parent["metrics"]
            config.k_percent = float(metrics_config.get("k_percent", config.k_percent))
            config.iou_threshold = float(metrics_config.get("iou_threshold", config.iou_threshold))

        def mas(parent: dict):
            mas_config = parent["mas"]
            config.tau = float(mas_config.get("tau", config.tau))
            config.mas_lambda = float(mas_config.get("lambda", config.mas_lambda))
            config.mas_layers = [int(x) for x in mas_config.get("layers", config.mas_layers)]
            config.all_keys = bool(mas_config.get("all_keys", config.all_keys))

        def toy(parent: dict):
            toy_config = parent["toy"]
            for key in (
                "d_model",
                "n_heads",
                "n_layers",
                "visual_grid",
                "batch_size",
                "epochs",
                "demo_n_per_case",
            ):
                setattr(config, key, int(toy_config.get(key, getattr(config, key))))
            for key in ("learning_rate", "sink_logit", "held_out_fraction"):
                setattr(config, key, float(toy_config.get(key, getattr(config, key))))
            config.demo_cases = list(toy_config.get("demo_cases", config.demo_cases))
            config.demo_conflict = bool(toy_config.get("demo_conflict", config.demo_conflict))

        def output(parent: dict):
            output_config = parent["output"]
            config.out_dir = str(output_config.get("out_dir", config.out_dir))
            config.report_name = str(output_config.get("report_name", config.report_name))

        # 允许字段：func: method, support: str, notice: str, necessary: bool
        include_configs = {
            "grid": {"func": grid, "support": ">=0.1.0"},
            "generate": {"func": generate, "support": ">=0.1.0"},
            "metrics": {"func": metrics, "support": ">=0.1.0"},
            "mas": {"func": mas, "support": ">=0.1.0"},
            "toy": {"func": toy, "support": ">=0.1.0", "necessary": False},
            "output": {"func": output, "support": ">=0.1.0", "necessary": False},
        }

        for key in include_configs:
            include_configs[key]["support"] = cls.convert_to_specifierset(include_configs[key]["support"])

        if config_path is None or not os.path.exists(config_path):
            logger.debug("未找到配置文件，使用默认配置")
            config.INNER_VERSION = version.parse(tricks_version)
            config.validate()
            return config

        with open(config_path, "rb") as f:
            try:
                toml_dict = tomli.load(f)
            except tomli.TOMLDecodeError as e:
                logger.critical(f"配置文件 {config_path} 填写有误：{e}")
                raise ConfigError(f"配置文件 {config_path} 解析失败: {e}") from e

        config.INNER_VERSION = cls.get_config_version(toml_dict)

        for key, item in include_configs.items():
            if key in toml_dict:
                group_specifierset: SpecifierSet = item["support"]
                if config.INNER_VERSION in group_specifierset:
                    if "notice" in item:
                        logger.warning(item["notice"])
                    item["func"](toml_dict)
                else:
                    logger.error(
                        f"配置文件中的 '{key}' 字段的版本 ({config.INNER_VERSION}) 不在支持范围内。\n"
                        f"当前程序仅支持以下版本范围: {group_specifierset}"
                    )
                    raise InvalidVersion(f"当前程序仅支持以下版本范围: {group_specifierset}")
            elif item.get("necessary") is False:
                continue
            else:
                logger.error(f"配置文件中缺少必需的字段: '{key}'")
                raise KeyError(f"配置文件中缺少必需的字段: '{key}'")

        config.validate()
        logger.success(f"成功加载配置文件: {config_path}")
        return config

    def validate(self) -> None:
        """检查跨字段约束"""
        if self.patch_size <= 0 or self.image_size % self.patch_size != 0:
            raise ConfigError(f"patch_size={self.patch_size} 必须整除 image_size={self.image_size}")
        if self.image_size // self.patch_size < 8:
            raise ConfigError("网格边长至少为 8")
        if self.n_per_case < 1:
            raise ConfigError("n_per_case 必须 ≥ 1")
        if not 0.0 < self.k_percent <= 100.0:
            raise ConfigError(f"k_percent={self.k_percent} 不在 (0, 100] 内")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau={self.tau} 不在 [0, 1] 内")
        if self.mas_lambda < 0:
            raise ConfigError(f"lambda={self.mas_lambda} 不能为负")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} 必须能被 n_heads={self.n_heads} 整除")
        if self.workers < 1:
            raise ConfigError("workers 必须 ≥ 1")
        if not 0.0 <= self.held_out_fraction < 1.0:
            raise ConfigError("held_out_fraction 必须在 [0, 1) 内")
        for delta in self.conflict_deltas:
            if delta not in (-2, -1, 1, 2):
                raise ConfigError(f"冲突偏移量 {delta} 不在 {{-2, -1, 1, 2}} 内")


@dataclass
class RunConfig:
    """一次命令运行解析后的完整配置，会原样写进报告"""

    command: str
    dataset_dir: str
    out_dir: str
    cases: List[str]
    n_per_case: int
    seed: int
    image_size: int
    patch_size: int
    k_percent: float
    iou_threshold: float
    tau: float
    mas_lambda: float
    mas_layers: List[int]
    all_keys: bool
    epochs: int
    conflict_deltas: List[int]
    workers: int
    batch_size: int = 8
    n_coords: int = 100
    responses_path: Optional[str] = None
    attn_path: Optional[str] = None
    detections_path: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if self.n_per_case < 1:
            raise ConfigError("--n 必须 ≥ 1")
        if self.patch_size <= 0 or self.image_size % self.patch_size != 0:
            raise ConfigError(f"--patch-size {self.patch_size} 必须整除 --image-size {self.image_size}")
        if self.image_size // self.patch_size < 8:
            raise ConfigError("网格边长至少为 8")
        if not 0.0 < self.k_percent <= 100.0:
            raise ConfigError(f"--k-percent {self.k_percent} 不在 (0, 100] 内")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"--tau {self.tau} 不在 [0, 1] 内")
        if self.mas_lambda < 0:
            raise ConfigError(f"--lambda {self.mas_lambda} 不能为负")
        if self.epochs < 0:
            raise ConfigError("--epochs 不能为负")
        if self.workers < 1:
            raise ConfigError("--workers 必须 ≥ 1")
        if self.batch_size < 1:
            raise ConfigError("--batch-size 必须 ≥ 1")
        if self.n_coords < 1:
            raise ConfigError("--coords 必须 ≥ 1")
        for delta in self.conflict_deltas:
            if delta not in (-2, -1, 1, 2):
                raise ConfigError(f"冲突偏移量 {delta} 不在 {{-2, -1, 1, 2}} 内")


def resolve_run_config(command: str, args, config: TricksConfig) -> RunConfig:
    """命令行参数覆盖配置文件的值"""

    def pick(name: str, default):
        value = getattr(args, name, None)
        return default if value is None else value

    out_dir = pick("out", config.out_dir)
    # mas-demo 默认只取小规模演示数据
    demo = command == "mas-demo"
    default_cases = config.demo_cases if demo else config.cases
    default_n = config.demo_n_per_case if demo else config.n_per_case
    return RunConfig(
        command=command,
        dataset_dir=pick("dataset", out_dir),
        out_dir=out_dir,
        cases=list(pick("cases", default_cases)),
        n_per_case=int(pick("n", default_n)),
        seed=int(pick("seed", config.seed)),
        image_size=int(pick("image_size", config.image_size)),
        patch_size=int(pick("patch_size", config.patch_size)),
        k_percent=float(pick("k_percent", config.k_percent)),
        iou_threshold=float(pick("iou_threshold", config.iou_threshold)),
        tau=float(pick("tau", config.tau)),
        mas_lambda=float(pick("mas_lambda", config.mas_lambda)),
        mas_layers=list(config.mas_layers),
        all_keys=bool(pick("all_keys", config.all_keys)),
        epochs=int(pick("epochs", config.epochs)),
        conflict_deltas=[int(d) for d in pick("conflict_deltas", config.conflict_deltas)],
        workers=int(pick("workers", config.workers)),
        batch_size=int(pick("batch_size", config.batch_size)),
        n_coords=int(pick("coords", 100)),
        responses_path=getattr(args, "responses", None),
        attn_path=getattr(args, "attn", None),
        detections_path=getattr(args, "detections", None),
    )
