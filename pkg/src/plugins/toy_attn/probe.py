from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional

from rich.console import Console
from rich.table import Table

BOTTLENECK_CHANNELS = 512
HEAD_CHANNELS = 256
HEAD_KERNEL = 3
# 4 个框坐标 + 1 个目标置信度
PREDICTION_CHANNELS = 5

# 三个特征抽取点的参考参数量（百万）：瓶颈层、检测头、合计
REFERENCE_ROWS = (
    ("Encoder", 1024, 0.52, 1.19, 1.71),
    ("Projector", 2048, 1.05, 1.19, 2.24),
    ("LLM", 2048, 1.05, 1.19, 2.24),
)


@dataclass(frozen=True)
class ProbeSpec:
    """1×1 瓶颈 (c_in→512, GroupNorm, SiLU) 接一个 3×3 卷积 (512→256) 和 1×1 预测卷积 (256→5)"""

    c_in: int
    bottleneck: int = BOTTLENECK_CHANNELS
    head_channels: int = HEAD_CHANNELS
    head_kernel: int = HEAD_KERNEL
    prediction_channels: int = PREDICTION_CHANNELS

    def __post_init__(self):
        if isinstance(self.c_in, bool) or int(self.c_in) != self.c_in or self.c_in <= 0:
            raise ValueError(f"c_in={self.c_in} 必须是正整数")


def probe_param_count(spec: ProbeSpec) -> Dict[str, int]:
    b, c = spec.bottleneck, spec.head_channels
    # 1×1 卷积权重 + 偏置 + GroupNorm 的 γ/β
    bottleneck = spec.c_in * b + b + 2 * b
    head = b * c * spec.head_kernel**2 + c + c * spec.prediction_channels + spec.prediction_channels
    return {"bottleneck_params": bottleneck, "head_params": head, "total": bottleneck + head}


def _millions(n: float) -> str:
    return f"{n / 1e6:.3f}M"


def probe_table(channels: Iterable[int]) -> Table:
    table = Table(show_header=True, header_style="bold magenta", title="探针参数量")
    table.add_column("c_in", justify="right")
    table.add_column("瓶颈层", justify="right")
    table.add_column("检测头", justify="right")
    table.add_column("合计", justify="right")
    table.add_column("参考", justify="left")
    for c_in in channels:
        counts = probe_param_count(ProbeSpec(c_in))
        refs = [f"{name} ~{total:.2f}M" for name, ch, _, _, total in REFERENCE_ROWS if ch == c_in]
        table.add_row(
            str(c_in),
            _millions(counts["bottleneck_params"]),
            _millions(counts["head_params"]),
            _millions(counts["total"]),
            ", ".join(refs) or "-",
        )
    return table


def print_probe_table(channels: List[int], console: Optional[Console] = None) -> List[Dict[str, int]]:
    console = console or Console()
    console.print(probe_table(channels))
    return [dict(c_in=c, **probe_param_count(ProbeSpec(c))) for c in channels]
