from time import perf_counter
from typing import Dict, Optional

"""
# 阶段计时器

生成、评测、训练各阶段共用，结果写进 storage 字典后由命令汇总到日志；
耗时只进日志，不进任何需要逐字节复现的产物。

【用法】
timings = {}
with Timer("render", timings):
    ...

同名阶段多次计时会累加。
"""


class TimerTypeError(TypeError):
    __slots__ = ()

    def __init__(self, param, expected_type, actual_type):
        super().__init__(f"参数 '{param}' 类型错误，期望 {expected_type}，实际得到 {actual_type.__name__}")


class Timer:
    __slots__ = ("name", "storage", "elapsed", "start")

    def __init__(self, name: Optional[str] = None, storage: Optional[Dict[str, float]] = None):
        if name is not None and not isinstance(name, str):
            raise TimerTypeError("name", "Optional[str]", type(name))
        if storage is not None and not isinstance(storage, dict):
            raise TimerTypeError("storage", "Optional[dict]", type(storage))
        self.name = name
        self.storage = storage
        self.elapsed: Optional[float] = None
        self.start: Optional[float] = None

    def __enter__(self):
        self.start = perf_counter()
        return self

    def __exit__(self, *args):
        self.elapsed = perf_counter() - self.start
        if self.storage is not None and self.name:
            self.storage[self.name] = self.storage.get(self.name, 0.0) + self.elapsed
        return False


def format_timings(storage: Dict[str, float]) -> str:
    return ", ".join(f"{name}={seconds:.2f}s" for name, seconds in storage.items())
