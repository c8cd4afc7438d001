import hashlib
import json
from pathlib import Path
from typing import Iterable, List, Union

PathLike = Union[str, Path]


class JsonlError(ValueError):
    """JSON-lines 文件中有无法解析的行"""


def _with_path(action: str, path: Path, e: OSError) -> OSError:
    # 异常类型不变，只在消息里加上路径
    return type(e)(e.errno, f"{action} {path} 失败: {e.strerror or e}")


def write_jsonl(path: PathLike, rows: Iterable[dict]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for row in rows:
                f.write(json.dumps(row, ensure_ascii=False) + "\n")
    except OSError as e:
        raise _with_path("写入", path, e) from e
    return path


def read_jsonl(path: PathLike) -> List[dict]:
    path = Path(path)
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = list(f)
    except OSError as e:
        raise _with_path("读取", path, e) from e
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise JsonlError(f"{path}:{lineno} 不是合法的 JSON: {e.msg}") from e
    return rows


def write_json(path: PathLike, data: dict) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(data, ensure_ascii=False, indent=2) + "\n")
    except OSError as e:
        raise _with_path("写入", path, e) from e
    return path


def canonical_json(data) -> str:
    return json.dumps(data, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def content_hash(data) -> str:
    """规范化 JSON 的 SHA-256"""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()
