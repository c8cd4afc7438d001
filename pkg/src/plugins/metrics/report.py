from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from src.common.logger import get_module_logger, LogConfig, METRICS_STYLE_CONFIG
from src.plugins.mas.attention_record import AttentionRecord, load_record
from src.plugins.mas.mas_core import (
    MasConfig,
    ZeroDenominator,
    select_target_steps,
    summarize_records,
    visual_attention_grid,
)
from src.plugins.raster.rle import rle_decode_mask
from src.plugins.raster.sample_io import check_manifest, load_manifest, read_index
from src.plugins.scene.case_code import ALL_CASE_CODES, parse_case_code
from src.plugins.scene.scene_types import PatchGrid
from src.plugins.utils.jsonl import content_hash, read_jsonl, write_json

from .analysis import DegenerateInput, count_correlation, mean_of_defined, per_case_correlations
from .answer_parser import (
    ACCURACY_RULE,
    ModelResponse,
    accuracy,
    conflict_shift_rate,
    per_case_breakdown,
    per_count_breakdown,
    score_response,
    split_matched,
    strict_accuracy,
)
from .detection import Detection, ap, dataset_pr_curve
from .grounding import attention_reward_score, attn_iou, visual_region_attention

metrics_config = LogConfig(
    console_format=METRICS_STYLE_CONFIG["console_format"],
    file_format=METRICS_STYLE_CONFIG["file_format"],
)
logger = get_module_logger("metrics", config=metrics_config)

PathLike = Union[str, Path]

# 不参与内容哈希的字段
UNHASHED_FIELDS = ("generated_at", "content_hash")


@dataclass
class DatasetView:
    """评测需要的真实信息，按索引顺序排列"""

    root: Path
    manifests: Dict[str, dict] = field(default_factory=dict)

    @property
    def ground_truth(self) -> Dict[str, int]:
        return {sid: int(m["count"]) for sid, m in self.manifests.items()}

    @property
    def case_of(self) -> Dict[str, str]:
        return {sid: m["case_code"] for sid, m in self.manifests.items()}

    @property
    def object_names(self) -> Dict[str, str]:
        return {
            sid: "circles" if parse_case_code(m["case_code"]).dilated else "shapes" for sid, m in self.manifests.items()
        }

    def grid(self, sample_id: str) -> PatchGrid:
        m = self.manifests[sample_id]
        return PatchGrid(int(m["image_size"]), int(m["patch_size"]))

    def masks(self, sample_id: str) -> List[np.ndarray]:
        m = self.manifests[sample_id]
        size = int(m["image_size"])
        return [rle_decode_mask(text, (size, size)) for text in m["masks_rle"]]

    def boxes(self, sample_id: str) -> List[tuple]:
        return [tuple(float(v) for v in box) for box in self.manifests[sample_id]["boxes"]]


def load_dataset_view(root: PathLike) -> DatasetView:
    root = Path(root)
    view = DatasetView(root=root)
    for entry in read_index(root):
        manifest = load_manifest(root / entry.manifest)
        check_manifest(manifest, entry.manifest)
        view.manifests[manifest["id"]] = manifest
    logger.info(f"从 {root} 读取了 {len(view.manifests)} 个样本的清单")
    return view


def load_responses(path: PathLike) -> List[ModelResponse]:
    return [ModelResponse.from_dict(row) for row in read_jsonl(path)]


def load_detections(path: PathLike) -> Dict[str, List[Detection]]:
    """每行 {sample_id, detections: [{box, confidence, label?}]}，同一样本可分多行"""
    result: Dict[str, List[Detection]] = {}
    for row in read_jsonl(path):
        result.setdefault(str(row["sample_id"]), []).extend(Detection.from_dict(d) for d in row["detections"])
    return result


def load_attention_dir(path: PathLike) -> Dict[str, AttentionRecord]:
    """目录下每个 <sample_id>.json 头及其 .bin 载荷是一条记录"""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"注意力记录目录不存在: {path}")
    return {header.stem: load_record(header) for header in sorted(path.glob("*.json"))}


@dataclass
class EvaluationInputs:
    dataset: DatasetView
    responses: Sequence[ModelResponse]
    attention: Mapping[str, AttentionRecord] = field(default_factory=dict)
    detections: Optional[Mapping[str, Sequence[Detection]]] = None


def _grounding_section(
    inputs: EvaluationInputs, matched: Sequence[ModelResponse], mas: MasConfig, k_percent: float, skipped: List[dict]
) -> Optional[dict]:
    if not inputs.attention:
        return None
    gt = inputs.dataset.ground_truth
    correct_of = {
        r.sample_id: bool(score_response(r.raw_text, gt[r.sample_id])) for r in matched if r.variant == "standard"
    }
    ious: Dict[str, float] = {}
    vras: Dict[str, float] = {}
    usable: List[AttentionRecord] = []
    for sample_id in sorted(inputs.attention):
        record = inputs.attention[sample_id]
        if sample_id not in gt:
            skipped.append({"sample_id": sample_id, "reason": "样本不在数据集中"})
            continue
        grid = inputs.dataset.grid(sample_id)
        try:
            targets = select_target_steps(record.roles)
            attn_grid = visual_attention_grid(record, targets, mas.layers, grid.grid_dim)
            masks = inputs.dataset.masks(sample_id)
            ious[sample_id] = attn_iou(attn_grid, masks, grid, k_percent)
            vras[sample_id] = visual_region_attention(attn_grid, masks, grid)
            usable.append(record)
        except (ZeroDenominator, ValueError) as e:
            skipped.append({"sample_id": sample_id, "reason": str(e)})
            logger.warning(f"{sample_id} 的注意力记录无法用于定位统计: {e}")

    def mean_over(ids) -> Optional[float]:
        values = [ious[s] for s in ids]
        return float(np.mean(values)) if values else None

    section = {
        "n_records": len(ious),
        "attn_iou_mean": mean_over(ious),
        "attn_iou_correct": mean_over([s for s in ious if correct_of.get(s) is True]),
        "attn_iou_incorrect": mean_over([s for s in ious if correct_of.get(s) is False]),
        "vra_median": float(np.median(list(vras.values()))) if vras else None,
        "ars_mean": float(np.mean([attention_reward_score(v) for v in vras.values()])) if vras else None,
        "mas": summarize_records(usable, mas).to_dict() if usable else None,
    }
    return section


def _detection_section(inputs: EvaluationInputs, iou_threshold: float) -> Optional[dict]:
    if inputs.detections is None:
        return None
    gt_boxes = {sid: inputs.dataset.boxes(sid) for sid in inputs.dataset.manifests}
    detections = {sid: dets for sid, dets in inputs.detections.items() if sid in gt_boxes}
    points = dataset_pr_curve(detections, gt_boxes, iou_threshold)
    return {
        "iou_threshold": iou_threshold,
        "n_detections": len(points),
        "ap": ap(points),
        "unmatched_samples": sorted(sid for sid in inputs.detections if sid not in gt_boxes),
    }


def build_report(
    inputs: EvaluationInputs,
    run_config: dict,
    mas: Optional[MasConfig] = None,
    k_percent: float = 10.0,
    iou_threshold: float = 0.5,
    generated_at: Optional[str] = None,
) -> dict:
    """汇总全部指标；generated_at 与 content_hash 之外的内容只由输入决定"""
    mas = mas or MasConfig()
    gt = inputs.dataset.ground_truth
    object_names = inputs.dataset.object_names
    matched, unmatched = split_matched(inputs.responses, gt)
    answered = {r.sample_id for r in matched}
    missing = [sid for sid in gt if sid not in answered]
    notes: List[str] = []

    variants: Dict[str, List[ModelResponse]] = {}
    for r in matched:
        variants.setdefault(r.variant, []).append(r)
    # 分用例、分数量的表只看标准提示词
    standard = variants.get("standard", [])

    by_count = per_count_breakdown(standard, gt)
    try:
        r_overall: Optional[float] = count_correlation(by_count)
    except DegenerateInput as e:
        r_overall = None
        notes.append(f"数量-准确率相关系数无定义: {e}")
    case_of = inputs.dataset.case_of
    case_tables = {}
    for case in ALL_CASE_CODES:
        rows = [r for r in standard if case_of[r.sample_id] == str(case)]
        if rows:
            case_tables[str(case)] = per_count_breakdown(rows, gt)
    per_case_r = per_case_correlations(case_tables)

    attn_skipped: List[dict] = []
    report = {
        "generated_at": generated_at or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": run_config,
        "accuracy_rule": ACCURACY_RULE,
        "accuracy": {
            "overall": accuracy(matched, gt),
            "strict": strict_accuracy(matched, gt, object_names),
            "n_responses": len(matched),
        },
        "by_variant": {name: accuracy(rows, gt) for name, rows in sorted(variants.items())},
        "by_case": per_case_breakdown(standard, gt, case_of, order=[str(c) for c in ALL_CASE_CODES]),
        "by_count": {str(c): v for c, v in by_count.items()},
        "correlation": {
            "overall": r_overall,
            "per_case": per_case_r,
            "mean_per_case": mean_of_defined(per_case_r),
        },
        "conflict_shift_rate": conflict_shift_rate(matched, object_names),
        "grounding": _grounding_section(inputs, matched, mas, k_percent, attn_skipped),
        "detection": _detection_section(inputs, iou_threshold),
        "coverage": {
            "unmatched": sorted({r.sample_id for r in unmatched}),
            "missing": missing,
            "attn_skipped": attn_skipped,
        },
    }
    partial = bool(unmatched or missing or attn_skipped)
    if unmatched:
        notes.append(f"{len(unmatched)} 条回答找不到对应样本")
    if missing:
        notes.append(f"{len(missing)} 个样本没有回答")
    report["flags"] = {"partial_coverage": partial}
    report["notes"] = notes
    report["content_hash"] = report_hash(report)
    return report


def report_hash(report: dict) -> str:
    return content_hash({k: v for k, v in report.items() if k not in UNHASHED_FIELDS})


def write_report(report: dict, path: PathLike) -> Path:
    path = write_json(path, report)
    logger.info(f"评测报告已写入 {path}")
    return path
