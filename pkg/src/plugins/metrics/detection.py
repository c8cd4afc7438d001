import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

Box = Tuple[float, float, float, float]


@dataclass(frozen=True)
class Detection:
    box: Box
    confidence: float
    label: str = "object"

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"检测框 {self.box} 不满足 x_min < x_max 且 y_min < y_max")

    @classmethod
    def from_dict(cls, data: dict) -> "Detection":
        return cls(
            box=tuple(float(v) for v in data["box"]),
            confidence=float(data["confidence"]),
            label=str(data.get("label", "object")),
        )


@dataclass(frozen=True)
class PRPoint:
    precision: float
    recall: float
    rank: int


def box_iou(a: Sequence[float], b: Sequence[float]) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def _greedy_curve(
    ranked: List[Tuple[Detection, Sequence[Box], set]], total_gt: int, iou_threshold: float
) -> List[PRPoint]:
    points: List[PRPoint] = []
    tp = 0
    for n, (det, gt_boxes, matched) in enumerate(ranked, start=1):
        best_j, best_iou = None, -1.0
        for j, gt in enumerate(gt_boxes):
            if j in matched:
                continue
            iou = box_iou(det.box, gt)
            # 严格大于：并列时保留序号较小的真实框
            if iou >= iou_threshold and iou > best_iou:
                best_j, best_iou = j, iou
        if best_j is not None:
            matched.add(best_j)
            tp += 1
        recall = tp / total_gt if total_gt else 0.0
        points.append(PRPoint(precision=tp / n, recall=recall, rank=n))
    return points


def _check_confidences(detections: Sequence[Detection]) -> None:
    for det in detections:
        if not math.isfinite(det.confidence):
            raise ValueError(f"置信度必须是有限值: {det.confidence}")


def pr_curve(detections: Sequence[Detection], gt_boxes: Sequence[Box], iou_threshold: float = 0.5) -> List[PRPoint]:
    """按置信度降序（同分保持输入顺序）贪心匹配，每个前缀 n 给出一个点"""
    _check_confidences(detections)
    ranked = sorted(detections, key=lambda d: -d.confidence)
    matched: set = set()
    return _greedy_curve([(d, gt_boxes, matched) for d in ranked], len(gt_boxes), iou_threshold)


def dataset_pr_curve(
    detections: Mapping[str, Sequence[Detection]],
    gt_boxes: Mapping[str, Sequence[Box]],
    iou_threshold: float = 0.5,
) -> List[PRPoint]:
    """所有样本的检测合并后统一按置信度排序，只与本样本的真实框匹配"""
    pooled = []
    matched: Dict[str, set] = {sample_id: set() for sample_id in gt_boxes}
    for sample_id in sorted(detections):
        _check_confidences(detections[sample_id])
        boxes = gt_boxes.get(sample_id, [])
        bucket = matched.setdefault(sample_id, set())
        pooled.extend((det, boxes, bucket) for det in detections[sample_id])
    pooled.sort(key=lambda item: -item[0].confidence)
    total_gt = sum(len(boxes) for boxes in gt_boxes.values())
    return _greedy_curve(pooled, total_gt, iou_threshold)


def ap(points: Sequence[PRPoint]) -> float:
    """AP = Σ (R_n − R_{n−1}) · P_n，R_0 = 0，不做插值"""
    total = 0.0
    prev_recall = 0.0
    for point in points:
        if point.recall < prev_recall - 1e-12:
            raise ValueError("召回率必须单调不减")
        total += (point.recall - prev_recall) * point.precision
        prev_recall = point.recall
    return total
