import math
import string
import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.plugins.mas.attention_record import AttentionRecord, TokenRole
from src.plugins.metrics.analysis import DegenerateInput, count_correlation, pearson_corr, per_case_correlations
from src.plugins.metrics.answer_parser import (
    ACCURACY_RULE,
    ModelResponse,
    UnmatchedSample,
    accuracy,
    conflict_shift_rate,
    parse_count,
    per_count_breakdown,
    score_response,
    strict_accuracy,
)
from src.plugins.metrics.detection import Detection, PRPoint, ap, box_iou, dataset_pr_curve, pr_curve
from src.plugins.metrics.grounding import (
    DimensionMismatch,
    attention_reward_score,
    attn_iou,
    binarize_topk,
    topk_count,
    visual_region_attention,
)
from src.plugins.metrics.report import EvaluationInputs, build_report, load_dataset_view, report_hash
from src.plugins.raster.raster import render
from src.plugins.raster.sample_io import IndexEntry, write_index, write_sample
from src.plugins.scene.scene_gen import sample_scene
from src.plugins.scene.scene_types import PatchGrid

SMALL_GRID = PatchGrid(224, 28)


def _cell_mask(cells, grid: PatchGrid = SMALL_GRID) -> np.ndarray:
    p = grid.patch_size
    mask = np.zeros((grid.image_size, grid.image_size), dtype=bool)
    for i, j in cells:
        mask[i * p : (i + 1) * p, j * p : (j + 1) * p] = True
    return mask


class TestAnswerParser(unittest.TestCase):
    def test_parse_count(self):
        """格式行、数词与扫描顺序"""
        self.assertEqual(parse_count("There are five red apples", "apples"), 5)
        self.assertEqual(parse_count("circles: 7", "circles"), 7)
        self.assertEqual(parse_count("I count twelve, maybe 13", "circles"), 12)
        self.assertEqual(parse_count("shapes: twenty-one", "shapes"), 21)
        self.assertIsNone(parse_count("no idea", "shapes"))
        self.assertIsNone(parse_count(None, "shapes"))

    def test_parse_count_fuzz(self):
        """随机文本不抛异常；前面没有数字时取格式行里的数量"""
        rng = np.random.default_rng(11)
        # 这些字符拼不出任何英文数词
        junk = list("xyzqjkpbcdm .,!?;()[]\"'") + ["计", "数", "é", "\n", "\t"]
        for _ in range(2000):
            text = "".join(rng.choice(junk, size=int(rng.integers(0, 40))))
            self.assertIsNone(parse_count(text, "shapes"))
            n = int(rng.integers(0, 100))
            self.assertEqual(parse_count(f"{text} shapes: {n}{text}", "shapes"), n)
            noisy = "".join(rng.choice(list(string.printable), size=int(rng.integers(0, 60))))
            value = parse_count(noisy, "shapes")
            self.assertTrue(value is None or (isinstance(value, int) and value >= 0))
        self.assertIsNone(parse_count("9" * 5000, "shapes"))
        self.assertIsNone(parse_count("shapes: " + "9" * 5000, "shapes"))
        self.assertEqual(parse_count("shapes: " + "9" * 5000 + " or 4", "shapes"), 4)
        self.assertEqual(parse_count(7, "shapes"), 7)
        self.assertEqual(parse_count(b"shapes: 3", "shapes"), 3)

    def test_score(self):
        """真实数量必须以完整记号出现"""
        self.assertEqual(score_response("There are five red apples", 5), 1)
        self.assertEqual(score_response("There are four red apples", 5), 0)
        self.assertEqual(score_response("I see 120 dots", 12), 0)
        self.assertEqual(score_response("Maybe 4, no, 5", 5), 1)

    def test_accuracy(self):
        """准确率按回答平均，找不到样本时报错"""
        gt = {"a": 5, "b": 5}
        responses = [
            ModelResponse("a", "standard", "There are five red apples"),
            ModelResponse("b", "standard", "There are four red apples"),
        ]
        self.assertAlmostEqual(accuracy(responses, gt), 0.5)
        self.assertAlmostEqual(strict_accuracy(responses, gt, {"a": "apples", "b": "apples"}), 0.5)
        self.assertEqual(accuracy([], gt), 0.0)
        with self.assertRaises(UnmatchedSample):
            accuracy([ModelResponse("c", "standard", "5")], gt)

    def test_per_count(self):
        """按数量分组，全错的数量记 0"""
        gt = {"a": 5, "b": 7, "c": 7}
        responses = [
            ModelResponse("a", "standard", "shapes: 5"),
            ModelResponse("b", "standard", "shapes: 6"),
            ModelResponse("c", "standard", "shapes: 8"),
        ]
        self.assertEqual(per_count_breakdown(responses, gt), {5: 1.0, 7: 0.0})
        self.assertEqual(per_count_breakdown([], gt), {})

    def test_conflict_shift(self):
        """冲突提示下答出断言数量的比例"""
        responses = [
            ModelResponse("a", "conflict", "shapes: 6", false_count=6),
            ModelResponse("b", "conflict", "shapes: 5", false_count=7),
            ModelResponse("c", "standard", "shapes: 6"),
        ]
        self.assertAlmostEqual(conflict_shift_rate(responses, {"a": "shapes", "b": "shapes"}), 0.5)
        self.assertIsNone(conflict_shift_rate(responses[2:]))


class TestAnalysis(unittest.TestCase):
    def test_linear(self):
        """准确率随数量线性下降时 r = -1"""
        table = {c: 1.0 - (c - 3) / 9 for c in range(3, 13)}
        self.assertAlmostEqual(count_correlation(table), -1.0)
        self.assertAlmostEqual(pearson_corr([1, 2, 3], [1, 2, 3]), 1.0)

    def test_degenerate(self):
        """常数准确率或点数不足时无定义"""
        with self.assertRaises(DegenerateInput):
            count_correlation({3: 0.5, 4: 0.5, 5: 0.5})
        with self.assertRaises(DegenerateInput):
            pearson_corr([1.0], [2.0])
        self.assertEqual(per_case_correlations({"1A": {3: 1.0}})["1A"], None)


class TestGrounding(unittest.TestCase):
    def test_topk_ties(self):
        """并列时按行优先序号选取"""
        self.assertEqual(topk_count(10, 256), 26)
        mask = binarize_topk(np.full((2, 2), 0.25), 25)
        self.assertEqual(mask.tolist(), [[True, False], [False, False]])
        hot = np.zeros((4, 4))
        hot[2, 3] = 1.0
        mask = binarize_topk(hot, 10)
        self.assertEqual(int(mask.sum()), 2)
        self.assertTrue(mask[2, 3] and mask[0, 0])
        self.assertTrue(binarize_topk(hot, 100).all())

    def test_topk_set_bits(self):
        """置位个数等于 ⌈k·cells/100⌉，并列时按行优先序号"""
        rng = np.random.default_rng(5)
        for side in (1, 3, 8, 16):
            cells = side * side
            for k in range(1, 101):
                n = (k * cells + 99) // 100
                self.assertEqual(topk_count(k, cells), n)
                values = rng.integers(0, 3, size=(side, side)).astype(float)
                mask = binarize_topk(values, k)
                self.assertEqual(int(mask.sum()), n)
                # 被选中的值不小于未选中的值；同值里选中的都排在未选中的前面
                flat, picked = values.ravel(), mask.ravel()
                if n < cells:
                    self.assertGreaterEqual(flat[picked].min(), flat[~picked].max())
                    boundary = flat[picked].min()
                    tied = np.flatnonzero(flat == boundary)
                    chosen = tied[picked[tied]]
                    self.assertEqual(chosen.tolist(), tied[: len(chosen)].tolist())
        self.assertEqual(topk_count(10.5, 200), 21)
        with self.assertRaises(ValueError):
            binarize_topk(np.ones((2, 2)), 0)

    def test_iou_exhaustive_small_grid(self):
        """1 像素 patch 的 8×8 网格上，每个 k 与一批掩码都和集合运算结果一致"""
        grid = PatchGrid(8, 1)
        rng = np.random.default_rng(2)
        attn = rng.permutation(64).astype(float).reshape(8, 8)
        ranked = sorted(range(64), key=lambda idx: -attn.ravel()[idx])
        masks = [rng.random((8, 8)) < rng.random() for _ in range(30)]
        for k in range(1, 101):
            top = set(ranked[: math.ceil(k * 64 / 100)])
            for gt in masks:
                truth = {int(i) for i in np.flatnonzero(gt)}
                union = top | truth
                want = len(top & truth) / len(union) if union else 0.0
                self.assertAlmostEqual(attn_iou(attn, [gt], grid, k_percent=k), want, places=12)

    def test_iou_examples(self):
        """完全一致、不相交与半重叠"""
        attn = np.zeros((8, 8))
        attn[0, :7] = 1.0
        self.assertAlmostEqual(attn_iou(attn, [_cell_mask([(0, j) for j in range(7)])], SMALL_GRID), 1.0)
        self.assertAlmostEqual(attn_iou(attn, [_cell_mask([(7, 7)])], SMALL_GRID), 0.0)

        attn = np.zeros((8, 8))
        attn[0, 0] = attn[0, 1] = 1.0
        gt = [_cell_mask([(0, 1)]), _cell_mask([(0, 2)])]
        self.assertAlmostEqual(attn_iou(attn, gt, SMALL_GRID, k_percent=3), 1.0 / 3.0)

    def test_iou_brute_force(self):
        """与逐像素的直接计算一致"""
        rng = np.random.default_rng(3)
        for _ in range(5):
            attn = rng.random((8, 8))
            gt = rng.random((224, 224)) < 0.2
            top = np.argsort(-attn.ravel())[:7]
            expected = np.zeros((224, 224), dtype=bool)
            for idx in top:
                i, j = divmod(int(idx), 8)
                expected[i * 28 : (i + 1) * 28, j * 28 : (j + 1) * 28] = True
            want = np.logical_and(expected, gt).sum() / np.logical_or(expected, gt).sum()
            self.assertAlmostEqual(attn_iou(attn, [gt], SMALL_GRID), float(want))

    def test_dimension_mismatch(self):
        """网格尺寸不符时报错"""
        with self.assertRaises(DimensionMismatch):
            attn_iou(np.ones((4, 4)), [_cell_mask([(0, 0)])], SMALL_GRID)

    def test_vra(self):
        """注意力全部落在物体上为 1，覆盖半个格子为 0.5"""
        attn = np.zeros((8, 8))
        attn[0, 0] = 1.0
        self.assertAlmostEqual(visual_region_attention(attn, [_cell_mask([(0, 0)])], SMALL_GRID), 1.0)
        half = np.zeros((224, 224), dtype=bool)
        half[:14, :28] = True
        self.assertAlmostEqual(visual_region_attention(attn, [half], SMALL_GRID), 0.5)
        with self.assertRaises(DegenerateInput):
            visual_region_attention(np.zeros((8, 8)), [half], SMALL_GRID)

    def test_ars(self):
        """VRA 0.425 对应 ARS -0.15"""
        self.assertAlmostEqual(attention_reward_score(0.425), -0.15)


class TestDetection(unittest.TestCase):
    def test_pr_curve(self):
        """单个正确检测与先错后对"""
        gt = [(0.0, 0.0, 10.0, 10.0)]
        points = pr_curve([Detection((0.0, 0.0, 10.0, 10.0), 0.9)], gt)
        self.assertEqual(points, [PRPoint(1.0, 1.0, 1)])
        self.assertAlmostEqual(ap(points), 1.0)

        points = pr_curve(
            [Detection((0.0, 0.0, 10.0, 10.0), 0.8), Detection((50.0, 50.0, 60.0, 60.0), 0.9)],
            gt,
        )
        self.assertEqual([(p.precision, p.recall) for p in points], [(0.0, 0.0), (0.5, 1.0)])
        self.assertAlmostEqual(ap(points), 0.5)
        self.assertEqual(pr_curve([], gt), [])
        self.assertEqual(ap([]), 0.0)

    def test_duplicate_detection(self):
        """同一个真实框只匹配一次"""
        gt = [(0.0, 0.0, 10.0, 10.0)]
        dets = [Detection((0.0, 0.0, 10.0, 10.0), 0.9), Detection((0.0, 0.0, 10.0, 9.0), 0.8)]
        points = pr_curve(dets, gt)
        self.assertEqual([(p.precision, p.recall) for p in points], [(1.0, 1.0), (0.5, 1.0)])

    def test_ap_brute_force(self):
        """数据集 AP 等于逐点求和"""
        gt = {"a": [(0.0, 0.0, 10.0, 10.0), (20.0, 20.0, 30.0, 30.0)], "b": [(0.0, 0.0, 5.0, 5.0)]}
        dets = {
            "a": [Detection((0.0, 0.0, 10.0, 10.0), 0.7), Detection((40.0, 40.0, 50.0, 50.0), 0.95)],
            "b": [Detection((0.0, 0.0, 5.0, 5.0), 0.8)],
        }
        points = dataset_pr_curve(dets, gt)
        # 排序: a-FP(.95), b-TP(.8), a-TP(.7)
        self.assertEqual([(p.precision, p.recall) for p in points], [(0.0, 0.0), (0.5, 1 / 3), (2 / 3, 2 / 3)])
        self.assertAlmostEqual(ap(points), 1 / 3 * 0.5 + 1 / 3 * 2 / 3)

    def test_ap_oracle(self):
        """≤4 个检测、≤3 个真实框的随机组合：IoU 用像素计数，AP 用命中处的精度求和"""
        rng = np.random.default_rng(9)

        def random_box():
            x0, y0 = (int(v) for v in rng.integers(0, 7, size=2))
            return (float(x0), float(y0), float(x0 + rng.integers(1, 4)), float(y0 + rng.integers(1, 4)))

        def pixel_iou(a, b):
            canvas_a = np.zeros((12, 12), dtype=bool)
            canvas_b = np.zeros((12, 12), dtype=bool)
            canvas_a[int(a[1]) : int(a[3]), int(a[0]) : int(a[2])] = True
            canvas_b[int(b[1]) : int(b[3]), int(b[0]) : int(b[2])] = True
            return np.count_nonzero(canvas_a & canvas_b) / np.count_nonzero(canvas_a | canvas_b)

        for _ in range(500):
            gt = [random_box() for _ in range(int(rng.integers(0, 4)))]
            dets = []
            for _ in range(int(rng.integers(0, 5))):
                box = gt[int(rng.integers(len(gt)))] if gt and rng.random() < 0.6 else random_box()
                dets.append(Detection(box, float(rng.choice([0.3, 0.5, 0.7, 0.9]))))

            order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
            used, hits, want = set(), 0, 0.0
            for rank, i in enumerate(order, start=1):
                scores = [(pixel_iou(dets[i].box, g), -j) for j, g in enumerate(gt) if j not in used]
                scores = [s for s in scores if s[0] >= 0.5]
                if scores:
                    used.add(-max(scores)[1])
                    hits += 1
                    want += (hits / rank) / len(gt)
            points = pr_curve(dets, gt)
            self.assertEqual(len(points), len(dets))
            self.assertAlmostEqual(ap(points), want, places=12)
            if dets:
                self.assertEqual(points[-1].recall, hits / len(gt) if gt else 0.0)
            for a, b in zip(dets, gt):
                self.assertAlmostEqual(box_iou(a.box, b), pixel_iou(a.box, b), places=12)

    def test_invalid_box(self):
        """退化的检测框被拒绝"""
        with self.assertRaises(ValueError):
            Detection((5.0, 0.0, 5.0, 10.0), 0.5)


def _uniform_record(n_visual: int) -> AttentionRecord:
    roles = [TokenRole.VISUAL] * n_visual + [TokenRole.TEXT] * 2 + [TokenRole.GENERATED]
    row = np.concatenate([np.full(n_visual, 0.5 / n_visual), [0.25, 0.25], [0.0]])
    return AttentionRecord(weights=row.reshape(1, 1, 1, -1), roles=tuple(roles))


class TestReport(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        entries = []
        for index, n in enumerate((3, 4)):
            sample_id = f"1A_{index:06d}"
            sample = render(sample_scene("1A", n, seed=index), sample_id)
            paths = write_sample(sample, self.root)
            entries.append(IndexEntry(paths.manifest.relative_to(self.root).as_posix(), "1A", n))
            if index == 0:
                self.first_box = sample.boxes[0]
        write_index(entries, self.root)

    def tearDown(self):
        self.tmp.cleanup()

    def _inputs(self) -> EvaluationInputs:
        responses = [
            ModelResponse("1A_000000", "standard", "shapes: 3"),
            ModelResponse("1A_000001", "standard", "shapes: 5"),
            ModelResponse("1A_000000", "conflict", "shapes: 4", false_count=4),
            ModelResponse("9Z_000000", "standard", "shapes: 3"),
        ]
        return EvaluationInputs(
            dataset=load_dataset_view(self.root),
            responses=responses,
            attention={"1A_000000": _uniform_record(256)},
            detections={"1A_000000": [Detection(tuple(float(v) for v in self.first_box), 0.9)]},
        )

    def test_report(self):
        """报告的准确率、相关系数、定位与检测部分"""
        report = build_report(self._inputs(), {"seed": 0}, generated_at="2024-01-01T00:00:00+00:00")
        self.assertAlmostEqual(report["accuracy"]["overall"], 1 / 3)
        self.assertAlmostEqual(report["accuracy"]["strict"], 1 / 3)
        self.assertEqual(report["by_variant"], {"conflict": 0.0, "standard": 0.5})
        self.assertEqual(report["by_case"], {"1A": 0.5})
        self.assertEqual(report["by_count"], {"3": 1.0, "4": 0.0})
        self.assertAlmostEqual(report["correlation"]["overall"], -1.0)
        self.assertAlmostEqual(report["conflict_shift_rate"], 1.0)

        grounding = report["grounding"]
        self.assertEqual(grounding["n_records"], 1)
        self.assertAlmostEqual(grounding["mas"]["mean"], 0.5)
        self.assertEqual(grounding["mas"]["hinge"], 0.0)
        self.assertIsNotNone(grounding["attn_iou_correct"])
        self.assertIsNone(grounding["attn_iou_incorrect"])

        self.assertAlmostEqual(report["detection"]["ap"], 1 / 7)
        self.assertEqual(report["coverage"]["unmatched"], ["9Z_000000"])
        self.assertTrue(report["flags"]["partial_coverage"])
        self.assertEqual(report["accuracy_rule"], ACCURACY_RULE)
        self.assertIn("token-boundary", report["accuracy_rule"])

    def test_hash_stable(self):
        """除生成时间外报告只由输入决定"""
        a = build_report(self._inputs(), {"seed": 0}, generated_at="2024-01-01T00:00:00+00:00")
        b = build_report(self._inputs(), {"seed": 0}, generated_at="2025-06-01T00:00:00+00:00")
        self.assertEqual(a["content_hash"], b["content_hash"])
        self.assertEqual(report_hash(a), a["content_hash"])


if __name__ == "__main__":
    unittest.main()
