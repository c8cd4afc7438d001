import unittest

import numpy as np

from src.plugins.scene.case_code import ALL_CASE_CODES, CaseCode, InvalidCode, parse_case_code, parse_case_list
from src.plugins.scene.placement import (
    CLUSTER_GAP,
    Infeasible,
    anchor_sites,
    layout_gaps,
    packing_bound,
    placement_centers,
)
from src.plugins.scene.scene_gen import (
    count_for_index,
    derive_sample_seed,
    object_name_for_scene,
    sample_scene,
    validate_scene,
)
from src.plugins.scene.scene_types import InvalidGrid, ObjectSpec, PatchGrid, Scene, Shape


# 8A 在 16×16 网格上放 12 个圆的一种密排（格子下标，相对最靠左上的可用格子）
DENSE_8A = [(0, 0), (11, 0), (11, 11), (0, 11), (0, 7), (4, 0), (11, 4), (7, 11), (3, 4), (7, 3), (8, 7), (4, 8)]


def _pairwise_min(cells) -> float:
    pts = np.asarray(cells, dtype=np.float64)
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    return float(dist[np.triu_indices(len(pts), 1)].min())


class TestCaseCode(unittest.TestCase):
    def test_inventory(self):
        """用例码一共 32 个，顺序从 1A 开始到 15B 结束"""
        self.assertEqual(len(ALL_CASE_CODES), 32)
        self.assertEqual(str(ALL_CASE_CODES[0]), "1A")
        self.assertEqual(str(ALL_CASE_CODES[-1]), "15B")
        self.assertEqual(len(set(ALL_CASE_CODES)), 32)

    def test_parse(self):
        """合法用例码解析成前缀与后缀"""
        self.assertEqual(parse_case_code("4A"), CaseCode(4, "A"))
        self.assertEqual(parse_case_code("9B"), CaseCode(9, "B"))
        self.assertEqual(parse_case_code(" 2d "), CaseCode(2, "D"))

    def test_invalid(self):
        """不存在的用例码抛出 InvalidCode"""
        for text in ("1C", "5B", "16A", "0A", "A1", "", "12"):
            with self.assertRaises(InvalidCode):
                parse_case_code(text)

    def test_parse_list(self):
        """用例列表支持逗号分隔、all 与去重"""
        self.assertEqual([str(c) for c in parse_case_list(["1A,4A", "1A"])], ["1A", "4A"])
        self.assertEqual(len(parse_case_list(["all", "9B"])), 32)


class TestPlacement(unittest.TestCase):
    def setUp(self):
        self.grid = PatchGrid(448, 28)

    def test_grid_defaults(self):
        """默认网格 448/28 是 16×16，非法网格被拒绝"""
        self.assertEqual(self.grid.grid_dim, 16)
        with self.assertRaises(InvalidGrid):
            PatchGrid(448, 30)
        with self.assertRaises(InvalidGrid):
            PatchGrid(224, 56)

    def test_anchor_examples(self):
        """锚点公式：格子中心、竖线、交点"""
        self.assertEqual(anchor_sites(CaseCode(1, "A"), self.grid)[0], (14.0, 14.0))
        self.assertEqual(anchor_sites(CaseCode(2, "A"), self.grid)[0], (28, 14.0))
        self.assertEqual(anchor_sites(CaseCode(4, "A"), self.grid)[0], (28, 28))
        self.assertIn((14.0, 28), anchor_sites(CaseCode(3, "A"), self.grid))

    def test_intersection_centers(self):
        """4A 的每个中心都落在 patch 交点上"""
        for seed in range(10):
            centers = placement_centers(CaseCode(4, "A"), self.grid, 8, np.random.default_rng(seed))
            self.assertEqual(len(set(centers)), 8)
            for x, y in centers:
                self.assertEqual(x % 28, 0)
                self.assertEqual(y % 28, 0)

    def test_infeasible(self):
        """224/28 网格上放不下直径 4p 的圆"""
        with self.assertRaises(Infeasible):
            sample_scene("8A", 3, PatchGrid(224, 28), seed=1)

    def test_cluster_gap(self):
        """9–15 的 A 后缀最小间距等于账本间距且互不重叠"""
        for prefix in range(9, 16):
            scene = sample_scene(CaseCode(prefix, "A"), 7, self.grid, seed=prefix)
            gaps = layout_gaps([o.center for o in scene.objects], [o.diameter for o in scene.objects])
            self.assertGreater(min(gaps.values()), -1e-6)
            self.assertLessEqual(min(gaps.values()), CLUSTER_GAP[prefix] + 1e-3)

    def test_packing_bound(self):
        """12×12 格子、间距 4 的上界正好是 12，且确有 12 点的排法"""
        ii, jj = np.meshgrid(np.arange(12), np.arange(12), indexing="ij")
        cells = np.stack([ii.ravel(), jj.ravel()], axis=1)
        self.assertEqual(packing_bound(cells, 4.0), 12)
        self.assertGreaterEqual(_pairwise_min(DENSE_8A), 4.0)
        self.assertEqual(packing_bound(cells[:0], 4.0), 0)
        # 一行 12 个格子，间距 4 只放得下 0、4、8
        self.assertEqual(packing_bound(cells[cells[:, 0] == 0], 4.0), 3)


class TestSampleScene(unittest.TestCase):
    def test_every_case_validates(self):
        """每个用例 200 个种子、数量在 [3, 12] 内循环，全部通过校验"""
        grid = PatchGrid()
        for case in ALL_CASE_CODES:
            for index in range(200):
                n = count_for_index(index)
                scene = sample_scene(case, n, grid, seed=derive_sample_seed(0, case, index))
                report = validate_scene(scene)
                self.assertTrue(report.ok, f"{case} n={n} index={index}: {report.violations}")

    def test_dense_dilated(self):
        """8A 放满 12 个圆：每个种子都能放下，圆心在格子中心且互不重叠"""
        grid = PatchGrid()
        for seed in range(5):
            scene = sample_scene("8A", 12, grid, seed=seed)
            self.assertTrue(validate_scene(scene).ok)
            cells = [((x / 28) - 0.5, (y / 28) - 0.5) for x, y in (o.center for o in scene.objects)]
            self.assertEqual(len(set(cells)), 12)
            self.assertGreaterEqual(_pairwise_min(cells), 4.0 - 1e-9)


class TestValidateScene(unittest.TestCase):
    def test_boundary_center(self):
        """1A 中心落在 patch 边界上报告对齐错误"""
        scene = sample_scene("1A", 3, seed=0)
        moved = ObjectSpec(Shape.CIRCLE, 0, (28.0, 14.0), scene.objects[0].diameter)
        broken = Scene(scene.case, scene.grid, (moved,) + scene.objects[1:], scene.count, scene.seed)
        self.assertIn("prefix-1 alignment", validate_scene(broken).rules)

    def test_count_range(self):
        """数量 13 报告超出范围"""
        grid = PatchGrid()
        objects = tuple(
            ObjectSpec(Shape.SQUARE, k % 8, ((k + 0.5) * 28, 14.0), 16.8) for k in range(13)
        )
        report = validate_scene(Scene(CaseCode(1, "A"), grid, objects, 13, 0))
        self.assertIn("count out of [3,12]", report.rules)

    def test_overlap(self):
        """两个重叠的物体报告 overlap"""
        grid = PatchGrid()
        objects = (
            ObjectSpec(Shape.CIRCLE, 0, (100.0, 100.0), 16.8),
            ObjectSpec(Shape.CIRCLE, 1, (105.0, 100.0), 16.8),
            ObjectSpec(Shape.CIRCLE, 2, (300.0, 300.0), 16.8),
        )
        report = validate_scene(Scene(CaseCode(9, "B"), grid, objects, 3, 0))
        self.assertIn("overlap", report.rules)


if __name__ == "__main__":
    unittest.main()
