import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.plugins.mas.attention_record import (
    AttentionRecord,
    CorruptRecord,
    TokenRole,
    load_record,
    save_record,
)
from src.plugins.mas.mas_core import (
    EmptyTarget,
    MasConfig,
    ZeroDenominator,
    hinge_loss,
    hinge_subgradient,
    layer_share,
    mas_layer,
    mas_layer_grad,
    mas_mean,
    modality_share_profile,
    select_target_steps,
    summarize_records,
    total_loss,
    visual_attention_grid,
)

V, X, G = TokenRole.VISUAL, TokenRole.TEXT, TokenRole.GENERATED


def _record(rows_per_layer, roles) -> AttentionRecord:
    """每层一行注意力，所有头相同，查询为最后一个位置"""
    weights = np.array([[[row]] for row in rows_per_layer], dtype=np.float64)
    return AttentionRecord(weights=weights, roles=tuple(roles))


def _visual_fraction_row(fraction: float, n_visual: int = 4, n_text: int = 4) -> list:
    return [fraction / n_visual] * n_visual + [(1.0 - fraction) / n_text] * n_text + [0.0]


class TestTargetSteps(unittest.TestCase):
    def test_assistant_span(self):
        """只有助手回答位置是目标步"""
        self.assertEqual(select_target_steps([X] * 5 + [G] * 3), [5, 6, 7])
        self.assertEqual(select_target_steps(["text", "text", "generated", "generated", "text"]), [2, 3])
        with self.assertRaises(EmptyTarget):
            select_target_steps([X] * 4)


class TestMas(unittest.TestCase):
    roles = [V] * 4 + [X] * 4 + [G]

    def test_all_visual(self):
        """全部注意力在视觉键上时为 1"""
        record = _record([[0.25] * 4 + [0.0] * 5], self.roles)
        self.assertAlmostEqual(mas_layer(record, 0, [8]), 1.0)

    def test_uniform(self):
        """视觉与文本键数量相同且均匀时为 0.5"""
        record = _record([[0.125] * 8 + [0.0]], self.roles)
        self.assertAlmostEqual(mas_layer(record, 0, [8]), 0.5)

    def test_fixture_fraction(self):
        """视觉质量占 0.107 的构造"""
        record = _record([_visual_fraction_row(0.107)], self.roles)
        self.assertAlmostEqual(mas_layer(record, 0, [8]), 0.107)

    def test_generated_keys(self):
        """默认分母不含生成键，all_keys 时包含"""
        row = [0.1] * 4 + [0.1] * 4 + [0.2]
        record = _record([row], self.roles)
        self.assertAlmostEqual(mas_layer(record, 0, [8]), 0.5)
        self.assertAlmostEqual(mas_layer(record, 0, [8], all_keys=True), 0.4)

    def test_mean_over_layers(self):
        """两层 0.2 与 0.6 的平均为 0.4"""
        record = _record([_visual_fraction_row(0.2), _visual_fraction_row(0.6)], self.roles)
        self.assertAlmostEqual(mas_mean(record, None, [8]), 0.4)
        self.assertAlmostEqual(mas_mean(record, [1], [8]), 0.6)
        with self.assertRaises(IndexError):
            mas_layer(record, 2, [8])

    def test_zero_denominator(self):
        """目标步只看生成键时分母为零"""
        record = _record([[0.0] * 8 + [1.0]], self.roles)
        with self.assertRaises(ZeroDenominator):
            mas_layer(record, 0, [8])

    def test_gradient(self):
        """解析梯度与中心差分一致"""
        rng = np.random.default_rng(0)
        weights = rng.random((2, 3, 9))
        rows = np.array([1, 2])
        visual = np.array([True] * 4 + [False] * 5)
        denominator = np.array([True] * 8 + [False])
        _, grad = layer_share(weights, rows, visual, denominator, with_grad=True)
        eps = 1e-6
        numeric = np.zeros_like(weights)
        for idx in np.ndindex(weights.shape):
            plus, minus = weights.copy(), weights.copy()
            plus[idx] += eps
            minus[idx] -= eps
            numeric[idx] = (
                layer_share(plus, rows, visual, denominator)[0] - layer_share(minus, rows, visual, denominator)[0]
            ) / (2 * eps)
        self.assertTrue(np.allclose(grad, numeric, atol=1e-7))
        self.assertTrue(np.all(grad[:, 0, :] == 0.0))

    def test_record_gradient(self):
        """mas_layer_grad 的形状与非目标行为零"""
        record = _record([_visual_fraction_row(0.3)], self.roles)
        grad = mas_layer_grad(record, 0, [8])
        self.assertEqual(grad.shape, (1, 1, 9))
        self.assertEqual(grad[0, 0, 8], 0.0)

    def test_profile(self):
        """三类键的份额之和为 1"""
        row = [0.1] * 4 + [0.1] * 4 + [0.2]
        profile = modality_share_profile(_record([row], self.roles), [8])
        share = profile[0]
        self.assertAlmostEqual(share.visual + share.text + share.generated, 1.0)
        self.assertAlmostEqual(share.generated, 0.2)

    def test_grid(self):
        """视觉注意力排成 2×2 网格"""
        row = [0.1, 0.2, 0.3, 0.4] + [0.0] * 5
        grid = visual_attention_grid(_record([row], self.roles), [8], None, 2)
        self.assertTrue(np.allclose(grid, [[0.1, 0.2], [0.3, 0.4]]))

    def test_summary(self):
        """多条记录的份额汇总"""
        records = [_record([_visual_fraction_row(f)], self.roles) for f in (0.2, 0.4)]
        summary = summarize_records(records, MasConfig(tau=0.4))
        self.assertAlmostEqual(summary.mean, 0.3)
        self.assertAlmostEqual(summary.hinge, 0.1)
        self.assertIsNone(summarize_records([], MasConfig()).mean)


class TestShareInvariance(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(7)
        self.rng = rng
        self.weights = rng.random((3, 4, 10))
        self.rows = np.arange(4)
        self.visual = np.array([True] * 4 + [False] * 6)
        self.denominator = np.array([True] * 8 + [False] * 2)

    def _share(self, weights, visual=None, denominator=None) -> float:
        visual = self.visual if visual is None else visual
        denominator = self.denominator if denominator is None else denominator
        return layer_share(weights, self.rows, visual, denominator)[0]

    def test_head_permutation(self):
        """交换注意力头不改变份额"""
        base = self._share(self.weights)
        for _ in range(20):
            perm = self.rng.permutation(3)
            self.assertAlmostEqual(self._share(self.weights[perm]), base, places=12)

    def test_key_permutation(self):
        """键与其角色一起重排不改变份额"""
        base = self._share(self.weights)
        for _ in range(20):
            perm = self.rng.permutation(10)
            shuffled = self._share(self.weights[:, :, perm], self.visual[perm], self.denominator[perm])
            self.assertAlmostEqual(shuffled, base, places=12)

    def test_scaling(self):
        """整体缩放或逐步缩放不改变份额"""
        base = self._share(self.weights)
        self.assertAlmostEqual(self._share(self.weights * 3.7), base, places=12)
        per_step = self.weights * np.array([0.5, 2.0, 7.0, 1.3])[None, :, None]
        self.assertAlmostEqual(self._share(per_step), base, places=12)

    def test_monotone(self):
        """加大视觉键权重份额上升，加大文本键权重份额下降，生成键不影响"""
        base = self._share(self.weights)
        more_visual = self.weights.copy()
        more_visual[:, :, 0] += 0.5
        more_text = self.weights.copy()
        more_text[:, :, 5] += 0.5
        more_generated = self.weights.copy()
        more_generated[:, :, 9] += 0.5
        self.assertGreater(self._share(more_visual), base)
        self.assertLess(self._share(more_text), base)
        self.assertAlmostEqual(self._share(more_generated), base, places=12)
        # 分母包含全部键时生成键会稀释份额
        everything = np.ones(10, dtype=bool)
        self.assertLess(self._share(more_generated, denominator=everything), self._share(self.weights, denominator=everything))

    def test_bounds(self):
        """份额总在 [0, 1] 内"""
        for _ in range(50):
            value = self._share(self.rng.random((3, 4, 10)))
            self.assertGreaterEqual(value, 0.0)
            self.assertLessEqual(value, 1.0)


class TestHinge(unittest.TestCase):
    def test_values(self):
        """τ=0.4 时的铰链损失"""
        self.assertEqual(hinge_loss(0.5, 0.4), 0.0)
        self.assertAlmostEqual(hinge_loss(0.1, 0.4), 0.3)
        self.assertAlmostEqual(hinge_loss(0.0, 0.4), 0.4)
        with self.assertRaises(ValueError):
            hinge_loss(1.5, 0.4)

    def test_subgradient(self):
        """在 τ 处次梯度取 0"""
        self.assertEqual(hinge_subgradient(0.1, 0.4), -1.0)
        self.assertEqual(hinge_subgradient(0.4, 0.4), 0.0)
        self.assertEqual(hinge_subgradient(0.9, 0.4), 0.0)

    def test_total(self):
        """总损失 = CE + λ·L_mas"""
        self.assertAlmostEqual(total_loss(2.0, 0.3, 0.1), 2.03)
        self.assertEqual(total_loss(2.0, 0.3, 0.0), 2.0)
        self.assertEqual(total_loss(2.0, 0.0, 0.1), 2.0)

    def test_config_guard(self):
        """τ 超出范围或 λ 为负被拒绝"""
        with self.assertRaises(ValueError):
            MasConfig(tau=1.5)
        with self.assertRaises(ValueError):
            MasConfig(lam=-0.1)


class TestAttentionRecord(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "sample.json"

    def tearDown(self):
        self.tmp.cleanup()

    def test_row_sum_check(self):
        """行和不为 1 的记录被拒绝"""
        with self.assertRaises(CorruptRecord):
            _record([[0.5] * 9], TestMas.roles)

    def test_round_trip(self):
        """保存后读回，f32 精度内一致"""
        record = _record([_visual_fraction_row(0.3), _visual_fraction_row(0.7)], TestMas.roles)
        save_record(record, self.path)
        loaded = load_record(self.path)
        self.assertEqual(loaded.roles, record.roles)
        self.assertEqual(loaded.step_positions, record.step_positions)
        self.assertTrue(np.allclose(loaded.weights, record.weights, atol=1e-7))

    def test_hash_mismatch(self):
        """载荷被改动时哈希校验失败"""
        record = _record([_visual_fraction_row(0.3)], TestMas.roles)
        _, payload = save_record(record, self.path)
        data = bytearray(payload.read_bytes())
        data[0] ^= 0xFF
        payload.write_bytes(bytes(data))
        with self.assertRaises(CorruptRecord):
            load_record(self.path)

    def test_missing_payload(self):
        """缺少载荷文件"""
        record = _record([_visual_fraction_row(0.3)], TestMas.roles)
        _, payload = save_record(record, self.path)
        payload.unlink()
        with self.assertRaises(FileNotFoundError):
            load_record(self.path)


if __name__ == "__main__":
    unittest.main()
