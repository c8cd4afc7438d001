import json
import tempfile
import unittest
from pathlib import Path

from src.main import EXIT_INVALID, EXIT_OK, EXIT_PARTIAL, MAS_DEMO_DIR, main
from src.plugins.raster.sample_io import INDEX_NAME, PROMPTS_NAME, read_index
from src.plugins.utils.jsonl import read_jsonl, write_jsonl


class TestCommands(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.out = self.root / "out"
        # 指向不存在的文件，使用默认配置
        self.common = ["--config", str(self.root / "none.toml"), "--out", str(self.out)]

    def tearDown(self):
        self.tmp.cleanup()

    def _generate(self, *extra) -> int:
        return main(["generate", *self.common, "--cases", "1A", "4A", "--n", "3", *extra])

    def test_probe_params(self):
        """探针参数量命令"""
        self.assertEqual(main(["probe-params", "1024", "2048"]), EXIT_OK)

    def test_mas_demo(self):
        """少量轮次的对比训练：λ>0 的留出集 MAS 不低于基线，交叉熵相差不超过两成"""
        code = main(
            [
                "mas-demo",
                *self.common,
                "--cases",
                "1A",
                "4A",
                "--n",
                "10",
                "--epochs",
                "4",
                "--tau",
                "0.9",
                "--lambda",
                "0.5",
            ]
        )
        self.assertEqual(code, EXIT_OK)
        summary = json.loads((self.out / MAS_DEMO_DIR / "summary.json").read_text(encoding="utf-8"))
        self.assertEqual(summary["toy"]["learning_rate"], 0.05)
        self.assertEqual(summary["toy"]["d_model"], 32)
        base = summary["runs"]["baseline"]["final_held_out"]
        reg = summary["runs"]["mas"]["final_held_out"]
        self.assertGreaterEqual(reg["mas_mean"], base["mas_mean"])
        self.assertAlmostEqual(summary["mas_uplift"], reg["mas_mean"] - base["mas_mean"])
        self.assertLessEqual(summary["ce_relative_gap"], 0.2)
        self.assertLessEqual(reg["l_mas"], 0.9)
        self.assertEqual(summary["runs"]["mas"]["lambda"], 0.5)

    def test_invalid_input(self):
        """非法用例码和无法解析的参数返回 3"""
        self.assertEqual(main(["generate", *self.common, "--cases", "1C"]), EXIT_INVALID)
        self.assertEqual(main(["generate", *self.common, "--n", "abc"]), EXIT_INVALID)
        self.assertEqual(main(["generate", *self.common, "--patch-size", "30"]), EXIT_INVALID)

    def test_generate_and_validate(self):
        """生成的数据集能通过重新检查，提示词按冲突偏移量展开"""
        self.assertEqual(self._generate("--conflict-deltas", "-1", "1"), EXIT_OK)
        entries = read_index(self.out)
        self.assertEqual(len(entries), 6)
        self.assertEqual([e.count for e in entries], [3, 4, 5, 3, 4, 5])
        prompts = read_jsonl(self.out / PROMPTS_NAME)
        self.assertEqual(len(prompts), 18)
        self.assertEqual(main(["validate", *self.common]), EXIT_OK)

    def test_generate_deterministic(self):
        """两次生成的索引与清单逐字节相同"""
        self.assertEqual(self._generate(), EXIT_OK)
        first = (self.out / INDEX_NAME).read_bytes()
        manifest = self.out / read_index(self.out)[0].manifest
        first_manifest = manifest.read_bytes()
        self.assertEqual(main(["generate", *self.common, "--cases", "1A", "4A", "--n", "3", "--workers", "4"]), EXIT_OK)
        self.assertEqual((self.out / INDEX_NAME).read_bytes(), first)
        self.assertEqual(manifest.read_bytes(), first_manifest)

    def test_generate_partial(self):
        """放不下的场景被跳过，返回 2"""
        code = main(["generate", *self.common, "--cases", "8A", "--n", "2", "--image-size", "224"])
        self.assertEqual(code, EXIT_PARTIAL)
        summary = json.loads((self.out / "generate_summary.json").read_text(encoding="utf-8"))
        self.assertEqual(summary["written"], 0)
        self.assertEqual(len(summary["skipped"]), 2)

    def test_evaluate(self):
        """回答全部命中时返回 0，缺回答时返回 2"""
        self.assertEqual(self._generate(), EXIT_OK)
        entries = read_index(self.out)
        responses = self.root / "responses.jsonl"
        write_jsonl(
            responses,
            ({"sample_id": e.sample_id, "variant": "standard", "raw_text": f"shapes: {e.count}"} for e in entries),
        )
        self.assertEqual(main(["evaluate", *self.common, "--responses", str(responses)]), EXIT_OK)
        report = json.loads((self.out / "report.json").read_text(encoding="utf-8"))
        self.assertEqual(report["accuracy"]["overall"], 1.0)
        self.assertEqual(report["by_case"], {"1A": 1.0, "4A": 1.0})

        write_jsonl(responses, [{"sample_id": entries[0].sample_id, "raw_text": "three"}])
        self.assertEqual(main(["evaluate", *self.common, "--responses", str(responses)]), EXIT_PARTIAL)

    def test_evaluate_requires_responses(self):
        """evaluate 缺少 --responses"""
        self.assertEqual(self._generate(), EXIT_OK)
        self.assertEqual(main(["evaluate", *self.common]), EXIT_INVALID)


if __name__ == "__main__":
    unittest.main()
