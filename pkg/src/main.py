import argparse
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from rich.console import Console
from rich.table import Table
from tqdm import tqdm

from .common.logger import get_module_logger, LogConfig, HARNESS_STYLE_CONFIG
from .plugins.config.config import CONFIG_PATH, ConfigError, RunConfig, TricksConfig, resolve_run_config
from .plugins.mas.mas_core import MasConfig
from .plugins.metrics.report import (
    EvaluationInputs,
    build_report,
    load_attention_dir,
    load_dataset_view,
    load_detections,
    load_responses,
    write_report,
)
from .plugins.prompt.prompt_kit import build_prompt_set
from .plugins.raster.raster import RenderedSample, render
from .plugins.raster.sample_io import (
    MANIFEST_NAME,
    PROMPTS_NAME,
    IndexEntry,
    check_manifest,
    load_manifest,
    read_index,
    sample_dir,
    scene_from_manifest,
    write_index,
    write_sample,
)
from .plugins.scene.case_code import CaseCode, parse_case_list
from .plugins.scene.placement import Infeasible
from .plugins.scene.scene_gen import (
    count_for_index,
    derive_sample_seed,
    object_name_for_scene,
    sample_scene,
    validate_scene,
)
from .plugins.scene.scene_types import PatchGrid
from .plugins.toy_attn.checkpoint import save_checkpoint
from .plugins.toy_attn.dataset import generate_toy_samples, label_histogram, load_toy_samples, split_held_out
from .plugins.toy_attn.grad_check import finite_diff_check
from .plugins.toy_attn.model import ToyConfig, init_model
from .plugins.toy_attn.probe import print_probe_table
from .plugins.toy_attn.trainer import TrainingDiverged, train
from .plugins.utils.jsonl import content_hash, write_json, write_jsonl
from .plugins.utils.timer_calculater import Timer, format_timings

harness_config = LogConfig(
    console_format=HARNESS_STYLE_CONFIG["console_format"],
    file_format=HARNESS_STYLE_CONFIG["file_format"],
)
logger = get_module_logger("harness", config=harness_config)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_PARTIAL = 2
EXIT_INVALID = 3

GENERATE_SUMMARY_NAME = "generate_summary.json"
GRAD_CHECK_NAME = "grad_check.json"
MAS_DEMO_DIR = "mas_demo"
GRAD_TOLERANCE = 1e-4


@dataclass
class _GenerateJob:
    case: CaseCode
    index: int
    seed: int
    count: int
    sample: Optional[RenderedSample] = None
    object_name: str = ""
    error: str = ""


def _run_job(job: _GenerateJob, grid: PatchGrid, max_retries: int) -> _GenerateJob:
    try:
        scene = sample_scene(job.case, job.count, grid=grid, seed=job.seed, max_retries=max_retries)
    except Infeasible as e:
        job.error = str(e)
        return job
    report = validate_scene(scene)
    if not report.ok:
        logger.error(f"{job.case} 第 {job.index} 个场景违反规则 {report.rules}")
        job.error = f"规则检查失败: {report.rules}"
        return job
    job.sample = render(scene)
    job.object_name = object_name_for_scene(scene)
    return job


def cmd_generate(run: RunConfig, max_retries: int = 1000) -> int:
    cases = parse_case_list(run.cases)
    grid = PatchGrid(run.image_size, run.patch_size)
    root = Path(run.out_dir)
    jobs = [
        _GenerateJob(case=case, index=i, seed=derive_sample_seed(run.seed, case, i), count=count_for_index(i))
        for case in cases
        for i in range(run.n_per_case)
    ]
    logger.info(f"生成 {len(cases)} 个用例 × {run.n_per_case} 个样本到 {root}")

    entries: List[IndexEntry] = []
    prompts: List[dict] = []
    skipped: List[dict] = []
    per_case: Dict[str, Dict[str, int]] = {str(c): {"written": 0, "skipped": 0} for c in cases}

    # 线程池只负责采样与渲染，落盘按提交顺序在主线程完成
    with ThreadPoolExecutor(max_workers=run.workers) as pool:
        results = pool.map(lambda job: _run_job(job, grid, max_retries), jobs)
        for job in tqdm(results, total=len(jobs), desc="generate", unit="sample"):
            key = str(job.case)
            if job.sample is None:
                skipped.append({"case_code": key, "index": job.index, "reason": job.error})
                per_case[key]["skipped"] += 1
                logger.warning(f"{key} 第 {job.index} 个样本已跳过: {job.error}")
                continue
            paths = write_sample(job.sample, root)
            entries.append(IndexEntry(paths.manifest.relative_to(root).as_posix(), key, job.count))
            prompts.extend(
                p.to_dict()
                for p in build_prompt_set(job.sample.sample_id, job.object_name, job.count, run.conflict_deltas)
            )
            per_case[key]["written"] += 1

    index_path = write_index(entries, root)
    write_jsonl(root / PROMPTS_NAME, prompts)
    summary = {
        "config": run.to_dict(),
        "written": len(entries),
        "skipped": skipped,
        "per_case": per_case,
        "prompts": len(prompts),
        "index": index_path.name,
    }
    summary["content_hash"] = content_hash(summary)
    write_json(root / GENERATE_SUMMARY_NAME, summary)
    logger.success(f"写入 {len(entries)} 个样本，跳过 {len(skipped)} 个，提示词 {len(prompts)} 条")
    return EXIT_PARTIAL if skipped else EXIT_OK


def cmd_evaluate(run: RunConfig, report_name: str = "report.json") -> int:
    if not run.responses_path:
        raise ConfigError("evaluate 需要 --responses")
    view = load_dataset_view(run.dataset_dir)
    inputs = EvaluationInputs(
        dataset=view,
        responses=load_responses(run.responses_path),
        attention=load_attention_dir(run.attn_path) if run.attn_path else {},
        detections=load_detections(run.detections_path) if run.detections_path else None,
    )
    mas = MasConfig(tau=run.tau, lam=run.mas_lambda, layers=tuple(run.mas_layers) or None, all_keys=run.all_keys)
    report = build_report(inputs, run.to_dict(), mas, run.k_percent, run.iou_threshold)
    write_report(report, Path(run.out_dir) / report_name)

    coverage = report["coverage"]
    logger.info(
        f"准确率 {report['accuracy']['overall']:.4f}（严格 {report['accuracy']['strict']:.4f}），"
        f"未匹配 {len(coverage['unmatched'])}，缺回答 {len(coverage['missing'])}"
    )
    return EXIT_PARTIAL if report["flags"]["partial_coverage"] else EXIT_OK


def _toy_config(config: TricksConfig) -> ToyConfig:
    return ToyConfig(
        d_model=config.d_model,
        n_heads=config.n_heads,
        n_layers=config.n_layers,
        visual_grid=config.visual_grid,
        sink_logit=config.sink_logit,
    )


def _toy_samples(run: RunConfig, config: TricksConfig, from_dataset: bool):
    if from_dataset:
        return load_toy_samples(run.dataset_dir, config.visual_grid, config.demo_conflict), 0
    return generate_toy_samples(
        parse_case_list(run.cases),
        run.n_per_case,
        run.seed,
        PatchGrid(run.image_size, run.patch_size),
        config.visual_grid,
        config.demo_conflict,
    )


def _run_tag(name: str, lam: float) -> str:
    return f"{name}_lambda_{lam:g}"


def cmd_mas_demo(run: RunConfig, config: TricksConfig, from_dataset: bool = False) -> int:
    """同一种子分别以 λ=0 和配置的 λ 训练玩具模型，比较留出集上的视觉注意力份额"""
    toy = _toy_config(config)
    samples, skipped = _toy_samples(run, config, from_dataset)
    if not samples:
        raise ConfigError("没有可用的训练样本")
    train_set, held_out = split_held_out(samples, config.held_out_fraction, run.seed)
    notes = []
    if not held_out:
        held_out = train_set
        notes.append("留出集为空，改用训练集评估")
    logger.info(f"训练 {len(train_set)} 个样本，留出 {len(held_out)} 个，标签分布 {label_histogram(train_set)}")

    out = Path(run.out_dir) / MAS_DEMO_DIR
    runs = {}
    timings: Dict[str, float] = {}
    layers = tuple(run.mas_layers) or None
    for name, lam in (("baseline", 0.0), ("mas", run.mas_lambda)):
        mas = MasConfig(tau=run.tau, lam=lam, layers=layers, all_keys=run.all_keys)
        with Timer(name, timings):
            result = train(
                train_set,
                toy,
                mas,
                epochs=run.epochs,
                seed=run.seed,
                learning_rate=config.learning_rate,
                batch_size=run.batch_size,
                held_out=held_out,
                progress=True,
            )
        tag = _run_tag(name, lam)
        write_jsonl(out / f"trajectory_{tag}.jsonl", (e.to_dict() for e in result.trajectory))
        save_checkpoint(result.model, out / f"model_{tag}.json")
        runs[name] = {
            "lambda": lam,
            "trajectory": f"trajectory_{tag}.jsonl",
            "final_train": result.trajectory[-1].to_dict(),
            "final_held_out": result.held_out[-1].to_dict(),
            "initial_held_out": result.held_out[0].to_dict(),
        }

    base, reg = runs["baseline"]["final_held_out"], runs["mas"]["final_held_out"]
    summary = {
        "config": run.to_dict(),
        "toy": {**toy.to_dict(), "learning_rate": config.learning_rate, "held_out_fraction": config.held_out_fraction},
        "n_train": len(train_set),
        "n_held_out": len(held_out),
        "skipped_scenes": skipped,
        "runs": runs,
        "mas_uplift": reg["mas_mean"] - base["mas_mean"],
        "ce_relative_gap": abs(reg["ce"] - base["ce"]) / base["ce"] if base["ce"] > 0 else None,
        "notes": notes,
    }
    summary["content_hash"] = content_hash(summary)
    write_json(out / "summary.json", summary)

    table = Table(show_header=True, header_style="bold magenta", title="留出集对比")
    for column in ("运行", "λ", "CE", "MAS", "L_mas", "准确率"):
        table.add_column(column, justify="right")
    for name, info in runs.items():
        h = info["final_held_out"]
        table.add_row(
            name,
            f"{info['lambda']:g}",
            f"{h['ce']:.4f}",
            f"{h['mas_mean']:.4f}",
            f"{h['l_mas']:.4f}",
            f"{h['accuracy']:.3f}",
        )
    Console().print(table)
    logger.success(f"MAS 提升 {summary['mas_uplift']:+.4f}，耗时 {format_timings(timings)}")
    return EXIT_OK


def cmd_probe_params(channels: Sequence[int]) -> int:
    rows = print_probe_table(list(channels))
    for row in rows:
        logger.debug(f"c_in={row['c_in']}: total={row['total']}")
    return EXIT_OK


def cmd_grad_check(run: RunConfig, config: TricksConfig) -> int:
    toy = _toy_config(config)
    samples, _ = generate_toy_samples(
        parse_case_list(run.cases), 1, run.seed, PatchGrid(run.image_size, run.patch_size), config.visual_grid
    )
    batch = samples[: run.batch_size]
    if not batch:
        raise ConfigError("没有可用于梯度核对的样本")
    model = init_model(toy, run.seed)
    mas = MasConfig(tau=run.tau, lam=run.mas_lambda, layers=tuple(run.mas_layers) or None, all_keys=run.all_keys)
    report = finite_diff_check(model, batch, mas, n_coords=run.n_coords, eps=1e-5, seed=run.seed)
    data = {"config": run.to_dict(), **report.to_dict(), "tolerance": GRAD_TOLERANCE}
    write_json(Path(run.out_dir) / GRAD_CHECK_NAME, data)
    if report.max_rel_error > GRAD_TOLERANCE:
        logger.error(f"最大相对误差 {report.max_rel_error:.3e} 超过 {GRAD_TOLERANCE}")
        return EXIT_FAILED
    logger.success(f"梯度核对通过，最大相对误差 {report.max_rel_error:.3e}")
    return EXIT_OK


def cmd_validate(run: RunConfig) -> int:
    """重新检查数据集中每个清单是否满足场景规则"""
    root = Path(run.dataset_dir)
    bad: List[str] = []
    entries = read_index(root)
    for entry in tqdm(entries, desc="validate", unit="sample"):
        manifest = load_manifest(root / entry.manifest)
        check_manifest(manifest, entry.manifest)
        if root / entry.manifest != sample_dir(root, manifest["id"]) / MANIFEST_NAME:
            bad.append(manifest["id"])
            logger.error(f"{entry.manifest} 的位置与样本 id {manifest['id']} 不符")
            continue
        report = validate_scene(scene_from_manifest(manifest))
        if not report.ok:
            bad.append(manifest["id"])
            for v in report.violations[:3]:
                logger.error(f"{manifest['id']}: {v.rule} {v.detail}")
    logger.info(f"检查 {len(entries)} 个样本，{len(bad)} 个不合规")
    return EXIT_INVALID if bad else EXIT_OK


def _common_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="配置文件路径，默认 config/tricks_config.toml")
    parent.add_argument("--out", help="输出目录")
    parent.add_argument("--dataset", help="数据集目录，默认与 --out 相同")
    parent.add_argument("--seed", type=int)
    parent.add_argument("--cases", nargs="+", help="用例码，逗号或空格分隔，all 表示全部 32 个")
    parent.add_argument("--n", type=int, help="每个用例的样本数")
    parent.add_argument("--image-size", dest="image_size", type=int)
    parent.add_argument("--patch-size", dest="patch_size", type=int)
    parent.add_argument("--workers", type=int)
    parent.add_argument("--tau", type=float)
    parent.add_argument("--lambda", dest="mas_lambda", type=float)
    parent.add_argument("--all-keys", dest="all_keys", action="store_true", default=None, help="MAS 分母取全部键")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tricks", description="计数诊断基准：生成、评测与注意力份额演示")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()

    gen = sub.add_parser("generate", parents=[common], help="生成数据集")
    gen.add_argument("--conflict-deltas", dest="conflict_deltas", nargs="+", type=int)

    ev = sub.add_parser("evaluate", parents=[common], help="对模型回答打分并生成报告")
    ev.add_argument("--responses")
    ev.add_argument("--attn", help="注意力记录目录")
    ev.add_argument("--detections")
    ev.add_argument("--k-percent", dest="k_percent", type=float)
    ev.add_argument("--iou-threshold", dest="iou_threshold", type=float)

    demo = sub.add_parser("mas-demo", parents=[common], help="玩具模型上的 λ=0 与 λ>0 对比训练")
    demo.add_argument("--epochs", type=int)
    demo.add_argument("--batch-size", dest="batch_size", type=int)

    probe = sub.add_parser("probe-params", help="探针参数量")
    probe.add_argument("channels", nargs="*", type=int, default=[1024, 2048])

    grad = sub.add_parser("grad-check", parents=[common], help="有限差分核对玩具模型梯度")
    grad.add_argument("--coords", type=int)
    grad.add_argument("--batch-size", dest="batch_size", type=int)

    sub.add_parser("validate", parents=[common], help="重新检查数据集")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # --help 正常退出，参数错误归为非法输入
        return EXIT_OK if e.code in (0, None) else EXIT_INVALID
    timings: Dict[str, float] = {}
    try:
        if args.command == "probe-params":
            return cmd_probe_params(args.channels)

        config = TricksConfig.load_config(args.config or str(CONFIG_PATH))
        run = resolve_run_config(args.command, args, config)
        run.validate()
        with Timer(args.command, timings):
            if args.command == "generate":
                code = cmd_generate(run, config.max_retries)
            elif args.command == "evaluate":
                code = cmd_evaluate(run, config.report_name)
            elif args.command == "mas-demo":
                code = cmd_mas_demo(run, config, from_dataset=args.dataset is not None)
            elif args.command == "grad-check":
                code = cmd_grad_check(run, config)
            else:
                code = cmd_validate(run)
        logger.info(f"{args.command} 结束，退出码 {code}，{format_timings(timings)}")
        return code
    except TrainingDiverged as e:
        logger.error(f"训练发散: {e}")
        return EXIT_FAILED
    except (ValueError, LookupError, FileNotFoundError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_INVALID
