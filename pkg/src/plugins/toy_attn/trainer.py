from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from src.plugins.mas.mas_core import MasConfig, hinge_loss, total_loss
from src.plugins.utils.timer_calculater import Timer

from .model import ToyConfig, ToyModel, ToySample, init_model, logger, predict_count
from .objective import evaluate_sample, loss_and_grads


class TrainingDiverged(RuntimeError):
    """损失或参数出现非有限值"""


@dataclass(frozen=True)
class TrajectoryEntry:
    epoch: int
    ce: float
    mas_mean: float
    l_mas: float
    l_total: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "ce": self.ce,
            "mas_mean": self.mas_mean,
            "l_mas": self.l_mas,
            "l_total": self.l_total,
        }


@dataclass(frozen=True)
class EvalResult:
    ce: float
    mas_mean: float
    l_mas: float
    l_total: float
    accuracy: float
    n: int

    def to_dict(self) -> dict:
        return {
            "ce": self.ce,
            "mas_mean": self.mas_mean,
            "l_mas": self.l_mas,
            "l_total": self.l_total,
            "accuracy": self.accuracy,
            "n": self.n,
        }


@dataclass
class TrainResult:
    model: ToyModel
    trajectory: List[TrajectoryEntry] = field(default_factory=list)
    held_out: List[EvalResult] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)


def evaluate_model(model: ToyModel, samples: Sequence[ToySample], config: MasConfig) -> EvalResult:
    """整集评估：CE 与 MAS 都是样本平均，L_mas 作用在平均 MAS 上"""
    if not samples:
        raise ValueError("评估集为空")
    ces, mases, correct = [], [], 0
    for sample in samples:
        st = evaluate_sample(model, sample, config)
        ces.append(st.ce)
        mases.append(st.mas)
        correct += int(predict_count(st.cache.logits) == sample.label)
    ce = float(np.mean(ces))
    mas = min(max(float(np.mean(mases)), 0.0), 1.0)
    l_mas = hinge_loss(mas, config.tau)
    return EvalResult(
        ce=ce,
        mas_mean=mas,
        l_mas=l_mas,
        l_total=total_loss(ce, l_mas, config.lam),
        accuracy=correct / len(samples),
        n=len(samples),
    )


def _entry(epoch: int, result: EvalResult) -> TrajectoryEntry:
    return TrajectoryEntry(
        epoch=epoch, ce=result.ce, mas_mean=result.mas_mean, l_mas=result.l_mas, l_total=result.l_total
    )


def _check_finite(model: ToyModel, total: float, epoch: int, step: int) -> None:
    if not np.isfinite(total):
        raise TrainingDiverged(f"第 {epoch} 轮第 {step} 步 L_total={total}")
    for name, value in model.params.items():
        if not np.all(np.isfinite(value)):
            raise TrainingDiverged(f"第 {epoch} 轮第 {step} 步参数 {name} 出现非有限值")


def train(
    dataset: Sequence[ToySample],
    config: ToyConfig,
    mas_config: MasConfig,
    epochs: int,
    seed: int,
    learning_rate: float = 0.05,
    batch_size: int = 8,
    held_out: Optional[Sequence[ToySample]] = None,
    model: Optional[ToyModel] = None,
    progress: bool = False,
) -> TrainResult:
    """小批量梯度下降；初始化与批次顺序只由 seed 决定，λ 不影响随机流"""
    if not dataset:
        raise ValueError("训练集为空")
    if epochs < 0:
        raise ValueError(f"epochs={epochs} 不能为负")
    if learning_rate <= 0 or batch_size <= 0:
        raise ValueError("learning_rate 与 batch_size 必须为正")

    model = model.copy() if model is not None else init_model(config, seed)
    order_rng = np.random.default_rng([seed, 1])
    result = TrainResult(model=model)

    result.trajectory.append(_entry(0, evaluate_model(model, dataset, mas_config)))
    if held_out:
        result.held_out.append(evaluate_model(model, held_out, mas_config))

    epoch_iter = range(1, epochs + 1)
    if progress:
        epoch_iter = tqdm(epoch_iter, desc=f"λ={mas_config.lam}", unit="epoch")
    for epoch in epoch_iter:
        with Timer("train", result.timings):
            order = order_rng.permutation(len(dataset))
            for step, start in enumerate(range(0, len(order), batch_size)):
                batch = [dataset[i] for i in order[start : start + batch_size]]
                step_result = loss_and_grads(model, batch, mas_config)
                for name, grad in step_result.grads.items():
                    model.params[name] -= learning_rate * grad
                _check_finite(model, step_result.total, epoch, step)

        with Timer("evaluate", result.timings):
            entry = _entry(epoch, evaluate_model(model, dataset, mas_config))
            result.trajectory.append(entry)
            if held_out:
                result.held_out.append(evaluate_model(model, held_out, mas_config))
        logger.debug(
            f"λ={mas_config.lam} 第 {epoch} 轮: CE={entry.ce:.4f} MAS={entry.mas_mean:.4f} L_mas={entry.l_mas:.4f}"
        )
    return result
