from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.plugins.mas.mas_core import (
    MasConfig,
    hinge_loss,
    hinge_subgradient,
    layer_share,
    select_target_steps,
    total_loss,
)

from .model import ForwardCache, ToyModel, ToySample, backward, forward_cached


@dataclass
class LossAndGrads:
    total: float
    grads: Dict[str, np.ndarray]
    mas: float
    ce: float
    l_mas: float
    hinge_active: bool


@dataclass
class SampleState:
    cache: ForwardCache
    ce: float
    probs: np.ndarray
    mas: float
    rows: np.ndarray
    visual: np.ndarray
    denominator: np.ndarray
    layers: List[int] = field(default_factory=list)


def cross_entropy(logits: np.ndarray, label_class: int) -> Tuple[float, np.ndarray]:
    """返回 (−log p[y], softmax 概率)"""
    shifted = logits - logits.max()
    log_z = np.log(np.exp(shifted).sum())
    log_probs = shifted - log_z
    return float(-log_probs[label_class]), np.exp(log_probs)


def _key_sets(sample: ToySample, all_keys: bool) -> Tuple[np.ndarray, np.ndarray]:
    n = len(sample.ids)
    visual = np.zeros(n, dtype=bool)
    visual[: sample.n_visual] = True
    if all_keys:
        return visual, np.ones(n, dtype=bool)
    denominator = np.zeros(n, dtype=bool)
    denominator[: sample.prefix_len] = True
    return visual, denominator


def evaluate_sample(model: ToyModel, sample: ToySample, config: MasConfig) -> SampleState:
    cache = forward_cached(model, sample)
    ce, probs = cross_entropy(cache.logits, sample.label_class)
    rows = np.array(select_target_steps(sample.roles), dtype=np.int64)
    visual, denominator = _key_sets(sample, config.all_keys)
    layers = config.layer_set(model.config.n_layers)
    for layer in layers:
        if not 0 <= layer < model.config.n_layers:
            raise IndexError(f"层号 {layer} 超出 [0, {model.config.n_layers})")
    values = [layer_share(cache.layers[layer].attn, rows, visual, denominator)[0] for layer in layers]
    return SampleState(
        cache=cache,
        ce=ce,
        probs=probs,
        mas=float(np.mean(values)),
        rows=rows,
        visual=visual,
        denominator=denominator,
        layers=layers,
    )


def _clip_unit(value: float) -> float:
    return min(max(value, 0.0), 1.0)


def batch_objective(model: ToyModel, batch: Sequence[ToySample], config: MasConfig) -> Tuple[float, float, bool]:
    """只算前向：(L_total, 批平均 MAS, MAS 分支是否有梯度)"""
    if not batch:
        raise ValueError("batch 为空")
    states = [evaluate_sample(model, s, config) for s in batch]
    ce = float(np.mean([st.ce for st in states]))
    mas = _clip_unit(float(np.mean([st.mas for st in states])))
    l_mas = hinge_loss(mas, config.tau)
    active = config.lam * hinge_subgradient(mas, config.tau) != 0.0
    return total_loss(ce, l_mas, config.lam), mas, active


def loss_and_grads(model: ToyModel, batch: Sequence[ToySample], config: MasConfig) -> LossAndGrads:
    """L_total = 平均 CE + λ·max(0, τ − 批平均 MAS)，MAS 分支的梯度经注意力权重回传到 query/key 投影"""
    if not batch:
        raise ValueError("batch 为空")
    B = len(batch)
    states = [evaluate_sample(model, s, config) for s in batch]
    ce = float(np.mean([st.ce for st in states]))
    mas = _clip_unit(float(np.mean([st.mas for st in states])))
    l_mas = hinge_loss(mas, config.tau)
    total = total_loss(ce, l_mas, config.lam)

    # 批平均 MAS 对单个样本某层的系数：λ · ∂hinge · (1/B) · (1/|层|)
    coef = config.lam * hinge_subgradient(mas, config.tau)
    active = coef != 0.0

    grads = {name: np.zeros_like(value) for name, value in model.params.items()}
    for sample, st in zip(batch, states):
        dlogits = st.probs.copy()
        dlogits[sample.label_class] -= 1.0
        dlogits /= B
        dattn = {}
        if active:
            scale = coef / B / len(st.layers)
            for layer in st.layers:
                _, g = layer_share(st.cache.layers[layer].attn, st.rows, st.visual, st.denominator, with_grad=True)
                dattn[layer] = scale * g
        sample_grads = backward(model, st.cache, dlogits, dattn)
        for name in grads:
            grads[name] += sample_grads[name]

    return LossAndGrads(total=total, grads=grads, mas=mas, ce=ce, l_mas=l_mas, hinge_active=active)
