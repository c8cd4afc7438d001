import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from src.common.logger import get_module_logger, LogConfig, TOY_STYLE_CONFIG
from src.plugins.mas.attention_record import AttentionRecord, TokenRole
from src.plugins.metrics.grounding import DimensionMismatch

from .tokenizer import DEFAULT_TOKENIZER, VOCAB_SIZE

toy_config = LogConfig(
    console_format=TOY_STYLE_CONFIG["console_format"],
    file_format=TOY_STYLE_CONFIG["file_format"],
)
logger = get_module_logger("toy_attn", config=toy_config)

MIN_CLASS_COUNT = 3
PARAM_NAMES = ("embedding", "wq", "wk", "wv", "wo", "w_out")

# 非视觉 token 在 0 号通道上的取值，文本汇点初始化用
SINK_CHANNEL_VALUE = 1.5


@dataclass(frozen=True)
class ToyConfig:
    vocab_size: int = VOCAB_SIZE
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    n_classes: int = 10
    visual_grid: int = 8
    sink_logit: float = 1.8

    def __post_init__(self):
        if self.d_model <= 0 or self.n_heads <= 0 or self.n_layers <= 0:
            raise ValueError("d_model、n_heads、n_layers 必须为正")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} 不能被 n_heads={self.n_heads} 整除")
        if self.n_classes <= 0 or self.visual_grid <= 0:
            raise ValueError("n_classes 与 visual_grid 必须为正")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_visual(self) -> int:
        return self.visual_grid * self.visual_grid

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        d, L = self.d_model, self.n_layers
        return {
            "embedding": (self.vocab_size, d),
            "wq": (L, d, d),
            "wk": (L, d, d),
            "wv": (L, d, d),
            "wo": (L, d, d),
            "w_out": (d, self.n_classes),
        }

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "n_classes": self.n_classes,
            "visual_grid": self.visual_grid,
            "sink_logit": self.sink_logit,
        }


@dataclass
class ToySample:
    """[视觉格子 | 提示词 | 回答位] 的 token 序列，label 是真实数量"""

    ids: np.ndarray
    n_visual: int
    n_text: int
    label: int
    sample_id: str = ""
    variant: str = "standard"

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.ndim != 1 or len(self.ids) != self.n_visual + self.n_text + 2:
            raise DimensionMismatch(f"{self.sample_id}: 序列长度 {self.ids.shape} 与各段长度不符")

    @property
    def prefix_len(self) -> int:
        return self.n_visual + self.n_text

    @property
    def roles(self) -> Tuple[TokenRole, ...]:
        return (TokenRole.VISUAL,) * self.n_visual + (TokenRole.TEXT,) * self.n_text + (TokenRole.GENERATED,) * 2

    @property
    def target_positions(self) -> List[int]:
        return [self.prefix_len, self.prefix_len + 1]

    @property
    def label_class(self) -> int:
        return self.label - MIN_CLASS_COUNT


@dataclass
class ToyModel:
    config: ToyConfig
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.config.param_shapes()
        if not self.params:
            self.params = {name: np.zeros(shape) for name, shape in shapes.items()}
        for name, shape in shapes.items():
            if name not in self.params:
                raise KeyError(f"缺少参数 {name}")
            self.params[name] = np.asarray(self.params[name], dtype=np.float64)
            if self.params[name].shape != shape:
                raise DimensionMismatch(f"参数 {name} 形状 {self.params[name].shape}，应为 {shape}")

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ToyModel":
        return ToyModel(self.config, {k: v.copy() for k, v in self.params.items()})


def init_model(config: ToyConfig, seed: int = 0) -> ToyModel:
    """随机初始化，并按 sink_logit 给非视觉查询对文本键加一个固定的打分偏置"""
    rng = np.random.default_rng([seed, 0])
    d, L, H = config.d_model, config.n_layers, config.n_heads
    dh = config.head_dim
    w_std = 1.0 / math.sqrt(d)
    params = {
        "embedding": rng.normal(0.0, 0.5, size=(config.vocab_size, d)),
        "wq": rng.normal(0.0, w_std, size=(L, d, d)),
        "wk": rng.normal(0.0, w_std, size=(L, d, d)),
        "wv": rng.normal(0.0, w_std, size=(L, d, d)),
        "wo": rng.normal(0.0, w_std, size=(L, d, d)),
        "w_out": rng.normal(0.0, w_std, size=(d, config.n_classes)),
    }

    if config.sink_logit > 0:
        c = SINK_CHANNEL_VALUE
        visual = sorted(DEFAULT_TOKENIZER.visual_ids)
        params["embedding"][:, 0] = c
        params["embedding"][visual, 0] = 0.0
        # (c·a)² / √dh = sink_logit
        a = math.sqrt(config.sink_logit * math.sqrt(dh)) / c
        for layer in range(L):
            for h in range(H):
                params["wq"][layer][0, h * dh] = a
                params["wk"][layer][0, h * dh] = a
    return ToyModel(config, params)


def attention_mask(n: int, prefix_len: int) -> np.ndarray:
    """前缀内双向可见，回答位只看前缀和自己之前的位置"""
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    return (j < prefix_len) | (j <= i)


@dataclass
class LayerCache:
    x: np.ndarray  # (n, d) 本层输入
    q: np.ndarray  # (H, n, dh)
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray  # (H, n, n)
    out: np.ndarray  # (n, d) 多头拼接后的输出


@dataclass
class ForwardCache:
    ids: np.ndarray
    layers: List[LayerCache]
    final: np.ndarray  # (n, d)
    logits: np.ndarray  # (n_classes,)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def _check_sample(model: ToyModel, sample: ToySample) -> None:
    if sample.n_visual != model.config.n_visual:
        raise DimensionMismatch(f"{sample.sample_id}: 视觉 token 数 {sample.n_visual} ≠ {model.config.n_visual}")
    if sample.ids.min() < 0 or sample.ids.max() >= model.config.vocab_size:
        raise DimensionMismatch(f"{sample.sample_id}: token id 超出词表 [0, {model.config.vocab_size})")


def forward_cached(model: ToyModel, sample: ToySample) -> ForwardCache:
    _check_sample(model, sample)
    cfg, p = model.config, model.params
    H, dh = cfg.n_heads, cfg.head_dim
    n = len(sample.ids)
    allowed = attention_mask(n, sample.prefix_len)

    x = p["embedding"][sample.ids]
    caches = []
    for layer in range(cfg.n_layers):
        q = _split_heads(x @ p["wq"][layer], H)
        k = _split_heads(x @ p["wk"][layer], H)
        v = _split_heads(x @ p["wv"][layer], H)
        scores = q @ k.transpose(0, 2, 1) / math.sqrt(dh)
        scores = np.where(allowed, scores, -np.inf)
        scores = scores - scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        out = _merge_heads(attn @ v)
        caches.append(LayerCache(x=x, q=q, k=k, v=v, attn=attn, out=out))
        x = x + out @ p["wo"][layer]

    logits = x[-1] @ p["w_out"]
    return ForwardCache(ids=sample.ids, layers=caches, final=x, logits=logits)


def forward(model: ToyModel, sample: ToySample) -> Tuple[np.ndarray, AttentionRecord]:
    """返回数量类别 logits（3–12）与全部位置的注意力记录"""
    cache = forward_cached(model, sample)
    weights = np.stack([c.attn for c in cache.layers])
    record = AttentionRecord(weights=weights, roles=sample.roles, step_positions=tuple(range(len(sample.ids))))
    return cache.logits, record


def backward(
    model: ToyModel,
    cache: ForwardCache,
    dlogits: np.ndarray,
    dattn: Optional[Mapping[int, np.ndarray]] = None,
) -> Dict[str, np.ndarray]:
    """手写反向传播；dattn 给出直接加在某层注意力权重上的梯度"""
    cfg, p = model.config, model.params
    H, dh = cfg.n_heads, cfg.head_dim
    dattn = dattn or {}
    grads = {name: np.zeros_like(value) for name, value in p.items()}

    grads["w_out"] = np.outer(cache.final[-1], dlogits)
    dx = np.zeros_like(cache.final)
    dx[-1] = p["w_out"] @ dlogits

    for layer in reversed(range(cfg.n_layers)):
        c = cache.layers[layer]
        grads["wo"][layer] = c.out.T @ dx
        dout = _split_heads(dx @ p["wo"][layer].T, H)

        da = dout @ c.v.transpose(0, 2, 1)
        if layer in dattn:
            da = da + dattn[layer]
        dv = c.attn.transpose(0, 2, 1) @ dout
        # softmax 反传；被屏蔽的位置 attn 为 0，梯度自然为 0
        ds = c.attn * (da - (da * c.attn).sum(axis=-1, keepdims=True)) / math.sqrt(dh)
        dq = _merge_heads(ds @ c.k)
        dk = _merge_heads(ds.transpose(0, 2, 1) @ c.q)
        dv = _merge_heads(dv)

        grads["wq"][layer] = c.x.T @ dq
        grads["wk"][layer] = c.x.T @ dk
        grads["wv"][layer] = c.x.T @ dv
        dx = dx + dq @ p["wq"][layer].T + dk @ p["wk"][layer].T + dv @ p["wv"][layer].T

    np.add.at(grads["embedding"], cache.ids, dx)
    return grads


def predict_count(logits: np.ndarray) -> int:
    return int(np.argmax(logits)) + MIN_CLASS_COUNT
