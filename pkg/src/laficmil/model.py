"""The bag classifier: category row + positional table, pre-LN Nyström blocks, affine head."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import (
    AttentionConfig,
    HeadWeights,
    _multi_head_forward,
    multi_head_attention_backward,
)
from .errors import CapacityError, DegenerateInputError, ShapeError
from .linalg import as_matrix, layer_norm, layer_norm_backward

TASKS = ("binary", "multiclass", "multilabel")


@dataclass(frozen=True)
class ModelConfig:
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    num_layers: int = 1
    max_bag: int = 64
    num_labels: int = 1
    task: str = "binary"
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        if self.max_bag < 2:
            raise ValueError("max_bag must leave room for the category row and one instance")
        if self.num_labels < 1:
            raise ValueError("num_labels must be >= 1")
        if self.task == "binary" and self.num_labels != 1:
            raise ValueError("binary task uses a single logit (num_labels=1)")

    @property
    def dim(self) -> int:
        return self.attention.model_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["attention"] = AttentionConfig(**d["attention"])
        return cls(**d)


@dataclass
class BlockParams:
    ln_gamma: np.ndarray
    ln_beta: np.ndarray
    heads: list[HeadWeights]
    w_o: np.ndarray


@dataclass
class ModelParams:
    category: np.ndarray
    pos_embedding: np.ndarray
    blocks: list[BlockParams]
    final_gamma: np.ndarray
    final_beta: np.ndarray
    mlp_w: np.ndarray
    mlp_b: np.ndarray

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Every learnable array by a stable dotted name; values are live references."""
        out = {"category": self.category, "pos_embedding": self.pos_embedding}
        for li, blk in enumerate(self.blocks):
            out[f"blocks.{li}.ln_gamma"] = blk.ln_gamma
            out[f"blocks.{li}.ln_beta"] = blk.ln_beta
            for hi, hw in enumerate(blk.heads):
                for name in ("w_q", "w_k", "w_v", "dconv"):
                    out[f"blocks.{li}.heads.{hi}.{name}"] = getattr(hw, name)
            out[f"blocks.{li}.w_o"] = blk.w_o
        out["final_gamma"] = self.final_gamma
        out["final_beta"] = self.final_beta
        out["mlp_w"] = self.mlp_w
        out["mlp_b"] = self.mlp_b
        return out

    def copy(self) -> "ModelParams":
        return _rebuild(self, lambda a: a.copy())

    def zeros_like(self) -> "ModelParams":
        return _rebuild(self, np.zeros_like)


# Gradients share the parameter layout.
Gradients = ModelParams


def _rebuild(p: ModelParams, fn) -> ModelParams:
    blocks = [
        BlockParams(
            fn(b.ln_gamma), fn(b.ln_beta),
            [HeadWeights(fn(h.w_q), fn(h.w_k), fn(h.w_v), fn(h.dconv)) for h in b.heads],
            fn(b.w_o),
        )
        for b in p.blocks
    ]
    return ModelParams(fn(p.category), fn(p.pos_embedding), blocks, fn(p.final_gamma),
                       fn(p.final_beta), fn(p.mlp_w), fn(p.mlp_b))


def empty_params(cfg: ModelConfig) -> ModelParams:
    d, att = cfg.dim, cfg.attention
    blocks = [
        BlockParams(np.ones(d), np.zeros(d),
                    [HeadWeights.zeros(att) for _ in range(att.head_count)],
                    np.zeros((att.head_count * att.head_dim, d)))
        for _ in range(cfg.num_layers)
    ]
    return ModelParams(np.zeros((1, d)), np.zeros((cfg.max_bag, d)), blocks,
                       np.ones(d), np.zeros(d), np.zeros((d, cfg.num_labels)),
                       np.zeros(cfg.num_labels))


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Category row and positions ~ N(0, 0.02); projections and head ~ N(0, 1/sqrt(d)).

    LN starts at gamma=1, beta=0; conv kernels and biases start at zero.
    """
    rng = np.random.default_rng(seed)
    d = cfg.dim
    std = 1.0 / np.sqrt(d)
    p = empty_params(cfg)
    p.category[...] = rng.normal(0.0, 0.02, p.category.shape)
    p.pos_embedding[...] = rng.normal(0.0, 0.02, p.pos_embedding.shape)
    for blk in p.blocks:
        for hw in blk.heads:
            for w in (hw.w_q, hw.w_k, hw.w_v):
                w[...] = rng.normal(0.0, std, w.shape)
        blk.w_o[...] = rng.normal(0.0, std, blk.w_o.shape)
    p.mlp_w[...] = rng.normal(0.0, std, p.mlp_w.shape)
    return p


@dataclass
class BagEmbedding:
    """Row 0 is the category slot, rows 1..n the instances, positions already added."""

    x0: np.ndarray

    @property
    def instance_count(self) -> int:
        return self.x0.shape[0] - 1


def assemble_bag(instances, params: ModelParams) -> BagEmbedding:
    x = as_matrix(instances, "instances")
    n, d = x.shape
    if n < 1:
        raise DegenerateInputError("bag has no instances")
    if d != params.category.shape[1]:
        raise ShapeError(f"instance width {d} != model dim {params.category.shape[1]}")
    cap = params.pos_embedding.shape[0] - 1
    if n > cap:
        raise CapacityError(f"bag has {n} instances; positional table holds at most {cap}")
    x0 = np.concatenate([params.category, x], axis=0) + params.pos_embedding[: n + 1]
    return BagEmbedding(x0)


def encode(x0: np.ndarray, params: ModelParams, cfg: ModelConfig, caches: list | None = None) -> np.ndarray:
    """Run the residual blocks ``x <- x + MSA(LN(x))`` and return the final rows."""
    x = x0
    for blk in params.blocks:
        h, ln_cache = layer_norm(x, blk.ln_gamma, blk.ln_beta, cfg.ln_eps, return_cache=True)
        a, mh_cache = _multi_head_forward(h, blk.heads, blk.w_o, cfg.attention)
        if caches is not None:
            caches.append((ln_cache, mh_cache))
        x = x + a
    return x


def classify_head(x_final: np.ndarray, params: ModelParams, cfg: ModelConfig, caches: list | None = None) -> np.ndarray:
    """Logits from the category row only."""
    r, ln_cache = layer_norm(x_final[:1], params.final_gamma, params.final_beta, cfg.ln_eps,
                             return_cache=True)
    if caches is not None:
        caches.append((ln_cache, r))
    return (r @ params.mlp_w + params.mlp_b).reshape(-1)


@dataclass
class ForwardCache:
    x0: np.ndarray
    x_final: np.ndarray
    blocks: list
    head: tuple


def _forward(bag: BagEmbedding, params: ModelParams, cfg: ModelConfig):
    blocks: list = []
    head: list = []
    x_final = encode(bag.x0, params, cfg, blocks)
    logits = classify_head(x_final, params, cfg, head)
    return logits, ForwardCache(bag.x0, x_final, blocks, head[0])


def forward(bag: BagEmbedding, params: ModelParams, cfg: ModelConfig) -> np.ndarray:
    """Raw logits of length ``num_labels``; no output activation."""
    logits, _ = _forward(bag, params, cfg)
    return logits


def _backward(cache: ForwardCache, params: ModelParams, upstream) -> tuple[Gradients, np.ndarray]:
    """Gradients of the parameters and of ``x0``."""
    grads = params.zeros_like()
    upstream = np.asarray(upstream, dtype=np.float64).reshape(1, -1)
    ln_cache, r = cache.head
    grads.mlp_w[...] = r.T @ upstream
    grads.mlp_b[...] = upstream[0]
    g_r = upstream @ params.mlp_w.T
    g_row0, grads.final_gamma[...], grads.final_beta[...] = layer_norm_backward(ln_cache, g_r)

    g_x = np.zeros_like(cache.x_final)
    g_x[:1] = g_row0
    for li in reversed(range(len(params.blocks))):
        blk, gblk = params.blocks[li], grads.blocks[li]
        ln_c, mh_c = cache.blocks[li]
        g_h, head_grads, gblk.w_o[...] = multi_head_attention_backward(mh_c, blk.w_o, g_x)
        for dst, src in zip(gblk.heads, head_grads):
            dst.w_q[...], dst.w_k[...], dst.w_v[...], dst.dconv[...] = (
                src.w_q, src.w_k, src.w_v, src.dconv)
        g_in, gblk.ln_gamma[...], gblk.ln_beta[...] = layer_norm_backward(ln_c, g_h)
        g_x = g_x + g_in
    return grads, g_x


def _accumulate_bag_grads(grads: Gradients, g_x0: np.ndarray):
    n1 = g_x0.shape[0]
    grads.category[...] = g_x0[:1]
    grads.pos_embedding[:n1] = g_x0


def backward(bag: BagEmbedding, params: ModelParams, cfg: ModelConfig, upstream) -> Gradients:
    """Exact reverse-mode gradients of ``upstream . forward(bag)`` w.r.t. every parameter.

    ``bag`` must have been built by :func:`assemble_bag` from the same params,
    so that the category row and positional rows receive gradient.
    """
    _, cache = _forward(bag, params, cfg)
    grads, g_x0 = _backward(cache, params, upstream)
    _accumulate_bag_grads(grads, g_x0)
    return grads


def forward_backward(instances, params: ModelParams, cfg: ModelConfig, loss_fn):
    """One pass for training: ``loss_fn(logits) -> (value, dvalue/dlogits)``."""
    bag = assemble_bag(instances, params)
    logits, cache = _forward(bag, params, cfg)
    value, upstream = loss_fn(logits)
    grads, g_x0 = _backward(cache, params, upstream)
    _accumulate_bag_grads(grads, g_x0)
    return value, logits, grads


@dataclass
class Prediction:
    logits: np.ndarray
    scores: np.ndarray      # probabilities after the task's activation
    decision: object        # int for binary/multiclass, 0/1 vector for multilabel


def sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def decide(logits, task: str) -> Prediction:
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if task == "binary":
        p = sigmoid(logits)
        # probability exactly 0.5 resolves to class 0
        return Prediction(logits, p, int(p[0] > 0.5))
    if task == "multiclass":
        e = np.exp(logits - logits.max())
        return Prediction(logits, e / e.sum(), int(np.argmax(logits)))
    if task == "multilabel":
        p = sigmoid(logits)
        return Prediction(logits, p, (p > 0.5).astype(int))
    raise ValueError(f"unknown task {task!r}")


def score_bag(instances, params: ModelParams, cfg: ModelConfig, task: str | None = None) -> Prediction:
    logits = forward(assemble_bag(instances, params), params, cfg)
    return decide(logits, task or cfg.task)


# --- checkpoints -------------------------------------------------------------

CHECKPOINT_FORMAT = "laficmil-checkpoint/1"


def checkpoint_bytes(cfg: ModelConfig, params: ModelParams) -> bytes:
    arrays = {
        name: {"shape": list(a.shape), "data": [float(v) for v in a.reshape(-1)]}
        for name, a in params.named_arrays().items()
    }
    doc = {"format": CHECKPOINT_FORMAT, "config": cfg.to_dict(), "params": arrays}
    # float repr round-trips exactly, so save -> load -> save is byte-stable
    return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def atomic_write(path, data: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, cfg: ModelConfig, params: ModelParams):
    atomic_write(path, checkpoint_bytes(cfg, params))


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams]:
    with open(path, "rb") as fh:
        doc = json.loads(fh.read().decode("utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    cfg = ModelConfig.from_dict(doc["config"])
    params = empty_params(cfg)
    named = params.named_arrays()
    stored = doc["params"]
    if set(stored) != set(named):
        raise ValueError(f"{path}: parameter names do not match the stored config")
    for name, target in named.items():
        rec = stored[name]
        if tuple(rec["shape"]) != target.shape:
            raise ShapeError(f"{path}: {name} has shape {rec['shape']}, expected {list(target.shape)}")
        target[...] = np.asarray(rec["data"], dtype=np.float64).reshape(target.shape)
    return cfg, params
