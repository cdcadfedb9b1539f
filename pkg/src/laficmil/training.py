"""Losses, Adam, the one-bag-per-step training loop, metrics and gradient checking."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteError, ShapeError
from .model import (
    ModelConfig,
    ModelParams,
    TASKS,
    assemble_bag,
    backward,
    decide,
    forward,
    forward_backward,
    sigmoid,
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 10
    task: str = "binary"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")


def loss(logits, target, task: str) -> tuple[float, np.ndarray]:
    """Loss value and its gradient w.r.t. the raw logits.

    binary/multilabel use logit-space sigmoid BCE summed over labels,
    multiclass uses log-sum-exp cross entropy.
    """
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    if task in ("binary", "multilabel"):
        y = np.asarray(target, dtype=np.float64).reshape(-1)
        if y.shape != z.shape:
            raise ShapeError(f"target length {y.size} != logit count {z.size}")
        if np.any((y != 0) & (y != 1)):
            raise ValueError("binary targets must be 0 or 1")
        value = np.sum(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z))))
        return float(value), sigmoid(z) - y
    if task == "multiclass":
        k = int(target)
        if not 0 <= k < z.size:
            raise ValueError(f"class index {k} out of range for {z.size} classes")
        shifted = z - z.max()
        lse = np.log(np.sum(np.exp(shifted)))
        p = np.exp(shifted - lse)
        grad = p.copy()
        grad[k] -= 1.0
        return float(lse - shifted[k]), grad
    raise ValueError(f"unknown task {task!r}")


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        named = params.named_arrays()
        return cls(0, {k: np.zeros_like(a) for k, a in named.items()},
                   {k: np.zeros_like(a) for k, a in named.items()})


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam, applied in place.  Returns ``(params, state)``."""
    named_g = grads.named_arrays()
    for name, g in named_g.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name}; step {state.step + 1} aborted")
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.named_arrays().items():
        g = named_g[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params, state


# --- metrics -----------------------------------------------------------------

def accuracy(pred, target) -> float:
    pred = np.asarray(pred).reshape(-1)
    target = np.asarray(target).reshape(-1)
    if pred.size == 0:
        raise ValueError("empty dataset")
    return float(100.0 * np.mean(pred == target))


def micro_f1(pred, target) -> float:
    """Micro-F1 in percent over all label slots.

    No positives anywhere (predicted or true) counts as 100; no predicted
    positives with some true positives counts as 0.
    """
    pred = np.asarray(pred, dtype=bool)
    target = np.asarray(target, dtype=bool)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ValueError("empty dataset")
    tp = int(np.sum(pred & target))
    fp = int(np.sum(pred & ~target))
    fn = int(np.sum(~pred & target))
    if tp + fp + fn == 0:
        return 100.0
    return 100.0 * 2 * tp / (2 * tp + fp + fn)


def evaluate(dataset, params: ModelParams, cfg: ModelConfig, task: str | None = None) -> float:
    """Accuracy for binary/multiclass, micro-F1 for multilabel, both in [0, 100]."""
    task = task or cfg.task
    bags = list(dataset)
    if not bags:
        raise ValueError("empty dataset")
    preds, targets = [], []
    for bag in bags:
        logits = forward(assemble_bag(bag.instances, params), params, cfg)
        preds.append(decide(logits, task).decision)
        targets.append(bag.label)
    if task == "multilabel":
        return micro_f1(np.array(preds), np.array(targets))
    targets = [int(np.asarray(t).reshape(-1)[0]) for t in targets]
    return accuracy(preds, targets)


# --- training loop ------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    metric: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    final_metric: float | None = None

    def lines(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.epochs)

    def summary(self) -> dict:
        return {
            "epochs": len(self.epochs),
            "final_loss": self.epochs[-1].mean_loss if self.epochs else None,
            "final_metric": self.final_metric,
        }


def _target_for_loss(label, task: str):
    if task == "multiclass":
        return int(np.asarray(label).reshape(-1)[0])
    return np.asarray(label, dtype=np.float64).reshape(-1)


def train(
    dataset,
    params: ModelParams,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    *,
    eval_set=None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainReport:
    """Train in place, one Adam step per bag, bags visited in a seeded shuffle each epoch.

    The per-epoch metric is computed on ``eval_set`` when given, otherwise on
    the training bags.
    """
    bags = list(dataset)
    if not bags:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_params(params)
    report = TrainReport()
    for epoch in range(cfg.epochs):
        total = 0.0
        for i in rng.permutation(len(bags)):
            bag = bags[i]
            target = _target_for_loss(bag.label, cfg.task)
            value, _, grads = forward_backward(
                bag.instances, params, model_cfg, lambda z: loss(z, target, cfg.task))
            if not np.isfinite(value):
                raise NonFiniteError(f"non-finite loss on bag {bag.id!r} in epoch {epoch}")
            adam_step(params, grads, state, cfg)
            total += value
        metric = evaluate(eval_set if eval_set is not None else bags, params, model_cfg, cfg.task)
        rec = EpochRecord(epoch, total / len(bags), metric)
        report.epochs.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    report.final_metric = report.epochs[-1].metric if report.epochs else None
    return report


# --- gradient checking ---------------------------------------------------------

def relative_error(a, b, floor: float = 1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(func: Callable[[], float], arrays: dict[str, np.ndarray],
                   analytic: dict[str, np.ndarray], step: float = 1e-5) -> dict[str, float]:
    """Central differences of ``func`` over every coordinate of ``arrays``.

    ``arrays`` are perturbed in place and restored.  Returns the max relative
    error per array name.
    """
    worst = {}
    for name, a in arrays.items():
        g = analytic[name]
        fd = np.zeros_like(a)
        flat = a.reshape(-1)
        for idx in range(flat.size):
            old = flat[idx]
            flat[idx] = old + step
            fp = func()
            flat[idx] = old - step
            fm = func()
            flat[idx] = old
            fd.reshape(-1)[idx] = (fp - fm) / (2 * step)
        worst[name] = float(relative_error(fd, g).max()) if a.size else 0.0
    return worst


def finite_diff_check(params: ModelParams, model_cfg: ModelConfig, instances, target,
                      step: float = 1e-5, task: str | None = None) -> dict[str, float]:
    """Compare :func:`backward` under the task loss against central differences."""
    task = task or model_cfg.task
    target = _target_for_loss(target, task)

    def f() -> float:
        return loss(forward(assemble_bag(instances, params), params, model_cfg), target, task)[0]

    logits = forward(assemble_bag(instances, params), params, model_cfg)
    _, upstream = loss(logits, target, task)
    grads = backward(assemble_bag(instances, params), params, model_cfg, upstream)
    return gradient_check(f, params.named_arrays(), grads.named_arrays(), step)


def params_fingerprint(params: ModelParams) -> bytes:
    return b"".join(a.tobytes() for a in params.named_arrays().values())


# --- order-blind baseline -----------------------------------------------------

def mean_pool_probe(train_bags, test_bags, *, l2: float = 1e-3, iterations: int = 50) -> float:
    """Test accuracy of logistic regression on mean-pooled instances.

    Pooling discards instance order, so this bounds what an order-blind
    model can get from bag contents alone.  Fitted by Newton's method.
    """
    def design(bags):
        x = np.stack([b.instances.mean(axis=0) for b in bags])
        return np.hstack([x, np.ones((len(bags), 1))])

    x = design(train_bags)
    y = np.array([float(np.asarray(b.label).reshape(-1)[0]) for b in train_bags])
    w = np.zeros(x.shape[1])
    reg = l2 * np.eye(x.shape[1])
    reg[-1, -1] = 0.0
    for _ in range(iterations):
        p = sigmoid(x @ w)
        grad = x.T @ (p - y) + reg @ w
        hess = (x * (p * (1 - p))[:, None]).T @ x + reg + 1e-9 * np.eye(x.shape[1])
        w -= np.linalg.solve(hess, grad)
    xt = design(test_bags)
    pred = (sigmoid(xt @ w) > 0.5).astype(int)
    return accuracy(pred, [int(np.asarray(b.label).reshape(-1)[0]) for b in test_bags])
