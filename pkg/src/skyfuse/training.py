"""Loss, AdamW, plateau scheduling, early stopping and the training loop."""
from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .errors import ArtifactIOError, ContractError, InputError, NonFiniteError, ParameterError
from .metrics import ConfusionMatrix, macro_metrics
from .model import ModelConfig, ParameterSet, forward, init_params
from .pipeline.transforms import Dataset
from .rng import numpy_rng, shuffle_indices, stage_seed
from .tensorkit import Tensor, no_grad
from .tensorkit.ops import log_softmax_array, softmax_array
from .tensorkit.tensor import make_result

log = logging.getLogger(__name__)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,):
        raise InputError(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    lsm = log_softmax_array(logits.data.astype(np.float64))
    rows = np.arange(b)
    loss = np.asarray(-lsm[rows, labels].mean(), dtype=logits.dtype)

    def bw(g):
        grad = np.exp(lsm)
        grad[rows, labels] -= 1.0
        return ((grad * (float(g) / b)).astype(logits.dtype),)

    return make_result(loss, (logits,), bw, "cross_entropy")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("betas must lie in [0, 1)")


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def decayed_names(params: Mapping) -> set:
    """Weight matrices decay; biases and layer-norm gains do not."""
    return {k for k in params if k.endswith(".weight")}


def adamw_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
               cfg: OptimizerConfig, t: int, lr: Optional[float] = None,
               decay: Optional[set] = None) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One decoupled-weight-decay Adam update (returns new arrays, updates ``state``).

    ``theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta`` for
    names in ``decay`` (default: every name); the decay never enters the moments.
    """
    if t < 1:
        raise ParameterError("step counter t starts at 1")
    lr = cfg.learning_rate if lr is None else lr
    decay = set(params) if decay is None else decay
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    out = OrderedDict()
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        if g.shape != theta.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter has {theta.shape}")
        dt = theta.dtype.type
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - cfg.beta1) * g if m is None else dt(cfg.beta1) * m + dt(1 - cfg.beta1) * g
        v = (1 - cfg.beta2) * g * g if v is None else dt(cfg.beta2) * v + dt(1 - cfg.beta2) * g * g
        m = m.astype(theta.dtype, copy=False)
        v = v.astype(theta.dtype, copy=False)
        state.m[name], state.v[name] = m, v
        step = (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(cfg.eps))
        new = theta - dt(lr) * step
        if name in decay and cfg.weight_decay:
            new = new - dt(lr * cfg.weight_decay) * theta
        out[name] = new.astype(theta.dtype, copy=False)
    state.t = t
    return out, state


@dataclass(frozen=True)
class SchedulerState:
    """Halve-on-plateau state tracking validation accuracy."""

    lr: float = 1e-4
    best: float = -math.inf
    num_bad: int = 0
    patience: int = 5
    factor: float = 0.5

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ParameterError("plateau factor must lie in (0, 1)")


def plateau_step(state: SchedulerState, val_accuracy: float) -> SchedulerState:
    """Strict improvement resets the counter; once more than ``patience``
    consecutive epochs fail to improve, the learning rate is multiplied by
    ``factor`` and the counter restarts."""
    if val_accuracy > state.best:
        return replace(state, best=val_accuracy, num_bad=0)
    bad = state.num_bad + 1
    if bad > state.patience:
        return replace(state, lr=state.lr * state.factor, num_bad=0)
    return replace(state, num_bad=bad)


@dataclass
class EarlyStopState:
    patience: int = 20
    best: float = -math.inf
    best_epoch: int = 0
    num_bad: int = 0
    snapshot: Optional[Dict[str, np.ndarray]] = None


def snapshot_params(params: ParameterSet) -> Dict[str, np.ndarray]:
    return OrderedDict((k, v.data.copy()) for k, v in params.items())


def early_stop_step(state: EarlyStopState, val_accuracy: float, params: ParameterSet,
                    epoch: int) -> Tuple[EarlyStopState, bool]:
    if val_accuracy > state.best:
        state.best = val_accuracy
        state.best_epoch = epoch
        state.num_bad = 0
        state.snapshot = snapshot_params(params)
        return state, False
    state.num_bad += 1
    return state, state.num_bad >= state.patience


def restore(snapshot: Mapping[str, np.ndarray]) -> ParameterSet:
    return OrderedDict((k, Tensor(v.copy(), requires_grad=True, dtype=v.dtype)) for k, v in snapshot.items())


def predict(params: ParameterSet, x: np.ndarray, cfg: ModelConfig, batch_size: int = 32) -> np.ndarray:
    """Eval-mode argmax predictions; ties go to the lowest class index."""
    preds = []
    with no_grad():
        for s in range(0, len(x), batch_size):
            logits = forward(x[s:s + batch_size], params, cfg, training=False).data
            preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(params: ParameterSet, ds: Dataset, cfg: ModelConfig, batch_size: int = 32) -> ConfusionMatrix:
    if len(ds) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    return ConfusionMatrix.from_predictions(ds.y, predict(params, ds.x, cfg, batch_size), cfg.num_classes)


HISTORY_COLUMNS = ("epoch", "lr", "train_loss", "train_acc", "val_acc", "val_recall", "val_precision",
                   "val_f1", "val_specificity")


@dataclass
class TrainResult:
    params: ParameterSet
    history: List[dict]
    best_epoch: int = 0
    stopped_early: bool = False
    steps: int = 0


def train(cfg: ModelConfig, train_ds: Dataset, val_ds: Dataset, opt: OptimizerConfig = OptimizerConfig(),
          sched: SchedulerState | None = None, stop_patience: int = 20, epochs: int = 100, batch_size: int = 16,
          seed: int = 0, max_steps: Optional[int] = None, params: ParameterSet | None = None) -> TrainResult:
    """Mini-batch AdamW training with validation-driven scheduling and early stopping.

    Returns the parameters of the best validation epoch (or the initial
    parameters when no epoch ran).
    """
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise InputError("training and validation sets must be non-empty")
    if batch_size < 1:
        raise ParameterError("batch_size must be positive")
    params = params if params is not None else init_params(cfg, stage_seed(seed, "init"))
    sched = sched or SchedulerState(lr=opt.learning_rate)
    stop = EarlyStopState(patience=stop_patience)
    adam = AdamState()
    decay = decayed_names(params)
    drop_rng = numpy_rng(stage_seed(seed, "dropout"))
    history: List[dict] = []
    steps = 0
    stopped = False
    n = len(train_ds)

    for epoch in range(1, epochs + 1):
        lr = sched.lr
        order = shuffle_indices(n, stage_seed(seed, f"epoch/{epoch}"))
        loss_sum, correct, seen = 0.0, 0, 0
        for s in range(0, n, batch_size):
            if max_steps is not None and steps >= max_steps:
                break
            idx = order[s:s + batch_size]
            xb, yb = train_ds.x[idx], train_ds.y[idx]
            for p in params.values():
                p.zero_grad()
            try:
                logits = forward(xb, params, cfg, training=True, rng=drop_rng)
                loss = cross_entropy(logits, yb)
                loss.backward()
            except NonFiniteError as e:
                raise NonFiniteError(f"training diverged at epoch {epoch}, step {steps + 1}: {e}") from e
            steps += 1
            new, adam = adamw_step({k: v.data for k, v in params.items()},
                                   {k: v.grad for k, v in params.items()}, adam, opt, steps, lr=lr, decay=decay)
            for k, arr in new.items():
                params[k].data = arr
                params[k].grad = None
            loss_sum += float(loss.data) * len(idx)
            correct += int((np.argmax(logits.data, axis=1) == yb).sum())
            seen += len(idx)
        if seen == 0:
            break
        metrics = macro_metrics(evaluate(params, val_ds, cfg))
        row = {"epoch": epoch, "lr": lr, "train_loss": loss_sum / seen, "train_acc": correct / seen,
               "val_acc": metrics["accuracy"], "val_recall": metrics["recall"],
               "val_precision": metrics["precision"], "val_f1": metrics["f1"],
               "val_specificity": metrics["specificity"]}
        history.append(row)
        log.info("epoch %d lr %.2e loss %.4f train_acc %.4f val_acc %.4f", epoch, lr, row["train_loss"],
                 row["train_acc"], row["val_acc"])
        sched = plateau_step(sched, metrics["accuracy"])
        stop, halt = early_stop_step(stop, metrics["accuracy"], params, epoch)
        if halt:
            stopped = True
            break
        if max_steps is not None and steps >= max_steps:
            break

    best = restore(stop.snapshot) if stop.snapshot is not None else params
    return TrainResult(best, history, stop.best_epoch, stopped, steps)


def write_history(path, history: List[dict]) -> None:
    lines = ["\t".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append("\t".join(str(row["epoch"]) if c == "epoch" else repr(float(row[c])) for c in HISTORY_COLUMNS))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write history {path}: {e}") from e


def read_history(path) -> List[dict]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()
    head = rows[0].split("\t")
    out = []
    for line in rows[1:]:
        if not line:
            continue
        vals = line.split("\t")
        out.append({k: int(v) if k == "epoch" else float(v) for k, v in zip(head, vals)})
    return out


def probabilities(logits: np.ndarray) -> np.ndarray:
    return softmax_array(np.asarray(logits, dtype=np.float64), axis=-1)
