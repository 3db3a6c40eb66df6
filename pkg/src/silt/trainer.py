"""Optimization loop: Adam with a cyclical, exponentially decaying learning
rate, validation-driven model selection, and bitwise-resumable checkpoints.

Checkpoint directory layout: ``params.bin`` + ``head.json`` (final weights),
``adam.bin`` (first/second moments as ``m:<name>`` / ``s:<name>``),
``best/`` (lowest-validation-loss weights) and ``run.json`` (configs,
history, step counters and rng state).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import model as md
from . import tensor as tz
from .errors import ConfigError, DataError, NumericError, StoreFormatError
from .store import assemble_batch
from .tensor import RngState, derive_seed

CHECKPOINT_VERSION = 1


@dataclass
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.9999
    epsilon: float = 1e-7
    alpha0: float = 3e-6
    alpha_max: float = 3e-3
    step_size: int = 2000
    gamma: float = 0.9999
    clip_norm: float | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha0 < self.alpha_max:
            raise ConfigError(f"need 0 < alpha0 < alpha_max, got {self.alpha0}, {self.alpha_max}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.step_size < 1:
            raise ConfigError(f"step_size must be >= 1, got {self.step_size}")


@dataclass
class TrainRunConfig:
    epochs: int = 10
    batch_size: int = 32
    dropout: float | None = None  # overrides the head config when set
    seed: int = 0
    lcap: int = 125

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.dropout is not None and not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")


def lr_at(t, cfg: OptimizerConfig) -> float:
    """Triangular cycle between alpha0 and a per-step decaying ceiling.

    The ceiling alpha_max * gamma^t never drops below alpha0.
    """
    if t < 0:
        raise ConfigError(f"step index must be >= 0, got {t}")
    ceiling = max(cfg.alpha0, cfg.alpha_max * cfg.gamma ** t)
    x = abs(t / cfg.step_size - (2 * math.floor(1 + t / (2 * cfg.step_size)) - 1))
    return cfg.alpha0 + (ceiling - cfg.alpha0) * max(0.0, 1.0 - x)


class AdamState:
    """Per-parameter first/second moments plus the shared timestep."""

    def __init__(self, m, s, t=0):
        self.m = m
        self.s = s
        self.t = t

    @classmethod
    def zeros_like(cls, params):
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.named()},
            s={name: np.zeros_like(t.data) for name, t in params.named()},
        )


def adam_step(params, grads, state: AdamState, lr, cfg: OptimizerConfig):
    """Bias-corrected Adam update applied in place to the parameter data.

    ``grads`` maps public tensor names to gradient arrays; a NaN/Inf
    gradient aborts the step with a diagnostic naming the tensor.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in {name!r}; step aborted")
    if cfg.clip_norm is not None:
        total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
        if total > cfg.clip_norm:
            factor = cfg.clip_norm / total
            grads = {name: g * factor for name, g in grads.items()}
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, tensor in params.named():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m[name]
        s = state.s[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        s *= cfg.beta2
        s += (1.0 - cfg.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(s / bc2) + cfg.epsilon)
        tensor.data = tensor.data - (lr * update).astype(tensor.data.dtype)


@dataclass
class HistoryEntry:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    lr: float


@dataclass
class TrainResult:
    params: md.HeadParams
    best_params: md.HeadParams
    best_epoch: int
    best_val_loss: float
    adam: AdamState
    history: list
    step: int
    dropout_rng: RngState
    diverged: bool = False
    best_snapshot: dict = field(default_factory=dict)


def evaluate(examples, store, params, head_cfg, lcap=125, batch_size=32):
    """Eval-mode loss/accuracy over a split; never touches params or state.

    Returns (mean loss, accuracy, predicted class indices in example order).
    """
    if not examples:
        raise DataError("evaluate: empty example list")
    loss_sum = 0.0
    correct = 0
    preds = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        batch = assemble_batch(store, chunk, lcap)
        if batch.labels is None:
            raise DataError("evaluate: examples lack labels")
        logits, _ = md.forward(batch, params, head_cfg)
        loss = tz.cross_entropy(logits, batch.labels)
        loss_sum += float(loss.data) * len(chunk)
        pred = np.argmax(logits.data, axis=-1)
        preds.extend(int(p) for p in pred)
        correct += int((pred == batch.labels).sum())
    return loss_sum / len(examples), correct / len(examples), preds


def _snapshot(params):
    return {name: t.data.copy() for name, t in params.named()}


def _params_from_snapshot(snapshot):
    kwargs = {
        attr: tz.Tensor(snapshot[public], requires_grad=True)
        for attr, public in md.HeadParams._NAMES.items()
    }
    return md.HeadParams(**kwargs)


def train(
    train_examples,
    valid_examples,
    store,
    head_cfg: md.HeadConfig,
    opt_cfg: OptimizerConfig | None = None,
    run_cfg: TrainRunConfig | None = None,
    resume: "Checkpoint | None" = None,
) -> TrainResult:
    """Seeded mini-batch loop; keeps the checkpoint with the lowest
    validation loss. Bitwise deterministic for a fixed (seed, data, config),
    and exactly resumable from a saved checkpoint."""
    opt_cfg = opt_cfg or OptimizerConfig()
    run_cfg = run_cfg or TrainRunConfig()
    if not train_examples or not valid_examples:
        raise DataError("train and validation splits must be non-empty")
    if run_cfg.dropout is not None:
        head_cfg = replace(head_cfg, dropout=run_cfg.dropout)

    if resume is not None:
        params = resume.params
        adam = resume.adam
        drop_rng = resume.dropout_rng.clone()
        history = list(resume.history)
        step = resume.step
        start_epoch = resume.next_epoch
        best_snapshot = resume.best_snapshot
        best_epoch = resume.best_epoch
        best_val = resume.best_val_loss
    else:
        params = md.init_head_params(head_cfg, RngState(derive_seed(run_cfg.seed, "init")))
        adam = AdamState.zeros_like(params)
        drop_rng = RngState(derive_seed(run_cfg.seed, "dropout"))
        history = []
        step = 0
        start_epoch = 0
        best_snapshot = _snapshot(params)
        best_epoch = -1
        best_val = math.inf

    diverged = False
    for epoch in range(start_epoch, run_cfg.epochs):
        shuffle_rng = RngState(derive_seed(run_cfg.seed, "shuffle", epoch))
        order = np.argsort(shuffle_rng.uniform((len(train_examples),)), kind="stable")
        epoch_loss = 0.0
        seen = 0
        lr = lr_at(step, opt_cfg)
        try:
            for start in range(0, len(order), run_cfg.batch_size):
                chunk = [train_examples[i] for i in order[start : start + run_cfg.batch_size]]
                batch = assemble_batch(store, chunk, run_cfg.lcap)
                params.zero_grad()
                logits, _ = md.forward(batch, params, head_cfg, drop_rng, training=True)
                loss = tz.cross_entropy(logits, batch.labels)
                tz.backward(loss)
                lr = lr_at(step, opt_cfg)
                adam_step(
                    params,
                    {name: t.grad for name, t in params.named() if t.grad is not None},
                    adam,
                    lr,
                    opt_cfg,
                )
                step += 1
                epoch_loss += float(loss.data) * len(chunk)
                seen += len(chunk)
        except NumericError:
            # divergence: stop training, fall back to the last good snapshot
            diverged = True
            break
        val_loss, val_acc, _ = evaluate(
            valid_examples, store, params, head_cfg, run_cfg.lcap, run_cfg.batch_size
        )
        history.append(HistoryEntry(epoch, epoch_loss / max(seen, 1), val_loss, val_acc, lr))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_snapshot = _snapshot(params)

    return TrainResult(
        params=params,
        best_params=_params_from_snapshot(best_snapshot),
        best_epoch=best_epoch,
        best_val_loss=best_val,
        adam=adam,
        history=history,
        step=step,
        dropout_rng=drop_rng,
        diverged=diverged,
        best_snapshot=best_snapshot,
    )


# ---------------------------------------------------------------------------
# baseline (frozen encoder + linear softmax)


@dataclass
class BaselineTrainResult:
    params: md.BaselineParams
    best_params: md.BaselineParams
    best_epoch: int
    best_val_loss: float
    history: list
    step: int


def _evaluate_baseline(examples, store, params, lcap, batch_size):
    loss_sum = 0.0
    correct = 0
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        batch = assemble_batch(store, chunk, lcap)
        logits = md.baseline_forward(batch, params)
        loss_sum += float(tz.cross_entropy(logits, batch.labels).data) * len(chunk)
        correct += int((np.argmax(logits.data, axis=-1) == batch.labels).sum())
    return loss_sum / len(examples), correct / len(examples)


def train_baseline(train_examples, valid_examples, store, opt_cfg=None, run_cfg=None):
    """Same loop as ``train`` for the linear baseline (no dropout sites)."""
    opt_cfg = opt_cfg or OptimizerConfig()
    run_cfg = run_cfg or TrainRunConfig()
    if not train_examples or not valid_examples:
        raise DataError("train and validation splits must be non-empty")
    params = md.init_baseline_params(store.width, RngState(derive_seed(run_cfg.seed, "init")))
    adam = AdamState.zeros_like(params)
    history = []
    step = 0
    best_val = math.inf
    best_epoch = -1
    best = {name: t.data.copy() for name, t in params.named()}
    for epoch in range(run_cfg.epochs):
        shuffle_rng = RngState(derive_seed(run_cfg.seed, "shuffle", epoch))
        order = np.argsort(shuffle_rng.uniform((len(train_examples),)), kind="stable")
        epoch_loss = 0.0
        seen = 0
        lr = lr_at(step, opt_cfg)
        for start in range(0, len(order), run_cfg.batch_size):
            chunk = [train_examples[i] for i in order[start : start + run_cfg.batch_size]]
            batch = assemble_batch(store, chunk, run_cfg.lcap)
            params.zero_grad()
            loss = tz.cross_entropy(md.baseline_forward(batch, params), batch.labels)
            tz.backward(loss)
            lr = lr_at(step, opt_cfg)
            adam_step(
                params,
                {name: t.grad for name, t in params.named() if t.grad is not None},
                adam,
                lr,
                opt_cfg,
            )
            step += 1
            epoch_loss += float(loss.data) * len(chunk)
            seen += len(chunk)
        val_loss, val_acc = _evaluate_baseline(
            valid_examples, store, params, run_cfg.lcap, run_cfg.batch_size
        )
        history.append(HistoryEntry(epoch, epoch_loss / max(seen, 1), val_loss, val_acc, lr))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best = {name: t.data.copy() for name, t in params.named()}
    best_params = md.BaselineParams(
        w=tz.Tensor(best["baseline.w"], requires_grad=True),
        b=tz.Tensor(best["baseline.b"], requires_grad=True),
    )
    return BaselineTrainResult(params, best_params, best_epoch, best_val, history, step)


def save_baseline_checkpoint(dirpath, result: BaselineTrainResult, opt_cfg, run_cfg):
    os.makedirs(dirpath, exist_ok=True)
    md.write_tensors(
        os.path.join(dirpath, "baseline.bin"),
        [(name, t.data) for name, t in result.best_params.named()],
    )
    with open(os.path.join(dirpath, "baseline.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "optimizer": asdict(opt_cfg),
                "run": asdict(run_cfg),
                "history": [asdict(h) for h in result.history],
                "best": {"epoch": result.best_epoch, "val_loss": result.best_val_loss},
            },
            fh,
            indent=2,
        )


def load_baseline_checkpoint(dirpath, expect_in_dim=None) -> md.BaselineParams:
    arrays = md.read_tensors(os.path.join(dirpath, "baseline.bin"))
    if "baseline.w" not in arrays or "baseline.b" not in arrays:
        raise StoreFormatError(f"baseline checkpoint under {dirpath} is incomplete")
    w = arrays["baseline.w"]
    if expect_in_dim is not None and w.shape[0] != 3 * expect_in_dim:
        raise ConfigError(
            f"baseline weights expect width {w.shape[0] // 3}, store provides {expect_in_dim}"
        )
    return md.BaselineParams(
        w=tz.Tensor(w, requires_grad=True),
        b=tz.Tensor(arrays["baseline.b"], requires_grad=True),
    )


# ---------------------------------------------------------------------------
# checkpointing


@dataclass
class Checkpoint:
    params: md.HeadParams
    adam: AdamState
    head_cfg: md.HeadConfig
    opt_cfg: OptimizerConfig
    run_cfg: TrainRunConfig
    history: list
    step: int
    next_epoch: int
    dropout_rng: RngState
    best_snapshot: dict
    best_epoch: int
    best_val_loss: float
    diverged: bool = False


def save_checkpoint(dirpath, result: TrainResult, head_cfg, opt_cfg, run_cfg, next_epoch):
    os.makedirs(dirpath, exist_ok=True)
    md.save_head(dirpath, result.params, head_cfg)
    md.write_tensors(
        os.path.join(dirpath, "adam.bin"),
        [(f"m:{name}", arr) for name, arr in result.adam.m.items()]
        + [(f"s:{name}", arr) for name, arr in result.adam.s.items()],
    )
    md.save_head(os.path.join(dirpath, "best"), result.best_params, head_cfg)
    run = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "optimizer": asdict(opt_cfg),
        "run": asdict(run_cfg),
        "history": [asdict(h) for h in result.history],
        "step": result.step,
        "adam_t": result.adam.t,
        "next_epoch": next_epoch,
        "dropout_rng": {"seed": result.dropout_rng.seed, "counter": result.dropout_rng.counter},
        "best": {"epoch": result.best_epoch, "val_loss": result.best_val_loss},
        "diverged": result.diverged,
    }
    with open(os.path.join(dirpath, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(run, fh, indent=2)


def load_checkpoint(dirpath, expect_head_cfg=None) -> Checkpoint:
    try:
        with open(os.path.join(dirpath, "run.json"), encoding="utf-8") as fh:
            run = json.load(fh)
    except FileNotFoundError as e:
        raise StoreFormatError(f"no run.json under {dirpath}") from e
    except json.JSONDecodeError as e:
        raise StoreFormatError(f"corrupt run.json under {dirpath}: {e}") from e
    if run.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise StoreFormatError(
            f"unsupported checkpoint_version {run.get('checkpoint_version')}"
        )
    params, head_cfg = md.load_head(dirpath, expect_cfg=expect_head_cfg)
    adam_arrays = md.read_tensors(os.path.join(dirpath, "adam.bin"))
    m = {}
    s = {}
    for key, arr in adam_arrays.items():
        kind, _, name = key.partition(":")
        if kind == "m":
            m[name] = arr
        elif kind == "s":
            s[name] = arr
        else:
            raise StoreFormatError(f"unexpected tensor {key!r} in adam.bin")
    for name, t in params.named():
        if name not in m or name not in s or m[name].shape != t.shape:
            raise StoreFormatError(f"optimizer state missing or mismatched for {name!r}")
    best_params, _ = md.load_head(os.path.join(dirpath, "best"), expect_cfg=head_cfg)
    return Checkpoint(
        params=params,
        adam=AdamState(m, s, t=int(run["adam_t"])),
        head_cfg=head_cfg,
        opt_cfg=OptimizerConfig(**run["optimizer"]),
        run_cfg=TrainRunConfig(**run["run"]),
        history=[HistoryEntry(**h) for h in run["history"]],
        step=int(run["step"]),
        next_epoch=int(run["next_epoch"]),
        dropout_rng=RngState(run["dropout_rng"]["seed"], run["dropout_rng"]["counter"]),
        best_snapshot={name: t.data.copy() for name, t in best_params.named()},
        best_epoch=int(run["best"]["epoch"]),
        best_val_loss=float(run["best"]["val_loss"]),
        diverged=bool(run.get("diverged", False)),
    )
