"""MSE training with AdamW, linear-warmup cosine schedule and exact resumption."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import WindowSet
from .embedding import ConfigurationError
from .model import Checkpoint, WssmConfig, copy_params, forward_batch, init_params, save_checkpoint
from .params import flatten, grads_of, map_tree, to_leaves, unflatten, zeros_like_tree

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    base_lr: float = 1e-4
    warmup_iters: int | None = None  # None -> max(1, max_iters // 20)
    max_iters: int = 500
    batch_size: int = 16
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0
    val_every: int = 0
    clip_norm: float | None = None
    freeze_geo: bool = False
    window_stride: int = 1

    def __post_init__(self):
        if self.warmup_iters is None:
            self.warmup_iters = max(1, self.max_iters // 20)

    def validate(self):
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if not 0 <= self.warmup_iters < self.max_iters:
            raise ConfigurationError(f"warmup_iters must lie in [0, {self.max_iters})")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, raw):
        extra = set(raw) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigurationError(f"unknown train config keys: {sorted(extra)}")
        return cls(**raw)


def lr_at(it: int, cfg: TrainConfig) -> float:
    if not 0 <= it <= cfg.max_iters:
        raise ValueError(f"iteration {it} outside [0, {cfg.max_iters}]")
    w = cfg.warmup_iters
    if it < w:
        return cfg.base_lr * (it + 1) / w
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * (it - w) / (cfg.max_iters - w)))


def mse_loss(y_hat, y):
    """Mean squared error and its gradient with respect to ``y_hat``."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    diff = y_hat - y
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def init_optimizer(params):
    return {"step": 0, "m": zeros_like_tree(params), "v": zeros_like_tree(params)}


def adamw_step(params, grads, state, lr: float, cfg: TrainConfig):
    """One decoupled-weight-decay Adam update; returns new (params, state)."""
    flat_p, flat_g = flatten(params), flatten(grads)
    flat_m, flat_v = flatten(state["m"]), flatten(state["v"])
    t = state["step"] + 1
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in flat_p.items():
        g = flat_g[name]
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(f"non-finite gradient for parameter {name}")
        m = cfg.beta1 * flat_m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * flat_v[name] + (1.0 - cfg.beta2) * g * g
        new_p[name] = p - lr * cfg.weight_decay * p - lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        new_m[name], new_v[name] = m, v
    return unflatten(new_p), {"step": t, "m": unflatten(new_m), "v": unflatten(new_v)}


def batch_indices(it: int, n: int, cfg: TrainConfig) -> np.ndarray:
    """Samples for iteration ``it``: epoch-wise seeded permutation, no replacement."""
    bs = min(cfg.batch_size, n)
    per_epoch = max(1, n // bs)
    epoch, pos = divmod(it, per_epoch)
    perm = np.random.default_rng([cfg.seed, epoch]).permutation(n)
    return perm[pos * bs:(pos + 1) * bs]


def loss_and_grads(params, model_cfg: WssmConfig, batch: WindowSet, freeze_geo=False):
    leaves = to_leaves(params)
    out = forward_batch(leaves, model_cfg, batch.x, batch.past_feats, batch.future_feats)
    loss, g = mse_loss(out.data, batch.y)
    if not math.isfinite(loss):
        return loss, None
    out.backward(g)
    grads = grads_of(leaves)
    if freeze_geo:
        grads["geo"] = zeros_like_tree(grads["geo"])
    return loss, grads


def predict(params, model_cfg: WssmConfig, windows: WindowSet, batch_size: int = 256) -> np.ndarray:
    """Normalized predictions (n, M, H) without recording a tape."""
    out = []
    for lo in range(0, len(windows), batch_size):
        sl = slice(lo, lo + batch_size)
        out.append(forward_batch(params, model_cfg, windows.x[sl], windows.past_feats[sl],
                                 windows.future_feats[sl]).data)
    if not out:
        return np.zeros(windows.y.shape)
    return np.concatenate(out)


def evaluate_loss(params, model_cfg, windows: WindowSet) -> float:
    return mse_loss(predict(params, model_cfg, windows), windows.y)[0]


def _clip(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in flatten(grads).values()))
    if total <= max_norm:
        return grads
    scale = max_norm / (total + 1e-12)
    return map_tree(lambda g: g * scale, grads)


def _all_finite(params):
    return all(np.all(np.isfinite(a)) for a in flatten(params).values())


@dataclass
class TrainResult:
    params: dict
    optimizer: dict
    history: list = field(default_factory=list)  # (iteration, lr, loss)
    val_history: list = field(default_factory=list)  # (iteration, val_loss)
    best_val: float | None = None
    best_iteration: int | None = None
    best_params: dict | None = None


def train(model_cfg: WssmConfig, train_cfg: TrainConfig, dataset: WindowSet,
          val_set: WindowSet | None = None, out_dir=None, resume: Checkpoint | None = None,
          manifest: dict | None = None, stop_at: int | None = None,
          callback: Callable | None = None) -> TrainResult:
    """Run iterations up to ``train_cfg.max_iters`` (or ``stop_at``).

    With ``out_dir`` set, writes ``loss.csv``, periodic ``ckpt_<it>.ckpt``,
    ``best.ckpt`` (when validating) and ``final.ckpt``. ``resume`` continues
    from a checkpoint that carries optimizer state.
    """
    model_cfg.validate()
    train_cfg.validate()
    if len(dataset) == 0:
        raise ConfigurationError("training set is empty")
    manifest = dict(manifest or {})
    manifest["train"] = train_cfg.to_dict()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    if resume is not None:
        if resume.optimizer is None:
            raise ConfigurationError("checkpoint has no optimizer state to resume from")
        params, opt, start = copy_params(resume.params), resume.optimizer, resume.iteration
        opt = {"step": opt["step"], "m": copy_params(opt["m"]), "v": copy_params(opt["v"])}
    else:
        params = init_params(model_cfg)
        if train_cfg.freeze_geo:
            params["geo"] = zeros_like_tree(params["geo"])
        opt, start = init_optimizer(params), 0

    result = TrainResult(params, opt)
    end = train_cfg.max_iters if stop_at is None else min(stop_at, train_cfg.max_iters)
    loss_path = out_dir / "loss.csv" if out_dir is not None else None
    if loss_path is not None and start == 0:
        loss_path.write_text("iteration,lr,loss\n")

    def snapshot(it, p, o):
        return Checkpoint(model_cfg, p, it, manifest, o)

    for it in range(start, end):
        batch = dataset.take(batch_indices(it, len(dataset), train_cfg))
        loss, grads = loss_and_grads(params, model_cfg, batch, train_cfg.freeze_geo)
        if grads is None:
            raise TrainingAborted(f"non-finite loss at iteration {it}")
        if train_cfg.clip_norm:
            grads = _clip(grads, train_cfg.clip_norm)
        lr = lr_at(it, train_cfg)
        params, opt = adamw_step(params, grads, opt, lr, train_cfg)
        if not _all_finite(params):
            raise TrainingAborted(f"non-finite parameters after iteration {it}")
        result.history.append((it, lr, loss))
        if loss_path is not None:
            with open(loss_path, "a") as fh:
                fh.write(f"{it},{lr:.10g},{loss:.10g}\n")
        done = it + 1
        if callback is not None:
            callback(it, lr, loss)
        if val_set is not None and len(val_set) and train_cfg.val_every and (
                done % train_cfg.val_every == 0 or done == end):
            vloss = evaluate_loss(params, model_cfg, val_set)
            result.val_history.append((done, vloss))
            if result.best_val is None or vloss < result.best_val:
                result.best_val, result.best_iteration = vloss, done
                result.best_params = copy_params(params)
                if out_dir is not None:
                    save_checkpoint(out_dir / "best.ckpt", snapshot(done, params, None))
            log.info("iteration %d val_loss %.6f", done, vloss)
        if out_dir is not None and train_cfg.checkpoint_every and done % train_cfg.checkpoint_every == 0:
            save_checkpoint(out_dir / f"ckpt_{done}.ckpt", snapshot(done, params, opt))

    result.params, result.optimizer = params, opt
    if out_dir is not None:
        save_checkpoint(out_dir / "final.ckpt", snapshot(end, params, opt))
    return result
