"""Deterministic SGD training loop for the pointer-generator.

Plain SGD with global gradient-norm clipping and learning-rate halving when
the validation loss stops improving.  Everything (batch order, dropout,
initialization) is driven by seeded generators, so two runs with the same
seed produce identical loss logs.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .model import Batch, PointerGenerator, make_batch, save_checkpoint

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 0.15
    clip_norm: float = 2.0
    eval_interval: int = 200
    patience: int = 2  # evals without improvement before halving the rate
    lr_decay: float = 0.5
    min_lr: float = 1e-3
    seed: int = 0
    log_interval: int = 50
    checkpoint_interval: int = 0  # 0: only the final checkpoint is written


@dataclass
class TrainResult:
    loss_log: List[Tuple[int, float]]
    valid_log: List[Tuple[int, float]]
    best_step: int
    best_valid_loss: float
    diverged: bool
    final_lr: float

    def to_dict(self) -> dict:
        return {
            "loss_log": [[s, round(v, 6)] for s, v in self.loss_log],
            "valid_log": [[s, round(v, 6)] for s, v in self.valid_log],
            "best_step": self.best_step,
            "best_valid_loss": round(self.best_valid_loss, 6),
            "diverged": self.diverged,
            "final_lr": self.final_lr,
        }


def _global_norm(grads: Dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    return math.sqrt(total)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches, reshuffled each epoch."""
    while True:
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            chunk = order[lo : lo + batch_size]
            if len(chunk):
                yield chunk


def evaluate_loss(model: PointerGenerator, batches: Sequence[Batch]) -> float:
    total = 0.0
    tokens = 0.0
    for batch in batches:
        z = float(batch.tgt_mask.sum())
        total += model.loss(batch) * z
        tokens += z
    return total / max(tokens, 1.0)


def train(
    model: PointerGenerator,
    train_samples: Sequence,
    config: TrainingConfig,
    valid_samples: Optional[Sequence] = None,
    pad_id: int = 0,
    unk_id: int = 1,
    start_id: int = 2,
    end_id: int = 3,
    checkpoint_path: Optional[Path] = None,
) -> TrainResult:
    """Train in place; on divergence the parameters roll back to the best
    checkpoint seen and the result is flagged."""
    if not train_samples:
        raise ValueError("training set is empty")
    cfg = model.config
    rng_batches = np.random.default_rng(config.seed)
    rng_dropout = np.random.default_rng(config.seed + 1)
    Vt = cfg.target_vocab_size
    dt = cfg.dtype

    def batch_of(idx) -> Batch:
        return make_batch(
            [train_samples[i] for i in idx], pad_id, unk_id, start_id, end_id, Vt, dt
        )

    valid_batches: List[Batch] = []
    if valid_samples:
        for lo in range(0, len(valid_samples), config.batch_size):
            valid_batches.append(
                make_batch(
                    list(valid_samples[lo : lo + config.batch_size]),
                    pad_id,
                    unk_id,
                    start_id,
                    end_id,
                    Vt,
                    dt,
                )
            )

    lr = config.learning_rate
    loss_log: List[Tuple[int, float]] = []
    valid_log: List[Tuple[int, float]] = []
    best_valid = math.inf
    best_step = 0
    best_params = {k: v.copy() for k, v in model.params.items()}
    stale_evals = 0
    diverged = False
    train_mode = cfg.dropout > 0.0

    stream = _batches(len(train_samples), config.batch_size, rng_batches)
    for step in range(1, config.steps + 1):
        idx = next(stream)
        batch = batch_of(idx)
        loss, cache = model.forward_loss(batch, train=train_mode, rng=rng_dropout)
        if not math.isfinite(loss):
            log.error("training diverged at step %d (loss=%r); rolling back", step, loss)
            model.params = best_params
            diverged = True
            loss_log.append((step, float("inf")))
            break
        grads = model.backward(cache)
        norm = _global_norm(grads)
        scale = lr * (config.clip_norm / norm if norm > config.clip_norm else 1.0)
        for name, g in grads.items():
            model.params[name] -= scale * g
        if step % config.log_interval == 0 or step == 1:
            loss_log.append((step, loss))
        if (
            checkpoint_path is not None
            and config.checkpoint_interval > 0
            and step % config.checkpoint_interval == 0
        ):
            interim = Path(checkpoint_path).with_suffix(f".step{step:06d}.ckpt")
            save_checkpoint(interim, model)
        if valid_batches and (step % config.eval_interval == 0 or step == config.steps):
            vloss = evaluate_loss(model, valid_batches)
            valid_log.append((step, vloss))
            if vloss < best_valid - 1e-6:
                best_valid = vloss
                best_step = step
                best_params = {k: v.copy() for k, v in model.params.items()}
                stale_evals = 0
            else:
                stale_evals += 1
                if stale_evals > config.patience and lr > config.min_lr:
                    lr = max(config.min_lr, lr * config.lr_decay)
                    stale_evals = 0
                    log.info("validation plateau; learning rate now %g", lr)

    if valid_batches and not diverged:
        # keep the best-validation parameters
        final_vloss = valid_log[-1][1] if valid_log else math.inf
        if best_valid < final_vloss:
            model.params = best_params
    if not valid_batches and not diverged:
        best_step = config.steps
        best_valid = loss_log[-1][1] if loss_log else math.inf
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model)
    return TrainResult(
        loss_log=loss_log,
        valid_log=valid_log,
        best_step=best_step,
        best_valid_loss=best_valid if math.isfinite(best_valid) else -1.0,
        diverged=diverged,
        final_lr=lr,
    )
