"""Training loop: seeded shuffling, BCE + Adam, per-epoch dice tracking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import NablaArchitecture, build_network, network_backward, network_forward
from .ops import bce_loss, bce_loss_backward, dice_coefficient
from .params import ParamStore, adam_step
from .patches import PatchPair
from .tiling import normalize_image


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 32
    learning_rate: float = 3e-4
    seed: int = 0
    dilation_k: int = 13
    early_stop_dice: float | None = None  # stop once train dice reaches this

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_dice: float
    val_dice: float | None


@dataclass
class TrainResult:
    store: ParamStore  # best validation checkpoint (last epoch when no val set)
    final_store: ParamStore
    arch: NablaArchitecture
    history: list[EpochStats] = field(default_factory=list)
    steps: int = 0


def _batch_arrays(pairs: list[PatchPair], idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([normalize_image(pairs[i].image) for i in idx])
    masks = np.stack([pairs[i].mask for i in idx]).astype(np.float32)[..., None]
    return images, masks


def evaluate_dice(
    store: ParamStore,
    arch: NablaArchitecture,
    pairs: list[PatchPair],
    batch_size: int = 32,
    tau: float = 0.5,
) -> float:
    """Global dice of thresholded predictions over all pixels of *pairs*."""
    inter = 0
    total = 0
    for start in range(0, len(pairs), batch_size):
        idx = np.arange(start, min(start + batch_size, len(pairs)))
        images, masks = _batch_arrays(pairs, idx)
        pred = network_forward(store, arch, images) > tau
        target = masks > 0.5
        inter += int((pred & target).sum())
        total += int(pred.sum()) + int(target.sum())
    return 1.0 if total == 0 else 2.0 * inter / total


def train(
    pairs: list[PatchPair],
    config: TrainConfig,
    val_pairs: list[PatchPair] | None = None,
    arch: NablaArchitecture | None = None,
    log_fn=None,
) -> TrainResult:
    """Train from a fresh He-initialized network.

    Shuffles per epoch with a seeded generator, keeps the trailing partial
    batch, and records train dice (accumulated over the epoch's own batch
    outputs) plus validation dice per epoch. The best-validation weights are
    retained; with no validation set the final weights are returned. A
    non-finite loss aborts immediately.
    """
    if not pairs:
        raise ValueError("training set is empty")
    arch = arch or NablaArchitecture()
    store = build_network(arch, config.seed)
    rng = np.random.default_rng(config.seed)
    best_store = None
    best_val = -1.0
    result = TrainResult(store=store, final_store=store, arch=arch)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(pairs))
        losses = []
        inter = 0
        total = 0
        for start in range(0, len(pairs), config.batch_size):
            idx = order[start : start + config.batch_size]
            images, masks = _batch_arrays(pairs, idx)
            caches: dict = {}
            prob = network_forward(store, arch, images, caches=caches)
            loss = bce_loss(prob, masks)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss} at epoch {epoch}, step {result.steps + 1}"
                )
            grads = network_backward(store, arch, caches, bce_loss_backward(prob, masks))
            adam_step(store, grads, config.learning_rate)
            result.steps += 1
            losses.append(loss)
            pred = prob > 0.5
            target = masks > 0.5
            inter += int((pred & target).sum())
            total += int(pred.sum()) + int(target.sum())
        train_dice = 1.0 if total == 0 else 2.0 * inter / total
        val_dice = None
        if val_pairs:
            val_dice = evaluate_dice(store, arch, val_pairs, config.batch_size)
            if val_dice > best_val:
                best_val = val_dice
                best_store = store.copy()
        stats = EpochStats(
            epoch=epoch, loss=float(np.mean(losses)), train_dice=train_dice, val_dice=val_dice
        )
        result.history.append(stats)
        if log_fn is not None:
            log_fn(stats)
        if config.early_stop_dice is not None and train_dice >= config.early_stop_dice:
            break

    result.final_store = store
    result.store = best_store if best_store is not None else store
    return result
