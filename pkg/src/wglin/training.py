"""Training and evaluation harness shared by the CLI, the ablation driver
and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import Dataset, MultiViewBatch, SynthSpec, generate_dataset
from .errors import NonFinite, NonFiniteLoss
from .metrics import MetricsReport, evaluate_predictions
from .model import ModelConfig, Wglin
from .optim import Adam
from .rng import Rng, mix_seed
from . import tensor as T


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    variant: str = "full"
    seed: int = 42
    epochs: int = 10
    batch_size: int = 24
    learning_rate: float = 1e-3
    dataset: str = "synthetic"     # "synthetic" or a directory path
    n_per_class: int = 50
    split_ratio: float = 0.8
    overlap_fraction: float = 0.15

    def synth_spec(self) -> SynthSpec:
        m = self.model
        return SynthSpec(seed=self.seed, height=m.height, width=m.width,
                         views=m.views, image_channels=m.image_channels,
                         lesion_channels=m.lesion_channels,
                         overlap_fraction=self.overlap_fraction)


def build_model(cfg: RunConfig) -> Wglin:
    return Wglin(cfg.model, cfg.variant, seed=cfg.seed)


def load_data(cfg: RunConfig):
    if cfg.dataset == "synthetic":
        return generate_dataset(cfg.synth_spec(), cfg.n_per_class, cfg.split_ratio)
    from .data import load_directory_dataset
    train, skip_a = load_directory_dataset(cfg.dataset, "train", cfg.model.views)
    test, skip_b = load_directory_dataset(cfg.dataset, "test", cfg.model.views)
    return train, test


def train_step(model: Wglin, optimizer: Adam, batch: MultiViewBatch) -> tuple[float, np.ndarray]:
    """One optimizer step; returns (loss value, predicted labels)."""
    try:
        _, _, pf = model(batch.images, batch.lesions)
        loss = T.cross_entropy(pf, batch.labels)
    except NonFinite as e:
        raise NonFiniteLoss(f"non-finite value during training step: {e}") from e
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteLoss(f"loss is {value}")
    loss.backward()
    optimizer.step()
    optimizer.zero_grad()
    return value, pf.data.argmax(axis=1)


def train_model(
    model: Wglin,
    train_ds: Dataset,
    cfg: RunConfig,
    on_epoch: Optional[Callable[[int, float, float], bool]] = None,
) -> list[tuple[int, float, float]]:
    """Runs up to cfg.epochs epochs; `on_epoch(epoch, loss, acc)` may return
    True to stop early. Returns the (epoch, mean_loss, train_acc) history."""
    optimizer = Adam(list(model.named_parameters()), lr=cfg.learning_rate)
    model.last_optimizer = optimizer
    shuffle_rng = Rng(mix_seed(cfg.seed, 0x5E0F))
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = list(range(len(train_ds)))
        shuffle_rng.shuffle(order)
        losses, hits, seen = [], 0, 0
        for batch in train_ds.batches(cfg.batch_size, order):
            value, pred = train_step(model, optimizer, batch)
            losses.append(value)
            hits += int((pred == batch.labels).sum())
            seen += len(batch.labels)
        acc = hits / max(seen, 1)
        history.append((epoch, float(np.mean(losses)), acc))
        if on_epoch is not None and on_epoch(epoch, history[-1][1], acc):
            break
    model.last_optimizer = optimizer
    return history


def predict(model: Wglin, dataset: Dataset, batch_size: int = 24):
    """Deterministic no-grad evaluation; returns (y_true, y_pred, probs)."""
    trues, preds, probs = [], [], []
    with T.no_grad():
        for batch in dataset.batches(batch_size):
            _, _, pf = model(batch.images, batch.lesions)
            logits = pf.data
            shifted = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            probs.append(e / e.sum(axis=1, keepdims=True))
            preds.append(logits.argmax(axis=1))
            trues.append(batch.labels)
    return (np.concatenate(trues), np.concatenate(preds), np.concatenate(probs))


def evaluate_model(model: Wglin, dataset: Dataset, batch_size: int = 24) -> MetricsReport:
    y_true, y_pred, probs = predict(model, dataset, batch_size)
    return evaluate_predictions(y_true, y_pred, probs, model.cfg.num_classes)


def lesion_area_baseline(train_ds: Dataset, test_ds: Dataset) -> float:
    """Accuracy of thresholding total lesion-mask area, the sanity baseline
    guaranteeing the synthetic task is learnable."""
    def areas(ds):
        return ds.lesions.reshape(len(ds), -1).astype(np.float64).sum(axis=1)

    a_train = areas(train_ds)
    centers = []
    for grade in range(int(train_ds.labels.max()) + 1):
        centers.append(np.median(a_train[train_ds.labels == grade]))
    centers = np.asarray(centers)
    cuts = 0.5 * (centers[:-1] + centers[1:])
    pred = np.searchsorted(cuts, areas(test_ds))
    return float(np.mean(pred == test_ds.labels))
