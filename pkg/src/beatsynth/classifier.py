"""Small 1-D convolutional beat classifier used by the authenticity harness."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class ClassifierConfig:
    widths: tuple[int, ...] = (8, 16, 16)
    kernel: int = 5
    epochs: int = 8
    batch_size: int = 32
    lr: float = 2e-3


class BeatClassifier(ad.Module):
    """(conv -> ReLU -> max-pool 2) per width, then a dense logit head."""

    def __init__(self, length: int, cfg: ClassifierConfig, rng: np.random.Generator):
        super().__init__()
        if length % 2 ** len(cfg.widths):
            raise ValueError(f"beat length {length} must be divisible by {2 ** len(cfg.widths)}")
        self.convs = []
        c_in = 1
        for i, w in enumerate(cfg.widths):
            conv = ad.Conv1d(c_in, w, cfg.kernel, rng, padding=cfg.kernel // 2)
            setattr(self, f"conv{i}", conv)
            self.convs.append(conv)
            c_in = w
        self.head = ad.Dense(c_in * (length // 2 ** len(cfg.widths)), 1, rng)

    def forward(self, x) -> ad.Tensor:
        x = ad.as_tensor(x)
        h = x.reshape(x.shape[0], 1, x.shape[-1])
        for conv in self.convs:
            h = ad.max_pool1d(ad.relu(conv(h)), 2)
        return self.head(h.reshape(h.shape[0], -1)).reshape(-1)


def bce_with_logits(logits: ad.Tensor, labels: np.ndarray) -> ad.Tensor:
    """Mean binary cross-entropy, written as softplus(z) - y z for stability."""
    return (ad.softplus(logits) - logits * labels).mean()


def train_classifier(x: np.ndarray, y: np.ndarray, cfg: ClassifierConfig, seed: int) -> BeatClassifier:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = np.random.default_rng(seed)
    model = BeatClassifier(x.shape[1], cfg, rng)
    opt = ad.Adam(model.parameters(), lr=cfg.lr)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        for lo in range(0, len(x), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            loss = bce_with_logits(model(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return model


def predict_proba(model: BeatClassifier, x: np.ndarray, batch: int = 256) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = []
    with ad.no_grad():
        for lo in range(0, len(x), batch):
            out.append(model(x[lo:lo + batch]).data)
    z = np.concatenate(out) if out else np.zeros(0)
    return 1.0 / (1.0 + np.exp(-z))
