"""Mini-batch training with early stopping, plus reconstruction scoring."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..nn.functional import mse_loss
from ..nn.optim import AdamW, TrainConfig, lr_at_epoch

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def n_epochs(self):
        return len(self.train_loss)

    @property
    def best_val_loss(self):
        return self.val_loss[self.best_epoch] if self.best_epoch >= 0 else math.inf

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for i, row in enumerate(zip(self.train_loss, self.val_loss, self.lr)):
                w.writerow([i, *(repr(float(v)) for v in row)])


class EarlyStopping:
    """Tracks the best (strictly lowest) validation loss.

    ``should_stop`` turns true once ``patience`` epochs have passed without
    improvement.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.wait = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best:
            self.best, self.best_epoch, self.wait = loss, epoch, 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.wait >= self.patience


def stack_features(ids, features) -> torch.Tensor:
    """(N, H, W) float32 tensor from a clip-id -> spectrogram mapping."""
    arrays = []
    for cid in ids:
        v = features[cid]
        arrays.append(np.asarray(getattr(v, "values", v), dtype=np.float32))
    return torch.from_numpy(np.stack(arrays)) if arrays else torch.empty(0)


def _batches(n, batch_size, generator=None):
    order = torch.randperm(n, generator=generator) if generator is not None else torch.arange(n)
    chunks = list(torch.split(order, batch_size))
    # batch norm cannot train on a single example
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        last = chunks.pop()
        chunks[-1] = torch.cat([chunks[-1], last])
    return chunks


@torch.no_grad()
def evaluate_loss(model, data: torch.Tensor, batch_size=32) -> float:
    """Element-mean MSE of eval-mode reconstructions over ``data`` (N, H, W)."""
    model.eval()
    total, count = 0.0, 0
    for idx in _batches(len(data), batch_size):
        x = data[idx].unsqueeze(1)
        total += float(torch.sum((model(x) - x) ** 2))
        count += x.numel()
    return total / count


def train_model(model, train_ids, val_ids, features, cfg: TrainConfig, *, val_loss_fn=None,
                on_epoch_end=None):
    """Train ``model`` in place and return ``(model, history)``.

    Shuffled mini-batches, MSE objective, AdamW with the per-epoch cosine
    schedule; stops after ``cfg.epochs`` or ``cfg.patience`` epochs without
    a strictly lower validation loss, then reloads the best epoch's weights.

    ``val_loss_fn(model, epoch)`` replaces the validation pass when given.
    ``on_epoch_end(epoch, model, history)`` runs after every epoch.
    """
    train_ids, val_ids = list(train_ids), list(val_ids)
    if not train_ids or not val_ids:
        raise TrainingError("training and validation sets must both be non-empty")
    train_x = stack_features(train_ids, features)
    val_x = stack_features(val_ids, features) if val_loss_fn is None else None
    if len(train_x) < 2:
        raise TrainingError("need at least two training examples (batch norm)")

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = AdamW(model.parameters(), lr=cfg.lr_max, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    best_state = None

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg)
        opt.set_lr(lr)
        model.train()
        total, count = 0.0, 0
        for b, idx in enumerate(_batches(len(train_x), cfg.batch_size, gen)):
            x = train_x[idx].unsqueeze(1)
            loss = mse_loss(model(x), x)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, batch {b} (lr={lr:g})")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        val = float(val_loss_fn(model, epoch)) if val_loss_fn is not None else evaluate_loss(model, val_x, cfg.batch_size)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.train_loss.append(total / count)
        history.val_loss.append(val)
        history.lr.append(lr)
        if stopper.update(epoch, val):
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        history.best_epoch = stopper.best_epoch
        log.info("epoch %d train %.5g val %.5g lr %.3g", epoch, history.train_loss[-1], val, lr)
        if on_epoch_end is not None:
            on_epoch_end(epoch, model, history)
        if stopper.should_stop:
            history.stopped_early = True
            break

    model.load_state_dict(best_state)
    model.eval()
    return model, history


@torch.no_grad()
def reconstruct(model, x):
    """Eval-mode reconstruction of one (H, W) spectrogram or an (N, H, W) batch."""
    model.eval()
    values = getattr(x, "values", x)
    t = torch.as_tensor(np.asarray(values, dtype=np.float32))
    single = t.dim() == 2
    if single:
        t = t.unsqueeze(0)
    out = model(t.unsqueeze(1)).squeeze(1)
    return out[0].numpy() if single else out.numpy()


@torch.no_grad()
def anomaly_scores(model, data, batch_size=32) -> np.ndarray:
    """Per-example reconstruction MSE for an (N, H, W) array or tensor."""
    model.eval()
    t = torch.as_tensor(np.asarray(data, dtype=np.float32))
    out = []
    for i in range(0, len(t), batch_size):
        x = t[i:i + batch_size].unsqueeze(1)
        out.append(torch.mean((model(x) - x) ** 2, dim=(1, 2, 3)))
    return torch.cat(out).double().numpy() if out else np.empty(0)


def anomaly_score(model, x) -> float:
    values = np.asarray(getattr(x, "values", x), dtype=np.float32)
    return float(anomaly_scores(model, values[None])[0])
