"""AdamW with decoupled weight decay and a cosine schedule with warm restarts."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 32
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    restarts: int = 5
    patience: int = 30
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if not self.lr_min < self.lr_max:
            raise ValueError("lr_min must be below lr_max")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.epochs < 1 or self.batch_size < 1 or self.restarts < 1:
            raise ValueError("epochs, batch_size and restarts must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Cosine annealing from lr_max to lr_min, restarted every epochs / restarts epochs."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    period = cfg.epochs / cfg.restarts
    phase = math.fmod(epoch, period) / period
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * phase)) / 2.0


@torch.no_grad()
def adamw_step(params, grads, state, t, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
    """One in-place AdamW update on lists of tensors.

    ``state`` is a list of ``(exp_avg, exp_avg_sq)`` pairs, one per
    parameter, updated in place. Decay is applied to the parameter before
    and independently of the adaptive step.
    """
    if t < 1:
        raise ValueError("step counter t starts at 1")
    b1, b2 = betas
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, (m, v) in zip(params, grads, state):
        if g is None:
            continue
        if weight_decay:
            p.mul_(1.0 - lr * weight_decay)
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        denom = (v / bc2).sqrt_().add_(eps)
        p.addcdiv_(m, denom, value=-lr / bc1)


class AdamW(torch.optim.Optimizer):
    """``torch.optim`` front-end for :func:`adamw_step`."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        super().__init__(params, dict(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay))

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            params, grads, moments = [], [], []
            for p in group["params"]:
                if p.grad is None:
                    continue
                st = self.state[p]
                if not st:
                    st["step"] = 0
                    st["exp_avg"] = torch.zeros_like(p)
                    st["exp_avg_sq"] = torch.zeros_like(p)
                st["step"] += 1
                params.append(p)
                grads.append(p.grad)
                moments.append((st["exp_avg"], st["exp_avg_sq"]))
            if not params:
                continue
            # all parameters of a group advance together
            t = self.state[params[0]]["step"]
            adamw_step(params, grads, moments, t, group["lr"], group["betas"], group["eps"],
                       group["weight_decay"])
        return loss

    def set_lr(self, lr):
        for group in self.param_groups:
            group["lr"] = lr
