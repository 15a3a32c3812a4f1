"""Mini-batch training with SGD-Nesterov or Adam on the MSE loss."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .convnet import Network, mse_loss

OPTIMIZERS = ("sgd-nesterov", "adam")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")

    def to_dict(self):
        return asdict(self)


class Optimizer:
    def __init__(self, net: Network, cfg: TrainConfig):
        self.net, self.cfg, self.t = net, cfg, 0
        self.m = [np.zeros_like(p) for _, _, p in net.parameters()]
        self.v = [np.zeros_like(p) for _, _, p in net.parameters()]

    def step(self):
        c = self.cfg
        self.t += 1
        for j, ((i, k, p), (_, _, g)) in enumerate(zip(self.net.parameters(), self.net.gradients())):
            if c.optimizer == "sgd-nesterov":
                v_prev = self.m[j].copy()
                self.m[j] = c.momentum * self.m[j] - c.lr * g
                p += -c.momentum * v_prev + (1 + c.momentum) * self.m[j]
            else:
                self.m[j] = c.beta1 * self.m[j] + (1 - c.beta1) * g
                self.v[j] = c.beta2 * self.v[j] + (1 - c.beta2) * g * g
                mh = self.m[j] / (1 - c.beta1 ** self.t)
                vh = self.v[j] / (1 - c.beta2 ** self.t)
                p -= (c.lr * mh / (np.sqrt(vh) + c.eps)).astype(p.dtype)


def dataset_loss(net: Network, x, y, batch_size=256) -> float:
    return mse_loss(net.predict(x, batch_size), y)[0]


def train(net: Network, x, y, cfg: TrainConfig, log=None) -> list[dict]:
    """Train in place; returns one row per epoch (epoch 0 is the initial loss).

    Batches are drawn from a generator seeded by ``cfg.seed``, so a run is
    reproducible given the initial weights.
    """
    x = np.asarray(x, dtype=net.dtype)
    if x.ndim == 3:
        x = x[:, None]
    y = np.asarray(y, dtype=net.dtype)
    if len(x) == 0 or len(x) != len(y):
        raise ValueError("need a non-empty dataset with one target row per sample")
    rng = np.random.default_rng([cfg.seed, 17])
    opt = Optimizer(net, cfg)
    curve = [{"epoch": 0, "train_loss": dataset_loss(net, x, y), "batch_loss": float("nan")}]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            net.zero_grad()
            loss, grad = mse_loss(net.forward(x[idx], train=True), y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size} "
                                       f"(lr={cfg.lr}, optimizer={cfg.optimizer}, last epoch loss "
                                       f"{curve[-1]['train_loss']})")
            net.backward(grad)
            opt.step()
            total += loss * len(idx)
        row = {"epoch": epoch, "train_loss": dataset_loss(net, x, y), "batch_loss": total / len(x)}
        curve.append(row)
        if log:
            log(row)
    return curve
