"""Seeded mini-batch training with Adam or SGD, early stopping, and NaN guard."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .network import Network


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    optimizer: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    patience: int | None = None  # stop after this many epochs without val improvement
    keep_best: bool = True       # restore the best-validation parameters at the end

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


class Optimizer:
    def __init__(self, net: Network, cfg: TrainConfig):
        self.cfg = cfg
        self.net = net
        self.t = 0
        self.m = {name: np.zeros_like(t.values) for name, t in net.params()}
        self.v = {name: np.zeros_like(t.values) for name, t in net.params()}

    def step(self):
        cfg = self.cfg
        if cfg.optimizer == "sgd":
            for name, p in self.net.params():
                p.values -= cfg.lr * p.grad
            return
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for name, p in self.net.params():
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * p.grad
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * p.grad * p.grad
            p.values -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)

    def state_blobs(self) -> dict[str, np.ndarray]:
        blobs = {}
        for name in self.m:
            blobs[f"opt.m.{name}"] = self.m[name]
            blobs[f"opt.v.{name}"] = self.v[name]
        return blobs

    def load_state_blobs(self, blobs: dict[str, np.ndarray], t: int):
        self.t = t
        for name in self.m:
            self.m[name][...] = blobs[f"opt.m.{name}"]
            self.v[name][...] = blobs[f"opt.v.{name}"]


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-label binary cross-entropy on raw logits (numerically stable)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"shape mismatch: logits {z.shape} vs targets {y.shape}")
    loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    grad = (sigmoid(z) - y) / z.size
    return loss, grad


def batch_forward(net: Network, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    outs = [net.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(outs, axis=0)


def classify(net: Network, images: np.ndarray, threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Per-label sigmoid scores and the detected set (score strictly above threshold).

    `images` is (side, side), (1, side, side) or a batch (B, 1, side, side).
    """
    x = np.asarray(images)
    single = x.ndim < 4
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[None]
    scores = sigmoid(batch_forward(net, x))
    detected = scores > threshold
    if single:
        return detected[0], scores[0]
    return detected, scores


def exact_match(pred_bits: np.ndarray, true_bits: np.ndarray) -> float:
    """Fraction of samples whose predicted label set equals the true set exactly."""
    pred = np.asarray(pred_bits, dtype=bool)
    true = np.asarray(true_bits, dtype=bool)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {true.shape}")
    return float(np.mean(np.all(pred == true, axis=1)))


def train(
    net: Network,
    train_x: np.ndarray,
    train_y: np.ndarray,
    loss_fn,
    cfg: TrainConfig,
    val_x: np.ndarray | None = None,
    val_y: np.ndarray | None = None,
    val_metric=None,
    log=None,
) -> tuple[list[dict], "Optimizer"]:
    """Mini-batch training loop.

    loss_fn(pred, target) -> (scalar, grad).  If `val_metric` is given it is
    called as val_metric(net, val_x, val_y) -> float (higher is better) and
    drives early stopping / best-checkpoint selection; otherwise validation
    loss (lower is better) does.  Returns (per-epoch history, optimizer).
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x1234]))
    opt = Optimizer(net, cfg)
    history: list[dict] = []
    has_val = val_x is not None and len(val_x) > 0
    best_score = -np.inf
    best_params = None
    best_epoch = -1
    n = len(train_x)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            net.zero_grads()
            pred = net.forward(train_x[idx], train=True)
            value, grad = loss_fn(pred, train_y[idx])
            if not np.isfinite(value):
                raise TrainingDivergedError(f"loss became {value} at epoch {epoch}")
            net.backward(grad)
            opt.step()
            losses.append(value)
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if has_val:
            val_pred = batch_forward(net, val_x)
            entry["val_loss"] = float(loss_fn(val_pred, val_y)[0])
            if val_metric is not None:
                entry["val_metric"] = float(val_metric(net, val_x, val_y))
            score = entry.get("val_metric", -entry["val_loss"])
            if score > best_score:
                best_score = score
                best_epoch = epoch
                if cfg.keep_best:
                    best_params = net.get_param_arrays()
            if cfg.patience is not None and epoch - best_epoch >= cfg.patience:
                history.append(entry)
                if log:
                    log(entry)
                break
        history.append(entry)
        if log:
            log(entry)
        if has_val and val_metric is not None and entry.get("val_metric") == 1.0:
            break  # nothing left to improve
    if cfg.keep_best and best_params is not None:
        net.set_param_arrays(best_params)
    return history, opt
