"""Shared-topology graph convolutional classifier in plain numpy.

Each block applies a spatial graph convolution over joints,

    h = relu(norm((A_base + A_learn)^T-mix of x) @ W)

followed by a temporal convolution along frames (kernel k, stride s), a
second normalisation and ReLU. ``norm`` is a per-channel batch norm with
running statistics for inference. The head averages over (T, V) and
bodies, then applies a linear layer. Gradients are written out by hand; ``gradient_check``
compares them against central differences.
"""
from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import config as kv
from .features import FeatureTensor
from .skeleton_io import read_tensor, write_tensor

log = logging.getLogger(__name__)

# 1-based NTU RGB+D bone list
NTU_EDGES = (
    (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7), (9, 21),
    (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14), (16, 15), (17, 1),
    (18, 17), (19, 18), (20, 19), (22, 23), (23, 8), (24, 25), (25, 12),
)
# FPHA: wrist, five MCPs, then (PIP, DIP, TIP) for thumb, index, middle, ring, pinky
FPHA_EDGES = tuple((0, k) for k in range(1, 6)) + tuple(
    e for f in range(5) for e in ((1 + f, 6 + 3 * f), (6 + 3 * f, 7 + 3 * f), (7 + 3 * f, 8 + 3 * f))
)
# two hands of (wrist, hand, hand tip, thumb), ordered like the NTU hand set
HAND8_EDGES = ((0, 1), (1, 2), (1, 3), (4, 5), (5, 6), (5, 7))


class TrainingError(RuntimeError):
    pass


def skeleton_edges(num_joints: int) -> Tuple[Tuple[int, int], ...]:
    """0-based bone list for the built-in layouts; a chain otherwise."""
    if num_joints == 25:
        return tuple((a - 1, b - 1) for a, b in NTU_EDGES)
    if num_joints == 21:
        return FPHA_EDGES
    if num_joints == 8:
        return HAND8_EDGES
    return tuple((i, i + 1) for i in range(num_joints - 1))


def normalized_adjacency(num_joints: int, edges: Optional[Sequence[Tuple[int, int]]] = None) -> np.ndarray:
    """D^{-1/2} (A + I) D^{-1/2} for an undirected bone graph."""
    A = np.eye(num_joints)
    for a, b in (skeleton_edges(num_joints) if edges is None else edges):
        A[a, b] = A[b, a] = 1.0
    d = 1.0 / np.sqrt(A.sum(axis=1))
    return A * d[:, None] * d[None, :]


@dataclass(frozen=True)
class ArchConfig:
    in_channels: int
    num_classes: int
    num_joints: int
    widths: Tuple[int, ...] = (16, 16, 32, 32)
    strides: Tuple[int, ...] = (1, 1, 2, 2)
    kernel: int = 5

    def __post_init__(self):
        if len(self.widths) != len(self.strides):
            raise ValueError("widths and strides differ in length")
        if min(self.in_channels, self.num_classes, self.num_joints, self.kernel) < 1:
            raise ValueError("architecture sizes must be positive")
        if self.kernel % 2 == 0:
            raise ValueError("temporal kernel must be odd")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if min(self.widths + self.strides, default=1) < 1:
            raise ValueError("widths and strides must be positive")

    def parameter_count(self) -> int:
        """Per block: V*V + C_in*C_out + C_out*C_out*k + 4*C_out (two affine norms); head: C*classes + classes."""
        total, c_in, V, k = 0, self.in_channels, self.num_joints, self.kernel
        for c_out in self.widths:
            total += V * V + c_in * c_out + c_out * c_out * k + 4 * c_out
            c_in = c_out
        return total + c_in * self.num_classes + self.num_classes

    def to_kv(self) -> dict:
        return asdict(self)

    @classmethod
    def from_kv(cls, cfg: dict) -> "ArchConfig":
        return cls(
            in_channels=int(cfg["in_channels"]),
            num_classes=int(cfg["num_classes"]),
            num_joints=int(cfg["num_joints"]),
            widths=kv.int_list(cfg.get("widths", "16,16,32,32")),
            strides=kv.int_list(cfg.get("strides", "1,1,2,2")),
            kernel=int(cfg.get("kernel", 5)),
        )


BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class GcnModel:
    """Parameters, fixed skeleton adjacency, normalisation statistics.

    ``buffers`` holds running means/variances of the batch norms and the
    per-channel ``input_scale``; they are not trained by gradient descent.
    """

    arch: ArchConfig
    params: Dict[str, np.ndarray]
    adjacency: np.ndarray
    buffers: Dict[str, np.ndarray]

    @property
    def num_blocks(self) -> int:
        return len(self.arch.widths)

    @property
    def input_scale(self) -> np.ndarray:
        return self.buffers["input_scale"]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "GcnModel":
        return GcnModel(self.arch, {k: v.copy() for k, v in self.params.items()},
                        self.adjacency.copy(), {k: v.copy() for k, v in self.buffers.items()})


def init_model(arch: ArchConfig, rng: np.random.Generator,
               adjacency: Optional[np.ndarray] = None) -> GcnModel:
    """Uniform fan-in initialisation; the learnable adjacency offsets start at zero."""
    V = arch.num_joints
    if adjacency is None:
        adjacency = normalized_adjacency(V)
    adjacency = np.asarray(adjacency, dtype=np.float64)
    if adjacency.shape != (V, V):
        raise ValueError(f"adjacency shape {adjacency.shape} does not match V={V}")
    params: Dict[str, np.ndarray] = {}
    buffers: Dict[str, np.ndarray] = {"input_scale": np.ones(arch.in_channels)}
    c_in = arch.in_channels
    for i, c_out in enumerate(arch.widths):
        bound = np.sqrt(6.0 / c_in)
        params[f"block{i}.A"] = np.zeros((V, V))
        params[f"block{i}.W"] = rng.uniform(-bound, bound, (c_in, c_out))
        bound = np.sqrt(6.0 / (c_out * arch.kernel))
        params[f"block{i}.K"] = rng.uniform(-bound, bound, (c_out, c_out, arch.kernel))
        for norm in ("gn", "tn"):
            params[f"block{i}.{norm}_gamma"] = np.ones(c_out)
            params[f"block{i}.{norm}_beta"] = np.zeros(c_out)
            buffers[f"block{i}.{norm}_mean"] = np.zeros(c_out)
            buffers[f"block{i}.{norm}_var"] = np.ones(c_out)
        c_in = c_out
    bound = 1.0 / np.sqrt(c_in)
    params["head.W"] = rng.uniform(-bound, bound, (c_in, arch.num_classes))
    params["head.b"] = np.zeros(arch.num_classes)
    return GcnModel(arch, params, adjacency, buffers)


def _check_input(model: GcnModel, x: np.ndarray) -> None:
    if x.ndim != 5:
        raise ValueError(f"expected (N, M, C, T, V) input, got shape {x.shape}")
    _, _, C, T, V = x.shape
    if C != model.arch.in_channels or V != model.arch.num_joints:
        raise ValueError(f"input C={C}, V={V} does not match model "
                         f"C={model.arch.in_channels}, V={model.arch.num_joints}")
    if T < 1:
        raise ValueError("input has no frames")


def _temporal_windows(h: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(B, T, V, C) -> zero-padded windows (B, T', V, C, k)."""
    pad = (k - 1) // 2
    hp = np.pad(h, ((0, 0), (pad, pad), (0, 0), (0, 0)))
    return sliding_window_view(hp, k, axis=1)[:, ::stride]


def _norm_forward(model: GcnModel, name: str, s: np.ndarray, training: bool, stats: Optional[dict]):
    """Per-channel normalisation over (B, T, V); batch statistics when training."""
    gamma, beta = model.params[f"{name}_gamma"], model.params[f"{name}_beta"]
    if training:
        mean = s.mean(axis=(0, 1, 2))
        var = s.var(axis=(0, 1, 2))
        if stats is not None:
            stats[f"{name}_mean"] = mean
            stats[f"{name}_var"] = var * (s.size / s.shape[-1]) / max(s.size / s.shape[-1] - 1, 1)
    else:
        mean, var = model.buffers[f"{name}_mean"], model.buffers[f"{name}_var"]
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (s - mean) * inv_std
    return xhat * gamma + beta, xhat, inv_std


def _norm_backward(dout: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray, gamma: np.ndarray):
    n = dout.size / dout.shape[-1]
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dbeta = dout.sum(axis=(0, 1, 2))
    dxhat = dout * gamma
    ds = inv_std / n * (n * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * (dxhat * xhat).sum(axis=(0, 1, 2)))
    return ds, dgamma, dbeta


def _forward(model: GcnModel, x: np.ndarray, training: bool, keep: bool = False,
             stats: Optional[dict] = None):
    N, M, C, T, V = x.shape
    h = (x / model.input_scale[None, None, :, None, None]).reshape(N * M, C, T, V).transpose(0, 2, 3, 1)
    p, k = model.params, model.arch.kernel
    cache = []
    for i, stride in enumerate(model.arch.strides):
        A = model.adjacency + p[f"block{i}.A"]
        z = np.matmul(A.T, h)  # (B, T, V, C): z[.., v, :] = sum_u A[u, v] h[.., u, :]
        s = z @ p[f"block{i}.W"]
        n1, xhat1, inv1 = _norm_forward(model, f"block{i}.gn", s, training, stats)
        a = np.maximum(n1, 0.0)
        win = _temporal_windows(a, k, stride)
        B, T2, V_, Ci, _ = win.shape
        Kw = p[f"block{i}.K"]
        y = (win.reshape(B * T2 * V_, Ci * k) @ Kw.reshape(Kw.shape[0], -1).T).reshape(B, T2, V_, -1)
        n2, xhat2, inv2 = _norm_forward(model, f"block{i}.tn", y, training, stats)
        out = np.maximum(n2, 0.0)
        if keep:
            cache.append((h, A, z, n1, xhat1, inv1, a, win, n2, xhat2, inv2))
        h = out
    pooled = h.mean(axis=(1, 2)).reshape(N, M, -1).mean(axis=1)
    logits = pooled @ p["head.W"] + p["head.b"]
    return logits, (cache, pooled, h.shape, (N, M, C, T, V))


def forward(model: GcnModel, batch) -> np.ndarray:
    """Inference logits (N, num_classes) for a FeatureTensor or raw (N, M, C, T, V) array.

    Normalisation uses running statistics, so rows do not depend on the
    rest of the batch.
    """
    x = batch.data if isinstance(batch, FeatureTensor) else np.asarray(batch, dtype=np.float64)
    _check_input(model, x)
    return _forward(model, x, training=False)[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def training_loss(model: GcnModel, x: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy with batch statistics (the objective the gradients refer to)."""
    return cross_entropy(_forward(model, x, training=True)[0], np.asarray(labels))


def loss_and_grads(model: GcnModel, x: np.ndarray, labels: np.ndarray, stats: Optional[dict] = None):
    """Training-mode loss and its gradient for every parameter.

    When ``stats`` is a dict it receives the batch means/variances of every
    normalisation layer (for the running averages).
    """
    loss, grads, _ = _loss_grads_logits(model, x, labels, stats)
    return loss, grads


def _loss_grads_logits(model: GcnModel, x: np.ndarray, labels: np.ndarray, stats: Optional[dict] = None):
    _check_input(model, x)
    labels = np.asarray(labels, dtype=np.int64)
    logits, (cache, pooled, last_shape, (N, M, C, T, V)) = _forward(model, x, True, keep=True, stats=stats)
    loss = cross_entropy(logits, labels)
    p = model.params
    grads: Dict[str, np.ndarray] = {}

    dlogits = softmax(logits)
    dlogits[np.arange(N), labels] -= 1.0
    dlogits /= N
    grads["head.W"] = pooled.T @ dlogits
    grads["head.b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ p["head.W"].T  # (N, C_L)
    B, TL, VL, CL = last_shape
    dh = np.broadcast_to((np.repeat(dpooled / M, M, axis=0) / (TL * VL))[:, None, None, :], last_shape)

    k = model.arch.kernel
    pad = (k - 1) // 2
    for i in reversed(range(model.num_blocks)):
        h_in, A, z, n1, xhat1, inv1, a, win, n2, xhat2, inv2 = cache[i]
        stride = model.arch.strides[i]
        Kw = p[f"block{i}.K"]
        Co, Ci, _ = Kw.shape
        dy, grads[f"block{i}.tn_gamma"], grads[f"block{i}.tn_beta"] = _norm_backward(
            dh * (n2 > 0.0), xhat2, inv2, p[f"block{i}.tn_gamma"])
        B_, T2, V_, _ = dy.shape
        dy_flat = dy.reshape(-1, Co)
        grads[f"block{i}.K"] = (dy_flat.T @ win.reshape(-1, Ci * k)).reshape(Co, Ci, k)
        dwin = (dy_flat @ Kw.reshape(Co, -1)).reshape(B_, T2, V_, Ci, k)
        Tin = a.shape[1]
        dap = np.zeros((B_, Tin + 2 * pad, V_, Ci))
        for j in range(k):
            dap[:, j:j + stride * (T2 - 1) + 1:stride] += dwin[..., j]
        da = dap[:, pad:pad + Tin]
        ds, grads[f"block{i}.gn_gamma"], grads[f"block{i}.gn_beta"] = _norm_backward(
            da * (n1 > 0.0), xhat1, inv1, p[f"block{i}.gn_gamma"])
        W = p[f"block{i}.W"]
        grads[f"block{i}.W"] = z.reshape(-1, W.shape[0]).T @ ds.reshape(-1, W.shape[1])
        dz = ds @ W.T
        Vn = A.shape[0]
        grads[f"block{i}.A"] = h_in.transpose(2, 0, 1, 3).reshape(Vn, -1) @ dz.transpose(2, 0, 1, 3).reshape(Vn, -1).T
        dh = np.matmul(A, dz)
    return loss, grads, logits


def _loss_and_pattern(model: GcnModel, x: np.ndarray, labels: np.ndarray):
    logits, (cache, *_rest) = _forward(model, x, training=True, keep=True)
    pattern = np.concatenate([np.packbits(c[3] > 0.0) for c in cache] +
                             [np.packbits(c[8] > 0.0) for c in cache] + [np.zeros(0, np.uint8)])
    return cross_entropy(logits, labels), pattern


def gradient_check(model: GcnModel, x: np.ndarray, labels: np.ndarray, eps: float = 1e-5,
                   n_params: int = 200, rng: Optional[np.random.Generator] = None,
                   names: Optional[Sequence[str]] = None, skip_kinks: bool = True) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks a random subsample of ``n_params`` scalar parameters (all of them
    if fewer exist), restricted to ``names`` when given. Relative error uses
    the denominator max(|a|, |b|, 1e-8).

    With ``skip_kinks``, a coordinate whose +eps and -eps evaluations land
    on different ReLU activation patterns is replaced by another random
    coordinate: the loss is not differentiable across that interval, so the
    finite difference says nothing about the gradient there.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _, grads = loss_and_grads(model, x, labels)
    names = list(model.params) if names is None else list(names)
    sizes = np.array([model.params[n].size for n in names])
    total = int(sizes.sum())
    target = min(total, n_params)
    order = rng.permutation(total)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst, checked, skipped = 0.0, 0, 0
    for flat in order:
        if checked == target:
            break
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, idx = names[which], int(flat - offsets[which])
        param = model.params[name].reshape(-1)
        orig = param[idx]
        param[idx] = orig + eps
        up, pat_up = _loss_and_pattern(model, x, labels)
        param[idx] = orig - eps
        down, pat_down = _loss_and_pattern(model, x, labels)
        param[idx] = orig
        if skip_kinks and not np.array_equal(pat_up, pat_down):
            skipped += 1
            continue
        numeric = (up - down) / (2.0 * eps)
        analytic = grads[name].reshape(-1)[idx]
        worst = max(worst, abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8))
        checked += 1
    if checked < target:
        log.warning("gradient check covered %d of %d requested coordinates", checked, target)
    log.info("gradient check: %d coordinates, %d skipped at ReLU kinks, max rel err %.3g",
             checked, skipped, worst)
    return worst


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0004
    epochs: int = 65
    warmup_epochs: int = 5
    lr_decay_epochs: Tuple[int, ...] = (35, 55)
    lr_decay: float = 0.1
    batch_size: int = 25
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        object.__setattr__(self, "lr_decay_epochs", tuple(int(e) for e in self.lr_decay_epochs))
        if any(e >= self.epochs or e < 0 for e in self.lr_decay_epochs):
            raise ValueError("lr decay epochs must lie in [0, epochs)")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch: linear warmup, then step decay."""
        if epoch < self.warmup_epochs:
            return self.lr * (epoch + 1) / self.warmup_epochs
        return self.lr * self.lr_decay ** sum(epoch >= e for e in self.lr_decay_epochs)

    def to_kv(self) -> dict:
        return asdict(self)

    @classmethod
    def from_kv(cls, cfg: dict) -> "TrainConfig":
        d = cls()
        return cls(
            lr=float(cfg.get("lr", d.lr)),
            momentum=float(cfg.get("momentum", d.momentum)),
            weight_decay=float(cfg.get("weight_decay", d.weight_decay)),
            epochs=int(cfg.get("epochs", d.epochs)),
            warmup_epochs=int(cfg.get("warmup_epochs", d.warmup_epochs)),
            lr_decay_epochs=kv.int_list(cfg["lr_decay_epochs"]) if "lr_decay_epochs" in cfg else d.lr_decay_epochs,
            lr_decay=float(cfg.get("lr_decay", d.lr_decay)),
            batch_size=int(cfg.get("batch_size", d.batch_size)),
            seed=int(cfg.get("seed", d.seed)),
            standardize=kv.get_bool(cfg, "standardize", d.standardize),
        )


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    train_acc: float
    val_acc: Optional[float] = None


def channel_rms(x: np.ndarray) -> np.ndarray:
    """Per-channel RMS of (N, M, C, T, V) data; channels that are all zero get 1."""
    rms = np.sqrt((x ** 2).mean(axis=(0, 1, 3, 4)))
    return np.where(rms > 1e-12, rms, 1.0)


def sgd_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
             velocity: Dict[str, np.ndarray], lr: float, momentum: float, weight_decay: float,
             frozen: Sequence[str] = ()) -> None:
    """In-place SGD with momentum; weight decay is added to the gradient."""
    for name, param in params.items():
        if name in frozen:
            continue
        g = grads[name] + weight_decay * param
        buf = velocity.get(name)
        if buf is None:
            buf = velocity[name] = g.copy()
        else:
            buf *= momentum
            buf += g
        param -= lr * buf


def _update_running_stats(model: GcnModel, stats: dict) -> None:
    for name, value in stats.items():
        buf = model.buffers[name]
        buf *= 1.0 - BN_MOMENTUM
        buf += BN_MOMENTUM * value


def train(model: GcnModel, train_set: FeatureTensor, val_set: Optional[FeatureTensor] = None,
          cfg: TrainConfig = TrainConfig(),
          augment: Optional[Callable[[np.random.Generator], FeatureTensor]] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None,
          frozen: Sequence[str] = ()):
    """Train in place; returns (model, history).

    ``augment`` is called once per epoch with the training rng and must
    return a fresh labelled FeatureTensor (e.g. re-rotated and re-embedded
    sequences); otherwise ``train_set`` is reused. Parameters named in
    ``frozen`` are never updated. Training accuracy is measured on the
    fly with batch statistics.
    """
    if len(train_set) == 0 or train_set.labels.size == 0:
        raise TrainingError("empty or unlabelled training set")
    unknown = set(frozen) - set(model.params)
    if unknown:
        raise ValueError(f"unknown parameters to freeze: {sorted(unknown)}")
    rng = np.random.default_rng(cfg.seed)
    if cfg.standardize:
        model.buffers["input_scale"] = channel_rms(train_set.data)
    velocity: Dict[str, np.ndarray] = {}
    history: List[EpochRecord] = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        data = augment(rng) if augment is not None else train_set
        order = rng.permutation(len(data))
        total_loss, correct = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = data.data[idx], data.labels[idx]
            stats: dict = {}
            loss, grads, logits = _loss_grads_logits(model, x, y, stats)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch starting {start}")
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y).sum())
            sgd_step(model.params, grads, velocity, lr, cfg.momentum, cfg.weight_decay, frozen)
            _update_running_stats(model, stats)
        rec = EpochRecord(epoch, lr, total_loss / len(order), correct / len(order))
        if val_set is not None and len(val_set):
            rec.val_acc = float((predict(model, val_set) == val_set.labels).mean())
        history.append(rec)
        log.debug("epoch %d lr=%.4g loss=%.4f acc=%.3f val=%s", epoch, lr, rec.loss, rec.train_acc, rec.val_acc)
        if on_epoch is not None:
            on_epoch(rec)
    return model, history


def predict_scores(model: GcnModel, data: FeatureTensor, batch_size: int = 128) -> np.ndarray:
    """Softmax class scores (N, classes)."""
    out = [softmax(forward(model, data.data[i:i + batch_size])) for i in range(0, len(data), batch_size)]
    return np.concatenate(out)


def predict(model: GcnModel, data: FeatureTensor) -> np.ndarray:
    return predict_scores(model, data).argmax(axis=1)


def accuracy_report(pred: np.ndarray, labels: np.ndarray,
                    hand_classes: Optional[Sequence[int]] = None) -> dict:
    """Top-1 accuracy overall, per class, and over ``hand_classes`` when given."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty evaluation set")
    report = {
        "accuracy": float((pred == labels).mean()),
        "per_class": {int(c): float((pred[labels == c] == c).mean()) for c in np.unique(labels)},
    }
    if hand_classes is not None:
        mask = np.isin(labels, list(hand_classes))
        report["hand_accuracy"] = float((pred[mask] == labels[mask]).mean()) if mask.any() else float("nan")
    return report


def evaluate(model: GcnModel, test_set: FeatureTensor, hand_classes: Optional[Sequence[int]] = None) -> dict:
    if len(test_set) == 0 or test_set.labels.size == 0:
        raise ValueError("empty or unlabelled evaluation set")
    return accuracy_report(predict(model, test_set), test_set.labels, hand_classes)


def ensemble(scores: Sequence[np.ndarray], labels: np.ndarray,
             weights: Optional[Sequence[float]] = None) -> Tuple[float, np.ndarray]:
    """Fuse per-model softmax scores by weighted sum; returns (accuracy, predictions)."""
    scores = [np.asarray(s, dtype=np.float64) for s in scores]
    if not scores:
        raise ValueError("no score tensors")
    shape = scores[0].shape
    if any(s.shape != shape for s in scores) or len(shape) != 2:
        raise ValueError(f"score tensors must share one N x classes shape, got {[s.shape for s in scores]}")
    weights = [1.0] * len(scores) if weights is None else list(weights)
    if len(weights) != len(scores):
        raise ValueError(f"{len(weights)} weights for {len(scores)} score tensors")
    labels = np.asarray(labels)
    if labels.shape != (shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match N={shape[0]}")
    fused = sum(w * s for w, s in zip(weights, scores))
    pred = fused.argmax(axis=1)
    return float((pred == labels).mean()), pred


def save_checkpoint(model: GcnModel, directory: str, extra: Optional[dict] = None) -> None:
    """One SKTF file per tensor plus ``manifest.txt`` (names, shapes, config echo)."""
    os.makedirs(directory, exist_ok=True)
    tensors = {**model.params, **{f"buffer.{k}": v for k, v in model.buffers.items()},
               "adjacency": model.adjacency}
    arch = {k: ",".join(map(str, v)) if isinstance(v, tuple) else v for k, v in model.arch.to_kv().items()}
    lines = [f"arch.{k} = {v}" for k, v in arch.items()]
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    for name, arr in tensors.items():
        write_tensor(arr, os.path.join(directory, f"{name}.sktf"))
        lines.append(f"tensor.{name} = {'x'.join(str(d) for d in arr.shape)}")
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(directory: str) -> Tuple[GcnModel, dict]:
    """Inverse of ``save_checkpoint``; returns (model, non-tensor manifest entries)."""
    cfg = kv.read_kv(os.path.join(directory, "manifest.txt"))
    arch = ArchConfig.from_kv({k[5:]: v for k, v in cfg.items() if k.startswith("arch.")})
    tensors = {}
    for key, shape in cfg.items():
        if not key.startswith("tensor."):
            continue
        name = key[7:]
        arr = read_tensor(os.path.join(directory, f"{name}.sktf")).astype(np.float64)
        if "x".join(str(d) for d in arr.shape) != shape:
            raise ValueError(f"checkpoint tensor {name} has shape {arr.shape}, manifest says {shape}")
        tensors[name] = arr
    template = init_model(arch, np.random.default_rng(0))
    adjacency = tensors.pop("adjacency")
    buffers = {k[7:]: tensors.pop(k) for k in list(tensors) if k.startswith("buffer.")}
    if set(tensors) != set(template.params) or set(buffers) != set(template.buffers):
        raise ValueError("checkpoint tensors do not match the architecture")
    for name, arr in {**tensors, **buffers}.items():
        ref = template.params.get(name, template.buffers.get(name))
        if arr.shape != ref.shape:
            raise ValueError(f"checkpoint tensor {name} has shape {arr.shape}, expected {ref.shape}")
    extra = {k: v for k, v in cfg.items() if not k.startswith(("arch.", "tensor."))}
    return GcnModel(arch, tensors, adjacency, buffers), extra
