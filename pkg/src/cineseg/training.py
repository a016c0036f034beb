"""Losses, optimizers and the train / evaluate loops."""

import csv
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .augmentation import augment_batch
from .errors import ConfigError, ContractError, DivergenceError, ShapeError
from .images import MaskImage, as_image, as_mask
from .metrics import evaluate
from .network import Network
from .normalization import clamp_gate
from .seeding import mix_seed
from .tensor import (
    Tape,
    Tensor,
    backward,
    bce_with_logits,
    mean_all,
    mul,
    no_grad,
    sigmoid,
    sum_axes,
)

OPTIMIZERS = ("adam", "sgd_momentum")
LOSSES = ("soft_dice", "bce", "dice_plus_bce")


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    loss: str = "soft_dice"
    seed: int = 0
    threshold: float = 0.5
    momentum: float = 0.9
    max_steps: int = 0  # 0 means no cap beyond epochs

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("must be >= 0", field="epochs")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", field="batch_size")
        if not self.learning_rate > 0:
            raise ConfigError("must be > 0", field="learning_rate")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"must be one of {OPTIMIZERS}", field="optimizer")
        if self.loss not in LOSSES:
            raise ConfigError(f"must be one of {LOSSES}", field="loss")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("must lie in (0, 1)", field="threshold")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("must lie in [0, 1)", field="momentum")
        if self.max_steps < 0:
            raise ConfigError("must be >= 0", field="max_steps")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_dice: float
    seconds: float


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    @property
    def losses(self):
        return [e.loss for e in self.epochs]

    @property
    def val_dice(self):
        return [e.val_dice for e in self.epochs]

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["epoch", "loss", "val_dice", "seconds"])
            for e in self.epochs:
                wr.writerow([e.epoch, repr(e.loss), repr(e.val_dice), f"{e.seconds:.3f}"])


# -- losses --------------------------------------------------------------------


def _target(truth, shape):
    if isinstance(truth, Tensor):
        t = truth.data
    elif isinstance(truth, (list, tuple)):
        t = np.stack([as_mask(m).pixels for m in truth])[:, None].astype(np.float64)
    else:
        t = np.asarray(truth, dtype=np.float64)
    if t.shape != shape:
        raise ShapeError(f"truth shape {t.shape} does not match logits {shape}")
    return t


def soft_dice_loss(logits, truth, smooth=1.0):
    """Batch mean of 1 - (2 sum(p t) + s) / (sum(p) + sum(t) + s), p = sigmoid(logits)."""
    t = _target(truth, logits.shape)
    p = sigmoid(logits)
    axes = (1, 2, 3)
    inter = sum_axes(mul(p, t), axes)
    denom = sum_axes(p, axes) + (t.sum(axis=axes, keepdims=True) + smooth)
    score = (mul(inter, 2.0) + smooth) / denom
    return 1.0 - mean_all(score)


def bce_loss(logits, truth):
    return mean_all(bce_with_logits(logits, _target(truth, logits.shape)))


def compute_loss(name, logits, truth):
    if name == "soft_dice":
        return soft_dice_loss(logits, truth)
    if name == "bce":
        return bce_loss(logits, truth)
    if name == "dice_plus_bce":
        return soft_dice_loss(logits, truth) + bce_loss(logits, truth)
    raise ConfigError(f"unknown loss {name!r}", field="loss")


# -- optimizers ----------------------------------------------------------------


def _grads_of(params, grads):
    out = []
    for p, g in zip(params, grads):
        g = np.zeros(p.shape) if g is None else np.asarray(g)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.name} {p.shape}")
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient for parameter {p.name or '<unnamed>'}")
        out.append(g)
    return out


def sgd_step(params, grads, lr, momentum, state):
    """Heavy-ball SGD: v <- momentum v + g; p <- p - lr v."""
    grads = _grads_of(params, grads)
    vel = state.setdefault("velocity", [np.zeros(p.shape) for p in params])
    for p, g, v in zip(params, grads, vel):
        v *= momentum
        v += g
        p.data = p.data - lr * v


def adam_step(params, grads, lr, state, beta1=0.9, beta2=0.999, eps=1e-8):
    grads = _grads_of(params, grads)
    m = state.setdefault("m", [np.zeros(p.shape) for p in params])
    v = state.setdefault("v", [np.zeros(p.shape) for p in params])
    state["t"] = t = state.get("t", 0) + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, mi, vi in zip(params, grads, m, v):
        mi *= beta1
        mi += (1.0 - beta1) * g
        vi *= beta2
        vi += (1.0 - beta2) * g * g
        p.data = p.data - lr * (mi / c1) / (np.sqrt(vi / c2) + eps)


class Optimizer:
    """Applies one update to ``params`` and re-clamps batch-instance gates."""

    def __init__(self, params, kind="adam", lr=1e-3, momentum=0.9, gates=()):
        if kind not in OPTIMIZERS:
            raise ConfigError(f"must be one of {OPTIMIZERS}", field="optimizer")
        self.params = list(params)
        self.kind = kind
        self.lr = lr
        self.momentum = momentum
        self.gates = list(gates)
        self.state = {}

    def step(self):
        grads = [p.grad for p in self.params]
        if self.kind == "adam":
            adam_step(self.params, grads, self.lr, self.state)
        else:
            sgd_step(self.params, grads, self.lr, self.momentum, self.state)
        for g in self.gates:
            clamp_gate(g)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# -- loops ---------------------------------------------------------------------


def stack_pairs(pairs):
    x = np.stack([as_image(im).pixels for im, _ in pairs])[:, None]
    y = np.stack([as_mask(m).pixels for _, m in pairs])[:, None].astype(np.float64)
    return x, y


def _crop_to(arr, h, w):
    top = (arr.shape[-2] - h) // 2
    left = (arr.shape[-1] - w) // 2
    return arr[..., top:top + h, left:left + w]


def _snapshot(net):
    return ([p.data.copy() for p in net.parameters()],
            [getattr(o, a).copy() for _, o, a in net.named_buffers()])


def _restore(net, snap):
    for p, d in zip(net.parameters(), snap[0]):
        p.data = d.copy()
    for (_, o, a), d in zip(net.named_buffers(), snap[1]):
        setattr(o, a, d.copy())


def train(net, train_data, config, val_data=None, policy=None, progress=None):
    """Fit ``net`` on (image, mask) pairs; returns the network and its TrainLog.

    Data order, augmentation and drop-connect masks all derive from
    ``config.seed``. With a policy, the training set is expanded once by
    :func:`augment_batch` before the first epoch.
    """
    config.validate()
    if not train_data:
        raise ContractError("training split is empty")
    log = TrainLog()
    if config.epochs == 0:
        return net, log
    if policy is not None and policy.multiplicity > 1:
        train_data = augment_batch(train_data, policy, mix_seed(config.seed, 0xA06))
    x, y = stack_pairs(train_data)
    oh, ow = net.output_shape(x.shape[2], x.shape[3])
    y = _crop_to(y, oh, ow)
    opt = Optimizer(net.parameters(), config.optimizer, config.learning_rate, config.momentum, net.gates())
    order_rng = np.random.default_rng(mix_seed(config.seed, 1))
    good = _snapshot(net)
    step = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        perm = order_rng.permutation(len(x))
        losses = []
        for s in range(0, len(x), config.batch_size):
            idx = perm[s:s + config.batch_size]
            with Tape():
                logits = net.forward(x[idx], "train", rng_seed=mix_seed(config.seed, 2, step))
                loss = compute_loss(config.loss, logits, y[idx])
                value = float(loss.data.reshape(-1)[0])
                if not math.isfinite(value):
                    _restore(net, good)
                    raise DivergenceError(f"loss became {value} at epoch {epoch} step {step}", net=net, log=log)
                backward(loss)
            try:
                opt.step()
            except DivergenceError as exc:
                _restore(net, good)
                raise DivergenceError(str(exc), net=net, log=log) from exc
            opt.zero_grad()
            losses.append(value)
            step += 1
            if config.max_steps and step >= config.max_steps:
                break
        val = float("nan")
        if val_data:
            val = evaluate_model(net, val_data, config.threshold, warn=False).dice_mean
        log.epochs.append(EpochRecord(epoch, float(np.mean(losses)), val, time.perf_counter() - t0))
        good = _snapshot(net)
        if progress is not None:
            progress(log.epochs[-1])
        if config.max_steps and step >= config.max_steps:
            break
    return net, log


def predict_logits(net, images, batch_size=16):
    if isinstance(net, Network):
        return net.predict_logits(images, batch_size)
    return np.asarray(net(images), dtype=np.float64)


def predict_masks(net, images, threshold=0.5, batch_size=16):
    """Sigmoid + threshold, one MaskImage per input image."""
    logits = predict_logits(net, images, batch_size)
    prob = 1.0 / (1.0 + np.exp(-np.clip(logits, -500, 500)))
    return [MaskImage((p[0] > threshold).astype(np.uint8)) for p in prob]


def evaluate_model(net, samples, threshold=0.5, batch_size=16, warn=True):
    """Eval-mode report over (image, mask) pairs.

    ``net`` may be a Network or any callable mapping an (n, 1, h, w) array
    to logits of the network's output size.
    """
    if not samples:
        raise ContractError("evaluation split is empty")
    x, y = stack_pairs(samples)
    preds = predict_masks(net, x, threshold, batch_size)
    oh, ow = preds[0].shape
    truths = [MaskImage(m[0].astype(np.uint8)) for m in _crop_to(y, oh, ow)]
    spacing = as_image(samples[0][0]).spacing_mm
    if warn:
        return evaluate(preds, truths, spacing)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return evaluate(preds, truths, spacing)
