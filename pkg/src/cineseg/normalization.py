"""Batch, layer, instance and batch-instance normalization.

All four share the same per-channel affine (gamma, beta) and differ only in
the axes their statistics are taken over:

    batch     per channel, over (n, h, w)
    layer     per sample,  over (c, h, w)
    instance  per (n, c),  over (h, w)

Batch-instance normalization blends the batch- and instance-standardized
activations with a learnable per-channel gate rho in [0, 1] before the affine.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateStatisticsError, ShapeError
from .tensor import Tensor, add, mul, reshape, standardize, sub

BATCH_AXES = (0, 2, 3)
LAYER_AXES = (1, 2, 3)
INSTANCE_AXES = (2, 3)

MODES = ("train", "eval")


@dataclass
class NormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5

    def __post_init__(self):
        if self.eps <= 0:
            raise ContractError("epsilon must be positive")
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ShapeError(f"gamma {self.gamma.shape} and beta {self.beta.shape} must be equal-length vectors")

    @classmethod
    def unit(cls, channels, eps=1e-5):
        return cls(Tensor(np.ones(channels), requires_grad=True, name="gamma"),
                   Tensor(np.zeros(channels), requires_grad=True, name="beta"), eps)

    @property
    def channels(self):
        return self.gamma.shape[0]


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, channels, momentum=0.1):
        if not 0.0 < momentum < 1.0:
            raise ContractError(f"momentum must lie in (0, 1), got {momentum}")
        return cls(np.zeros(channels), np.ones(channels), momentum)

    def update(self, batch_mean, batch_var):
        m = self.momentum
        self.mean = (1.0 - m) * self.mean + m * batch_mean
        self.var = (1.0 - m) * self.var + m * batch_var


@dataclass
class BINGate:
    rho: Tensor

    @classmethod
    def fresh(cls, channels, init=0.5):
        return cls(Tensor(np.full(channels, float(init)), requires_grad=True, name="rho"))


def _check(x, params, op):
    if x.ndim != 4:
        raise ShapeError(f"{op} expects (n, c, h, w), got {x.shape}")
    if x.shape[1] != params.channels:
        raise ShapeError(f"{op}: input has {x.shape[1]} channels, params have {params.channels}")


def _per_channel(v):
    if isinstance(v, np.ndarray):
        return v.reshape(1, -1, 1, 1)
    return reshape(v, (1, -1, 1, 1))


def _affine(xhat, params):
    return add(mul(xhat, _per_channel(params.gamma)), _per_channel(params.beta))


def _check_mode(mode):
    if mode not in MODES:
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")


def _batch_standardize(x, params, stats, mode):
    _check_mode(mode)
    n, c, h, w = x.shape
    if mode == "train":
        if n * h * w < 2:
            raise DegenerateStatisticsError(f"batch statistics need n*h*w >= 2, got {n * h * w}")
        xhat, mu, var = standardize(x, BATCH_AXES, params.eps)
        stats.update(mu.reshape(-1), var.reshape(-1))
        return xhat
    inv = 1.0 / np.sqrt(stats.var + params.eps)
    return mul(sub(x, Tensor(_per_channel(stats.mean))), Tensor(_per_channel(inv)))


def _instance_standardize(x, params):
    h, w = x.shape[2:]
    if h * w < 2:
        raise DegenerateStatisticsError(f"instance statistics need h*w >= 2, got {h * w}")
    return standardize(x, INSTANCE_AXES, params.eps)[0]


def batch_norm(x, params, stats, mode="train"):
    _check(x, params, "batch_norm")
    return _affine(_batch_standardize(x, params, stats, mode), params)


def layer_norm(x, params):
    _check(x, params, "layer_norm")
    c, h, w = x.shape[1:]
    if c * h * w < 2:
        raise DegenerateStatisticsError(f"layer statistics need c*h*w >= 2, got {c * h * w}")
    return _affine(standardize(x, LAYER_AXES, params.eps)[0], params)


def instance_norm(x, params):
    _check(x, params, "instance_norm")
    return _affine(_instance_standardize(x, params), params)


def batch_instance_norm(x, params, stats, gate, mode="train"):
    _check(x, params, "batch_instance_norm")
    if gate.rho.shape != (params.channels,):
        raise ShapeError(f"rho must have shape ({params.channels},), got {gate.rho.shape}")
    xi = _instance_standardize(x, params)
    xb = _batch_standardize(x, params, stats, mode)
    rho = _per_channel(gate.rho)
    mixed = add(mul(rho, xb), mul(sub(1.0, rho), xi))
    return _affine(mixed, params)


def clamp_gate(gate):
    """Project every rho element into [0, 1] in place."""
    np.clip(gate.rho.data, 0.0, 1.0, out=gate.rho.data)
    return gate


class _Norm:
    kind = None

    def __init__(self, channels, eps=1e-5):
        self.params = NormParams.unit(channels, eps)

    def parameters(self):
        return [self.params.gamma, self.params.beta]

    def buffers(self):
        return []

    def gates(self):
        return []


class BatchNorm2d(_Norm):
    kind = "batch"

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__(channels, eps)
        self.stats = RunningStats.fresh(channels, momentum)

    def __call__(self, x, mode):
        return batch_norm(x, self.params, self.stats, mode)

    def buffers(self):
        return [("running_mean", self.stats, "mean"), ("running_var", self.stats, "var")]


class LayerNorm2d(_Norm):
    kind = "layer"

    def __call__(self, x, mode):
        return layer_norm(x, self.params)


class InstanceNorm2d(_Norm):
    kind = "instance"

    def __call__(self, x, mode):
        return instance_norm(x, self.params)


class BatchInstanceNorm2d(BatchNorm2d):
    kind = "batch_instance"

    def __init__(self, channels, eps=1e-5, momentum=0.1, rho_init=0.5):
        super().__init__(channels, eps, momentum)
        self.gate = BINGate.fresh(channels, rho_init)

    def __call__(self, x, mode):
        return batch_instance_norm(x, self.params, self.stats, self.gate, mode)

    def parameters(self):
        return [self.params.gamma, self.params.beta, self.gate.rho]

    def gates(self):
        return [self.gate]


NORM_LAYERS = {
    "batch": BatchNorm2d,
    "layer": LayerNorm2d,
    "instance": InstanceNorm2d,
    "batch_instance": BatchInstanceNorm2d,
}
