"""U-shaped segmentation networks.

One :class:`NetworkConfig` knob, ``norm_scheme``, selects the variant:

    none                   plain U-Net
    batch                  BNU-Net, batch norm after every conv
    layer                  LNU-Net, layer norm after every conv
    instance_batch_first   IBU-Net, batch-instance norm in the first encoder
                           block and batch norm after every other conv

Every conv (except the final 1x1 projection) is followed by its norm layer
and then the activation. The decoder up-step is nearest upsampling followed
by a k x k conv that halves the channel count; encoder features are centre
cropped to the decoder size before concatenation.
"""

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .normalization import NORM_LAYERS
from .tensor import (
    Tensor,
    concat_channels,
    conv2d,
    crop_center,
    elu,
    maxpool2,
    mul,
    no_grad,
    relu,
    upsample2,
)

NORM_SCHEMES = ("none", "batch", "layer", "instance_batch_first")
ACTIVATIONS = ("elu", "relu")
PADDINGS = ("same", "valid")

VARIANTS = {
    "unet": "none",
    "bnu": "batch",
    "lnu": "layer",
    "ibu": "instance_batch_first",
}


@dataclass
class NetworkConfig:
    """Architecture description. Defaults are the desk-scale profile."""

    depth: int = 2
    base_channels: int = 8
    kernel_size: int = 3
    padding: str = "same"
    norm_scheme: str = "none"
    activation: str = "elu"
    dropconnect_rate: float = 0.0
    in_channels: int = 1
    out_channels: int = 1
    # IBU-Net only: how many convs of the first encoder block use batch-instance norm
    bin_convs: int = 2

    @classmethod
    def full_scale(cls, **overrides):
        return cls(**{"depth": 4, "base_channels": 64, **overrides})

    @classmethod
    def for_variant(cls, variant, **overrides):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}", field="variant")
        return cls(**{**overrides, "norm_scheme": VARIANTS[variant]})

    def validate(self):
        if self.depth < 1:
            raise ConfigError("must be >= 1", field="depth")
        if self.base_channels < 1:
            raise ConfigError("must be >= 1", field="base_channels")
        if self.kernel_size not in (2, 3):
            raise ConfigError("must be 2 or 3", field="kernel_size")
        if self.padding not in PADDINGS:
            raise ConfigError(f"must be one of {PADDINGS}", field="padding")
        if self.norm_scheme not in NORM_SCHEMES:
            raise ConfigError(f"must be one of {NORM_SCHEMES}", field="norm_scheme")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"must be one of {ACTIVATIONS}", field="activation")
        if not 0.0 <= self.dropconnect_rate < 1.0:
            raise ConfigError("must lie in [0, 1)", field="dropconnect_rate")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be >= 1", field="in_channels")
        if self.bin_convs not in (1, 2):
            raise ConfigError("must be 1 or 2", field="bin_convs")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown network fields {sorted(unknown)}")
        return cls(**d)


def trace_shape(config, h, w):
    """Spatial size of the logits for an ``h`` x ``w`` input.

    Raises ConfigError when the input cannot pass through the architecture.
    """
    config.validate()
    return _trace(config, h, "height"), _trace(config, w, "width")


def _trace(cfg, s, axis):
    k = cfg.kernel_size
    shrink = 0 if cfg.padding == "same" else k - 1
    if cfg.padding == "same" and s % (2 ** cfg.depth):
        raise ConfigError(f"input {axis} {s} is not divisible by 2**depth = {2 ** cfg.depth}", field="depth")

    def conv(size):
        if size < k or size - shrink < 1:
            raise ConfigError(f"input {axis} too small for valid convolutions at this depth", field="depth")
        return size - shrink

    skips = []
    for _ in range(cfg.depth):
        s = conv(conv(s))
        if s % 2:
            raise ConfigError(f"odd {axis} {s} before pooling; pick a different input size", field="depth")
        skips.append(s)
        s //= 2
    s = conv(conv(s))
    for skip in reversed(skips):
        s = conv(2 * s)
        if s > skip:
            raise ConfigError(f"decoder {axis} {s} exceeds encoder skip {skip}", field="padding")
        s = conv(conv(s))
    return s


class Conv:
    def __init__(self, ci, co, k, padding, rng, name):
        bound = np.sqrt(6.0 / (ci * k * k))
        self.weight = Tensor(rng.uniform(-bound, bound, size=(co, ci, k, k)), requires_grad=True, name=name + ".weight")
        self.bias = Tensor(np.zeros(co), requires_grad=True, name=name + ".bias")
        self.padding = padding

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, self.padding)

    def named_parameters(self):
        return [(self.weight.name, self.weight), (self.bias.name, self.bias)]


class Stage:
    """A run of conv -> norm -> activation units."""

    def __init__(self, channels, cfg, norm_kinds, rng, name):
        self.units = []
        for j, ((ci, co), kind) in enumerate(zip(channels, norm_kinds)):
            uname = f"{name}.conv{j}"
            conv = Conv(ci, co, cfg.kernel_size, cfg.padding, rng, uname)
            norm = NORM_LAYERS[kind](co) if kind else None
            if norm is not None:
                for p in norm.parameters():
                    p.name = f"{uname}.norm.{p.name}"
            self.units.append((conv, norm))
        self.activation = cfg.activation

    def __call__(self, x, mode):
        for conv, norm in self.units:
            x = conv(x)
            if norm is not None:
                x = norm(x, mode)
            x = elu(x) if self.activation == "elu" else relu(x)
        return x

    def named_parameters(self):
        out = []
        for conv, norm in self.units:
            out += conv.named_parameters()
            if norm is not None:
                out += [(p.name, p) for p in norm.parameters()]
        return out

    def norms(self):
        return [(conv.weight.name[:-len(".weight")] + ".norm", norm) for conv, norm in self.units if norm is not None]


def drop_connect(skip, rate, mode, rng):
    """Zero each element with probability ``rate`` in train mode, rescaling survivors."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"drop-connect rate must lie in [0, 1), got {rate}")
    if mode != "train" or rate == 0.0:
        return skip
    keep = rng.random(skip.shape) >= rate
    return mul(skip, Tensor(keep / (1.0 - rate)))


class Network:
    def __init__(self, config, seed=0):
        cfg = config.validate()
        self.config = cfg
        rng = np.random.default_rng(seed)
        b = cfg.base_channels
        scheme = cfg.norm_scheme
        other = {"none": None, "batch": "batch", "layer": "layer", "instance_batch_first": "batch"}[scheme]

        self.encoders = []
        ci = cfg.in_channels
        for i in range(cfg.depth):
            co = b * 2 ** i
            kinds = [other, other]
            if scheme == "instance_batch_first" and i == 0:
                kinds = ["batch_instance"] * cfg.bin_convs + ["batch"] * (2 - cfg.bin_convs)
            self.encoders.append(Stage([(ci, co), (co, co)], cfg, kinds, rng, f"enc{i}"))
            ci = co
        co = b * 2 ** cfg.depth
        self.bottleneck = Stage([(ci, co), (co, co)], cfg, [other, other], rng, "bottleneck")
        self.ups = []
        self.decoders = []
        for i in reversed(range(cfg.depth)):
            c = b * 2 ** i
            self.ups.append(Stage([(2 * c, c)], cfg, [other], rng, f"up{i}"))
            self.decoders.append(Stage([(2 * c, c), (c, c)], cfg, [other, other], rng, f"dec{i}"))
        self.head = Conv(b, cfg.out_channels, 1, "valid", rng, "head")

    def stages(self):
        out = list(self.encoders) + [self.bottleneck]
        for up, dec in zip(self.ups, self.decoders):
            out += [up, dec]
        return out

    def named_parameters(self):
        out = []
        for st in self.stages():
            out += st.named_parameters()
        return out + self.head.named_parameters()

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def norm_layers(self):
        out = []
        for st in self.stages():
            out += st.norms()
        return out

    def gates(self):
        return [g for _, norm in self.norm_layers() for g in norm.gates()]

    def named_buffers(self):
        """(name, owner, attribute) triples for running statistics."""
        out = []
        for name, norm in self.norm_layers():
            out += [(f"{name}.{bname}", owner, attr) for bname, owner, attr in norm.buffers()]
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def output_shape(self, h, w):
        return trace_shape(self.config, h, w)

    def forward(self, x, mode="eval", rng_seed=None):
        cfg = self.config
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ShapeError(f"expected input (n, {cfg.in_channels}, h, w), got {x.shape}")
        try:
            trace_shape(cfg, x.shape[2], x.shape[3])
        except ConfigError as exc:
            raise ShapeError(str(exc)) from exc
        rng = np.random.default_rng(rng_seed)
        skips = []
        for enc in self.encoders:
            x = enc(x, mode)
            skips.append(x)
            x = maxpool2(x)
        x = self.bottleneck(x, mode)
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = up(upsample2(x), mode)
            skip = crop_center(skip, x.shape[2], x.shape[3])
            skip = drop_connect(skip, cfg.dropconnect_rate, mode, rng)
            assert skip.shape[2:] == x.shape[2:]
            x = dec(concat_channels(skip, x), mode)
        return self.head(x)

    __call__ = forward

    def predict_logits(self, images, batch_size=16):
        """Eval-mode logits as a plain array, processed in chunks."""
        images = np.asarray(images, dtype=np.float64)
        outs = []
        with no_grad():
            for s in range(0, len(images), batch_size):
                outs.append(self.forward(images[s:s + batch_size], "eval").data)
        return np.concatenate(outs, axis=0)


def build(config, seed=0):
    """Instantiate a network; He-uniform conv weights, zero biases, unit affines."""
    return Network(config, seed)


def forward(net, x, mode="eval", rng_seed=None):
    return net.forward(x, mode, rng_seed)


def parameters(net):
    return net.parameters()


def count_parameters(net):
    return int(sum(p.size for p in net.parameters()))
