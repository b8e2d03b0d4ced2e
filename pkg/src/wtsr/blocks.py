"""Residual channel attention building blocks and the three networks.

Each layer keeps the activations of its last recorded forward call and
implements ``backward`` explicitly; there is no generic autodiff tape.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .tensor import DEFAULT_DTYPE, GradPair, ShapeError

ROLES = ("backbone", "texture_predictor", "texture_fusion")
# DIV2K RGB mean, removed from the RGB input channels and restored on output
RGB_MEAN = np.array([0.4488, 0.4371, 0.4040]).reshape(1, 3, 1, 1)


class BackwardError(RuntimeError):
    """Raised when backward is called without a recorded forward pass."""


@dataclass(frozen=True)
class NetworkSpec:
    role: str
    in_channels: int
    out_channels: int
    feature_channels: int = 64
    n_groups: int = 10
    n_blocks_per_group: int = 10
    ca_reduction: int = 16
    scale: int = 1
    has_upscaler: bool = False
    mean_shift: bool = False

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown network role {self.role!r}")
        for name in ("in_channels", "out_channels", "feature_channels", "n_groups",
                     "n_blocks_per_group", "ca_reduction", "scale"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.feature_channels % self.ca_reduction:
            raise ValueError(
                f"feature_channels={self.feature_channels} not divisible by ca_reduction={self.ca_reduction}")
        if self.has_upscaler and self.scale < 2:
            raise ValueError("an upscaler needs scale >= 2")
        if not self.has_upscaler and self.scale != 1:
            raise ValueError("scale must be 1 without an upscaler")
        expected_io = {"backbone": (3, 3), "texture_predictor": (1, 1), "texture_fusion": (4, 3)}[self.role]
        if (self.in_channels, self.out_channels) != expected_io:
            raise ValueError(f"{self.role} must map {expected_io[0]} -> {expected_io[1]} channels")
        if self.role == "texture_predictor" and self.has_upscaler:
            raise ValueError("texture_predictor has no upscaler")
        if self.role != "texture_predictor" and not self.has_upscaler:
            raise ValueError(f"{self.role} requires an upscaler")
        if self.role == "texture_predictor" and self.mean_shift:
            raise ValueError("mean_shift applies to RGB networks only")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def backbone(cls, scale=3, **kw):
        kw.setdefault("mean_shift", True)
        return cls("backbone", 3, 3, scale=scale, has_upscaler=True, **kw)

    @classmethod
    def texture_predictor(cls, **kw):
        kw.setdefault("n_groups", 2)
        return cls("texture_predictor", 1, 1, scale=1, has_upscaler=False, **kw)

    @classmethod
    def texture_fusion(cls, scale=3, **kw):
        kw.setdefault("mean_shift", True)
        return cls("texture_fusion", 4, 3, scale=scale, has_upscaler=True, **kw)


class Conv:
    def __init__(self, name, cin, cout, k, rng, dtype):
        self.name = name
        self.pad = (k - 1) // 2
        std = np.sqrt(2.0 / (cin * k * k))
        self.weight = GradPair(rng.normal(0.0, std, size=(cout, cin, k, k)).astype(dtype))
        self.bias = GradPair(np.zeros(cout, dtype=dtype))
        self._x = None

    def named_params(self):
        yield f"{self.name}.weight", self.weight
        yield f"{self.name}.bias", self.bias

    def forward(self, x, record=False):
        if record:
            self._x = x
        return T.conv2d(x, self.weight.value, self.bias.value, self.pad)

    def backward(self, g):
        if self._x is None:
            raise BackwardError(f"{self.name}: backward without a recorded forward")
        gx, gw, gb = T.conv2d_backward(self._x, self.weight.value, g, self.pad)
        self.weight.grad += gw
        self.bias.grad += gb
        self._x = None
        return gx


class CALayer:
    """Channel attention: x * sigmoid(W2 relu(W1 avgpool(x)))."""

    def __init__(self, name, channels, reduction, rng, dtype):
        self.name = name
        self.down = Conv(f"{name}.down", channels, channels // reduction, 1, rng, dtype)
        self.up = Conv(f"{name}.up", channels // reduction, channels, 1, rng, dtype)
        self._cache = None

    def named_params(self):
        yield from self.down.named_params()
        yield from self.up.named_params()

    def forward(self, x, record=False):
        pooled = T.global_avg_pool(x)
        z1 = self.down.forward(pooled, record)
        z2 = self.up.forward(T.activation(z1, "relu"), record)
        gate = T.activation(z2, "sigmoid")
        if record:
            self._cache = (x, z1, gate)
        return x * gate

    def backward(self, g):
        if self._cache is None:
            raise BackwardError(f"{self.name}: backward without a recorded forward")
        x, z1, gate = self._cache
        self._cache = None
        g_gate = (g * x).sum(axis=(2, 3), keepdims=True)
        g_z2 = g_gate * gate * (1 - gate)
        g_z1 = T.activation_backward(z1, self.up.backward(g_z2), "relu")
        g_pooled = self.down.backward(g_z1)
        return g * gate + T.global_avg_pool_backward(x.shape, g_pooled)


class RCAB:
    """x + CA(conv2(relu(conv1(x))))."""

    def __init__(self, name, channels, reduction, rng, dtype):
        self.name = name
        self.conv1 = Conv(f"{name}.conv1", channels, channels, 3, rng, dtype)
        self.conv2 = Conv(f"{name}.conv2", channels, channels, 3, rng, dtype)
        self.ca = CALayer(f"{name}.ca", channels, reduction, rng, dtype)
        self._z1 = None

    def named_params(self):
        yield from self.conv1.named_params()
        yield from self.conv2.named_params()
        yield from self.ca.named_params()

    def forward(self, x, record=False):
        z1 = self.conv1.forward(x, record)
        if record:
            self._z1 = z1
        return x + self.ca.forward(self.conv2.forward(T.activation(z1, "relu"), record), record)

    def backward(self, g):
        if self._z1 is None:
            raise BackwardError(f"{self.name}: backward without a recorded forward")
        g_branch = self.conv2.backward(self.ca.backward(g))
        g_branch = self.conv1.backward(T.activation_backward(self._z1, g_branch, "relu"))
        self._z1 = None
        return g + g_branch


class ResidualGroup:
    """x + conv(RCAB_b(... RCAB_1(x)))."""

    def __init__(self, name, channels, n_blocks, reduction, rng, dtype):
        self.name = name
        self.blocks = [RCAB(f"{name}.blocks.{i}", channels, reduction, rng, dtype) for i in range(n_blocks)]
        self.conv = Conv(f"{name}.conv", channels, channels, 3, rng, dtype)

    def named_params(self):
        for b in self.blocks:
            yield from b.named_params()
        yield from self.conv.named_params()

    def forward(self, x, record=False):
        y = x
        for b in self.blocks:
            y = b.forward(y, record)
        return x + self.conv.forward(y, record)

    def backward(self, g):
        gy = self.conv.backward(g)
        for b in reversed(self.blocks):
            gy = b.backward(gy)
        return g + gy


@dataclass
class NetworkState:
    """A network built from a :class:`NetworkSpec` plus its Adam state.

    Layout: head conv -> residual groups -> body conv (+ long skip from the
    head) -> [conv to C*s^2 + pixel shuffle] -> tail conv. With
    ``spec.mean_shift`` the fixed RGB mean is subtracted from the first three
    input channels and added back to the output.
    """

    spec: NetworkSpec
    dtype: type = DEFAULT_DTYPE
    seed: int = 0
    step_count: int = 0
    adam_m: list = field(default_factory=list, repr=False)
    adam_v: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        s, dt = self.spec, self.dtype
        rng = np.random.default_rng(self.seed)
        c = s.feature_channels
        self.head = Conv("head", s.in_channels, c, 3, rng, dt)
        self.groups = [ResidualGroup(f"groups.{i}", c, s.n_blocks_per_group, s.ca_reduction, rng, dt)
                       for i in range(s.n_groups)]
        self.body = Conv("body", c, c, 3, rng, dt)
        self.upsample = Conv("upsample", c, c * s.scale ** 2, 3, rng, dt) if s.has_upscaler else None
        self.tail = Conv("tail", c, s.out_channels, 3, rng, dt)
        self._recorded = False

    def _layers(self):
        return [self.head, *self.groups, self.body] + ([self.upsample] if self.upsample else []) + [self.tail]

    def named_params(self):
        """Parameters in canonical order; checkpoints rely on this order."""
        for layer in self._layers():
            yield from layer.named_params()

    @property
    def params(self):
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def forward(self, x, record=False):
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"{self.spec.role} expects {self.spec.in_channels} input channels, got shape {x.shape}")
        x = x.astype(self.dtype, copy=False)
        if self.spec.mean_shift:
            x = x.copy()
            x[:, :3] -= RGB_MEAN.astype(self.dtype)
        head = self.head.forward(x, record)
        y = head
        for grp in self.groups:
            y = grp.forward(y, record)
        y = self.body.forward(y, record) + head
        if self.upsample is not None:
            y = T.pixel_shuffle(self.upsample.forward(y, record), self.spec.scale)
        out = self.tail.forward(y, record)
        if self.spec.mean_shift:
            out += RGB_MEAN.astype(self.dtype)
        self._recorded = record
        return out

    def backward(self, loss_grad):
        """Accumulate d(loss)/d(param) into every parameter's grad."""
        if not self._recorded:
            raise BackwardError("backward called without a recorded forward pass")
        g = self.tail.backward(loss_grad.astype(self.dtype, copy=False))
        if self.upsample is not None:
            g = self.upsample.backward(T.pixel_shuffle_backward(g, self.spec.scale))
        g_head = g
        g = self.body.backward(g)
        for grp in reversed(self.groups):
            g = grp.backward(g)
        self._recorded = False
        return self.head.backward(g + g_head)


def build_network(spec, seed=0, dtype=DEFAULT_DTYPE):
    """Fan-in scaled Gaussian weights (std sqrt(2/fan_in)), zero biases."""
    return NetworkState(spec, dtype=dtype, seed=seed)


def forward(net, x, record=False):
    return net.forward(x, record)


def backward(net, loss_grad):
    return net.backward(loss_grad)


@dataclass
class LossValue:
    value: float
    grad_wrt_prediction: np.ndarray


def l1_loss(pred, target):
    """Mean absolute error and its gradient sign(pred - target) / count."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    value = float(np.mean(np.abs(diff, dtype=np.float64)))
    return LossValue(value, (np.sign(diff) / diff.size).astype(pred.dtype))


def adam_step(net, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over all parameters, then zero the grads."""
    params = net.params
    if not net.adam_m:
        net.adam_m = [np.zeros_like(p.value) for p in params]
        net.adam_v = [np.zeros_like(p.value) for p in params]
    net.step_count += 1
    t = net.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, m, v in zip(params, net.adam_m, net.adam_v):
        g = p.grad
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        p.value -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.value.dtype)
        p.zero_grad()
