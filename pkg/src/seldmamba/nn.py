"""Lightweight parameter-container layer on top of the autodiff core.

Modules hold Tensors (parameters), numpy buffers (non-learnable state such as
running statistics), and child modules.  Checkpoint keys are the dotted
attribute paths, e.g. ``encoder.sed.stage1.conv1.weight``.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    def __init__(self):
        self._training = True
        self._buffers = {}

    # -- training mode ----------------------------------------------------

    @property
    def training(self):
        return self._training

    def train(self, mode=True):
        for m in self.modules():
            m._training = mode
        return self

    def eval(self):
        return self.train(False)

    # -- traversal ----------------------------------------------------------

    def _children(self):
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(val, Module):
                yield name, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    def named_parameters(self, prefix=""):
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + name, val
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix=""):
        for name, buf in self._buffers.items():
            yield prefix + name, buf
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    # -- state I/O ----------------------------------------------------------

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: buf for name, buf in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ValueError(f"state mismatch: missing={missing[:5]} extra={extra[:5]}")
        for name, p in self.named_parameters():
            arr = np.asarray(state[name], dtype=p.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"state mismatch: {name} has shape {arr.shape}, "
                                 f"expected {p.shape}")
            p.data = arr.copy()
        for name, buf in self.named_buffers():
            arr = np.asarray(state[name], dtype=buf.dtype)
            if arr.shape != buf.shape:
                raise ValueError(f"state mismatch: {name} has shape {arr.shape}, "
                                 f"expected {buf.shape}")
            buf[...] = arr

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _resolve_attr(module, path):
    segments = path.split(".")
    obj = module
    for seg in segments[:-1]:
        obj = obj[int(seg)] if seg.isdigit() else getattr(obj, seg)
    return obj, segments[-1]


@contextmanager
def substitute_parameters(module, tensors):
    """Temporarily swap module parameters (by dotted path) for given Tensors.

    Lets gradient checks treat a whole module as a function of fresh leaf
    tensors.  Restores the original parameter objects on exit.
    """
    originals = {}
    try:
        for path, t in tensors.items():
            owner, attr = _resolve_attr(module, path)
            originals[path] = getattr(owner, attr)
            setattr(owner, attr, t)
        yield module
    finally:
        for path, orig in originals.items():
            owner, attr = _resolve_attr(module, path)
            setattr(owner, attr, orig)


def _uniform(rng, shape, bound, dtype):
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Linear(Module):
    """y = x @ weight + bias with weight stored as (in_features, out_features)."""

    def __init__(self, in_features, out_features, rng, bias=True, dtype=np.float64):
        super().__init__()
        bound = 1.0 / np.sqrt(in_features)
        self.weight = _uniform(rng, (in_features, out_features), bound, dtype)
        self.bias = _uniform(rng, (out_features,), bound, dtype) if bias else None

    def __call__(self, x):
        y = ad.matmul(x, self.weight)
        if self.bias is not None:
            y = ad.add_bias(y, self.bias)
        return y


class Conv2d(Module):
    """3x3 same-padding convolution over (C, H, W). Bias off by default: these
    convolutions are always followed by batch norm, which cancels any bias."""

    def __init__(self, in_channels, out_channels, rng, kernel=3, bias=False,
                 dtype=np.float64):
        super().__init__()
        fan_in = in_channels * kernel * kernel
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = _uniform(rng, (out_channels, in_channels, kernel, kernel),
                               bound, dtype)
        self.bias = _uniform(rng, (out_channels,), bound, dtype) if bias else None
        self._padding = kernel // 2

    def __call__(self, x):
        return ad.conv2d(x, self.weight, self.bias, padding=self._padding)


class DepthwiseConv1d(Module):
    """Depthwise causal 1-D convolution over (C, L)."""

    def __init__(self, channels, kernel, rng, dtype=np.float64):
        super().__init__()
        bound = 1.0 / np.sqrt(kernel)
        self.weight = _uniform(rng, (channels, 1, kernel), bound, dtype)
        self.bias = _uniform(rng, (channels,), bound, dtype)
        self._channels = channels

    def __call__(self, x):
        return ad.conv1d(x, self.weight, self.bias, groups=self._channels, causal=True)


class BatchNorm2d(Module):
    """Per-channel batch normalization of (C, H, W) with running statistics."""

    def __init__(self, channels, dtype=np.float64, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self._buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self._buffers["running_var"] = np.ones(channels, dtype=dtype)
        self._momentum = momentum
        self._eps = eps

    def __call__(self, x):
        if self._training:
            out, mu, var = ad.batch_norm2d(x, self.gamma, self.beta, eps=self._eps)
            m = x.shape[1] * x.shape[2]
            unbiased = var * m / max(m - 1, 1)
            mom = self._momentum
            self._buffers["running_mean"] *= 1.0 - mom
            self._buffers["running_mean"] += mom * mu
            self._buffers["running_var"] *= 1.0 - mom
            self._buffers["running_var"] += mom * unbiased
            return out
        return ad.batch_norm2d(x, self.gamma, self.beta,
                               mean=self._buffers["running_mean"],
                               var=self._buffers["running_var"], eps=self._eps)
