"""Differentiable primitives, parameter store, AdamW and the LR schedule.

Tensors are ``torch.Tensor``; torch's autograd tape provides reverse-mode
gradients. The functions here add the shape/range contracts the rest of the
package relies on, plus the few kernels torch does not ship in the exact form
we need (texel-unit bilinear sampling with border or repeat addressing, and
mesh graph aggregation).
"""
from __future__ import annotations

import builtins
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import torch
import torch.nn.functional as F

from .exceptions import ConfigError, GraphError, NumericError, OptError, ShapeError

DEFAULT_DTYPE = torch.float32


def as_tensor(x, dtype=None, requires_grad=False) -> torch.Tensor:
    t = torch.as_tensor(x, dtype=dtype or DEFAULT_DTYPE)
    if requires_grad:
        t = t.detach().clone().requires_grad_(True)
    return t


# --------------------------------------------------------------------------
# elementwise and linear ops
# --------------------------------------------------------------------------

def _strip_leading_ones(shape):
    shape = list(shape)
    while shape and shape[0] == 1:
        shape.pop(0)
    return shape


def _check_broadcast(a, b, op):
    if not isinstance(a, torch.Tensor) or not isinstance(b, torch.Tensor):
        return
    if a.numel() == 1 or b.numel() == 1:
        return
    if _strip_leading_ones(a.shape) != _strip_leading_ones(b.shape):
        raise ShapeError(f"{op}: shapes {tuple(a.shape)} and {tuple(b.shape)} do not conform")


def add(a, b):
    _check_broadcast(a, b, "add")
    return a + b


def mul(a, b):
    _check_broadcast(a, b, "mul")
    return a * b


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeError(f"matmul: shapes {tuple(a.shape)} and {tuple(b.shape)} do not conform")
    return a @ b


def relu(a):
    return torch.relu(a)


def tanh(a):
    return torch.tanh(a)


def sigmoid(a):
    return torch.sigmoid(a)


def mean(a, dim=None):
    return a.mean() if dim is None else a.mean(dim)


def sum(a, dim=None):  # noqa: A001 - mirrors the tensor method name
    return a.sum() if dim is None else a.sum(dim)


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------

_CONV_PADDING = {1: 0, 3: 1}


def conv2d(x, w, bias=None, stride=1, pad=None):
    """2D convolution on CHW (or NCHW) input with a k x k kernel, k in {1, 3}."""
    k = w.shape[-1]
    if w.dim() != 4 or w.shape[-2] != k or k not in _CONV_PADDING:
        raise ConfigError(f"conv2d: unsupported kernel shape {tuple(w.shape)}")
    if stride not in (1, 2):
        raise ConfigError(f"conv2d: unsupported stride {stride}")
    if pad is None:
        pad = _CONV_PADDING[k]
    if pad != _CONV_PADDING[k]:
        raise ConfigError(f"conv2d: kernel {k} requires pad={_CONV_PADDING[k]}")
    batched = x.dim() == 4
    if not batched:
        if x.dim() != 3:
            raise ShapeError(f"conv2d: expected CHW input, got {tuple(x.shape)}")
        x = x.unsqueeze(0)
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    if min(x.shape[-2:]) < k:
        raise ShapeError("conv2d: spatial dims smaller than kernel")
    y = F.conv2d(x, w, bias, stride=stride, padding=pad)
    return y if batched else y.squeeze(0)


# --------------------------------------------------------------------------
# bilinear sampling in texel units
# --------------------------------------------------------------------------

def sample_points(img: torch.Tensor, xy: torch.Tensor, mode: str = "border") -> torch.Tensor:
    """Bilinearly sample a CHW image at continuous texel coordinates.

    ``xy[:, 0]`` is the column and ``xy[:, 1]`` the row; texel ``(i, j)`` has
    its center at ``(j, i)``. ``mode`` is ``"border"`` (clamp) or ``"repeat"``
    (wrap). Returns a ``(P, C)`` tensor.
    """
    if img.dim() != 3:
        raise ShapeError(f"expected CHW image, got {tuple(img.shape)}")
    if xy.dim() != 2 or xy.shape[1] != 2:
        raise ShapeError(f"expected (P, 2) coordinates, got {tuple(xy.shape)}")
    if torch.isnan(xy).any():
        raise NumericError("NaN sample coordinates")
    C, H, W = img.shape
    x, y = xy[:, 0], xy[:, 1]
    if mode == "border":
        x = x.clamp(0, W - 1)
        y = y.clamp(0, H - 1)
    elif mode != "repeat":
        raise ConfigError(f"unknown addressing mode {mode!r}")
    x0f = torch.floor(x.detach())
    y0f = torch.floor(y.detach())
    fx = (x - x0f).unsqueeze(1)
    fy = (y - y0f).unsqueeze(1)
    x0 = x0f.long()
    y0 = y0f.long()
    if mode == "border":
        x1 = (x0 + 1).clamp(max=W - 1)
        y1 = (y0 + 1).clamp(max=H - 1)
    else:
        x0, x1 = x0 % W, (x0 + 1) % W
        y0, y1 = y0 % H, (y0 + 1) % H
    flat = img.reshape(C, H * W).t()
    v00 = flat[y0 * W + x0]
    v01 = flat[y0 * W + x1]
    v10 = flat[y1 * W + x0]
    v11 = flat[y1 * W + x1]
    top = v00 + (v01 - v00) * fx
    bot = v10 + (v11 - v10) * fx
    return top + (bot - top) * fy


def grid_sample_bilinear(x: torch.Tensor, coords: torch.Tensor, mode: str = "border") -> torch.Tensor:
    """Sample CHW ``x`` at a 2xHxW field of texel coordinates; returns C x H x W."""
    if coords.dim() != 3 or coords.shape[0] != 2:
        raise ShapeError(f"expected 2xHxW coordinates, got {tuple(coords.shape)}")
    _, h, w = coords.shape
    out = sample_points(x, coords.reshape(2, -1).t(), mode=mode)
    return out.t().reshape(x.shape[0], h, w)


def identity_grid(h: int, w: int, dtype=None) -> torch.Tensor:
    """2xHxW field holding each texel's own center coordinates."""
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=dtype or DEFAULT_DTYPE),
        torch.arange(w, dtype=dtype or DEFAULT_DTYPE),
        indexing="ij",
    )
    return torch.stack([xs, ys])


# --------------------------------------------------------------------------
# graph aggregation
# --------------------------------------------------------------------------

def _apply_theta(f, theta):
    if not isinstance(theta, torch.Tensor) or theta.dim() < 2:
        return f * theta
    return matmul(f, theta)


def graph_aggregate(f, edges, theta1, theta2):
    """``f'_i = theta1 f_i + theta2 sum_j w_ij f_j`` over a directed edge list.

    ``edges`` is ``(rows, cols, weights)``: node ``rows[e]`` receives
    ``weights[e] * f[cols[e]]``. Thetas are scalars or ``C_in x C_out`` matrices.
    """
    rows, cols, weights = edges
    n = f.shape[0]
    rows = torch.as_tensor(rows, dtype=torch.long)
    cols = torch.as_tensor(cols, dtype=torch.long)
    weights = torch.as_tensor(weights, dtype=f.dtype)
    if rows.numel():
        lo = min(int(rows.min()), int(cols.min()))
        hi = max(int(rows.max()), int(cols.max()))
        if lo < 0 or hi >= n:
            raise GraphError(f"edge index out of bounds for {n} nodes")
    if not torch.isfinite(weights).all() or (weights < 0).any():
        raise GraphError("edge weights must be finite and non-negative")
    agg = torch.zeros_like(f).index_add(0, rows, f[cols] * weights.unsqueeze(1))
    return _apply_theta(f, theta1) + _apply_theta(agg, theta2)


# --------------------------------------------------------------------------
# parameters and optimisation
# --------------------------------------------------------------------------

class ParamStore:
    """Named, ordered collection of learnable tensors."""

    def __init__(self, params: Mapping[str, torch.Tensor] | Iterable | None = None):
        self._params: OrderedDict[str, torch.Tensor] = OrderedDict()
        items = params.items() if isinstance(params, Mapping) else (params or [])
        for name, p in items:
            self.add(name, p)

    @classmethod
    def from_module(cls, module: torch.nn.Module, prefix: str = "") -> "ParamStore":
        return cls((prefix + n, p) for n, p in module.named_parameters())

    def add(self, name: str, p: torch.Tensor):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._params[name] = p

    def count(self) -> int:
        return builtins.sum(p.numel() for p in self._params.values())

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def __getitem__(self, name):
        return self._params[name]

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(self._params)

    def __contains__(self, name):
        return name in self._params


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@torch.no_grad()
def adamw_step(params: ParamStore, grads: Mapping[str, torch.Tensor] | None,
               state: OptimizerState, lr: float) -> OptimizerState:
    """One AdamW update in place. ``grads=None`` reads ``p.grad``."""
    if lr < 0:
        raise OptError(f"negative learning rate {lr}")
    resolved = {}
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            raise OptError(f"missing gradient for parameter {name!r}")
        if g.shape != p.shape:
            raise OptError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name!r}")
        resolved[name] = g
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = resolved[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        v = state.v[name]
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        if state.weight_decay:
            p.mul_(1 - lr * state.weight_decay)
        denom = (v / c2).sqrt_().add_(state.eps)
        p.addcdiv_(m, denom, value=-lr / c1)
    return state


def cosine_lr(step: int, warmup: int, total: int, peak: float) -> float:
    """Linear warm-up to ``peak`` then half-cosine decay to zero at ``total``."""
    step = min(max(step, 0), total)
    if step < warmup:
        return peak * step / warmup
    if total == warmup:
        return peak
    progress = (step - warmup) / (total - warmup)
    return 0.5 * peak * (1.0 + math.cos(math.pi * progress))
