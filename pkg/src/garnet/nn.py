"""Dense embedding network, Adam and a step learning-rate schedule.

The network maps a feature vector to a 2-D similarity point through a stack
of affine layers with a learnable PReLU slope between adjacent layers. All
parameters live in one flat float64 buffer; layer weights, biases and slopes
are views into it, which keeps the optimizer update a handful of vector ops
and makes serialization a single contiguous write.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, prelu
from .errors import InputError, NumericError

EMBED_DIM = 2
DEFAULT_HIDDEN = (64, 32)
PRELU_INIT = 0.25


def _layout(widths):
    """(name, shape) of every parameter for a width chain ``[d_in, ..., 2]``."""
    shapes = []
    n_layers = len(widths) - 1
    for i in range(n_layers):
        shapes.append((f"W{i}", (widths[i], widths[i + 1])))
        shapes.append((f"b{i}", (widths[i + 1],)))
        if i < n_layers - 1:
            shapes.append((f"a{i}", (1,)))
    return shapes


class Network:
    """Feed-forward encoder with output dimension fixed at 2.

    Parameters
    ----------
    widths : sequence of int
        Full width chain, input dimension first and ``2`` last.
    flat : ndarray, optional
        Parameter buffer to adopt (copied). Fresh zeros when omitted.
    """

    def __init__(self, widths, flat=None):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise InputError(f"invalid width chain {widths}")
        if widths[-1] != EMBED_DIM:
            raise InputError(f"output width must be {EMBED_DIM}, got {widths[-1]}")
        self.widths = widths
        self.layout = _layout(widths)
        size = sum(math.prod(s) for _, s in self.layout)
        if flat is None:
            self.flat = np.zeros(size)
        else:
            flat = np.array(flat, dtype=np.float64)
            if flat.shape != (size,):
                raise InputError(f"parameter buffer has {flat.size} values, expected {size}")
            self.flat = flat
        self.grad = np.zeros(size)
        self.params = {}
        self.param_grads = {}
        offset = 0
        for name, shape in self.layout:
            n = math.prod(shape)
            self.params[name] = self.flat[offset:offset + n].reshape(shape)
            self.param_grads[name] = self.grad[offset:offset + n].reshape(shape)
            offset += n

    @classmethod
    def init(cls, input_dim, hidden=DEFAULT_HIDDEN, rng=None, seed=0):
        """Uniform(+-sqrt(1/fan_in)) weights and biases; PReLU slopes at 0.25."""
        if rng is None:
            rng = np.random.default_rng(seed)
        net = cls((input_dim, *hidden, EMBED_DIM))
        for name, shape in net.layout:
            if name.startswith("a"):
                net.params[name][...] = PRELU_INIT
                continue
            fan_in = shape[0] if name.startswith("W") else net.params["W" + name[1:]].shape[0]
            bound = math.sqrt(1.0 / fan_in)
            net.params[name][...] = rng.uniform(-bound, bound, size=shape)
        return net

    @property
    def input_dim(self):
        return self.widths[0]

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def copy(self):
        return Network(self.widths, self.flat.copy())

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise InputError(f"frame dimension {x.shape[-1]} does not match network input {self.input_dim}")
        return x

    def forward(self, frames):
        """Embed one frame ``(D,)`` or a batch ``(n, D)``; returns ``(2,)`` or ``(n, 2)``."""
        x = self._check(frames)
        h = x
        for i in range(self.n_layers):
            h = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i < self.n_layers - 1:
                a = self.params[f"a{i}"][0]
                h = np.where(h > 0, h, a * h)
        return h

    __call__ = forward

    def forward_graph(self, frames):
        """Same as :meth:`forward` but records a differentiable graph.

        Leaf gradients accumulate into ``self.grad`` (through the per-parameter
        views), so call :meth:`zero_grad` before each backward pass.
        """
        x = Tensor(self._check(np.atleast_2d(frames)))
        leaves = {}
        for name, view in self.params.items():
            t = Tensor(view, requires_grad=True)
            t.grad = self.param_grads[name]
            leaves[name] = t
        h = x
        for i in range(self.n_layers):
            h = h @ leaves[f"W{i}"] + leaves[f"b{i}"]
            if i < self.n_layers - 1:
                h = prelu(h, leaves[f"a{i}"])
        return h

    def zero_grad(self):
        self.grad[...] = 0.0


@dataclass
class Adam:
    """Adam over a flat parameter vector with a step decay schedule.

    ``lr`` follows ``base_lr * decay ** (epoch // step_size)``; call
    :meth:`schedule` at the start of each epoch.
    """

    size: int
    base_lr: float = 1e-3
    decay: float = 0.1
    step_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    lr: float = field(init=False)
    m: np.ndarray = field(init=False, repr=False)
    v: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.lr = self.base_lr
        self.m = np.zeros(self.size)
        self.v = np.zeros(self.size)

    def schedule(self, epoch):
        self.lr = step_lr(self.base_lr, self.decay, self.step_size, epoch)
        return self.lr

    def step(self, params, grads):
        """Update ``params`` in place. Non-finite gradients leave everything untouched."""
        if params.shape != grads.shape or params.shape != self.m.shape:
            raise InputError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {self.m.shape}")
        if not np.all(np.isfinite(grads)):
            raise NumericError("non-finite gradient; parameters left unchanged")
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grads
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params


def step_lr(base_lr, decay, step_size, epoch):
    if epoch < 0:
        raise InputError(f"epoch must be non-negative, got {epoch}")
    return base_lr * decay ** (epoch // step_size)
