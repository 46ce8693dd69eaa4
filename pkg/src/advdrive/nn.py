"""Small dense networks with hand-written reverse mode and Adam, all in float64."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from advdrive.errors import NumericError, ShapeError, UsageError


def orthogonal(shape, gain, rng) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


@dataclass
class Cache:
    owner: int
    version: int
    inputs: list  # input to each layer
    outputs: list  # post-activation output of each hidden layer


@dataclass
class Gradients:
    params: list  # aligned with Mlp.params(): W0, b0, W1, b1, ...
    input: np.ndarray

    def global_norm(self) -> float:
        return math.sqrt(sum(float(np.vdot(g, g)) for g in self.params))

    def scale(self, factor: float):
        for g in self.params:
            g *= factor


class Mlp:
    """Affine layers with tanh between them and an identity output.

    Weights are stored as ``(out, in)`` matrices; inputs may be a vector or a
    batch of row vectors.
    """

    def __init__(self, layer_sizes, weights, biases):
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ShapeError("an Mlp needs at least an input and an output size")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[k + 1], self.layer_sizes[k])
            if w.shape != expect or b.shape != (expect[0],):
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape}, expected {expect}")
        if len(self.weights) != len(self.layer_sizes) - 1:
            raise ShapeError("number of layers does not match layer_sizes")
        self.version = 0

    @classmethod
    def initialize(cls, layer_sizes, rng, hidden_gain=math.sqrt(2.0), output_gain=1.0) -> "Mlp":
        sizes = list(layer_sizes)
        weights, biases = [], []
        for k in range(len(sizes) - 1):
            gain = output_gain if k == len(sizes) - 2 else hidden_gain
            weights.append(orthogonal((sizes[k + 1], sizes[k]), gain, rng))
            biases.append(np.zeros(sizes[k + 1]))
        return cls(sizes, weights, biases)

    @classmethod
    def zeros(cls, layer_sizes) -> "Mlp":
        sizes = list(layer_sizes)
        return cls(sizes, [np.zeros((sizes[k + 1], sizes[k])) for k in range(len(sizes) - 1)],
                   [np.zeros(sizes[k + 1]) for k in range(len(sizes) - 1)])

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def load_from(self, other: "Mlp"):
        if other.layer_sizes != self.layer_sizes:
            raise ShapeError(f"cannot load {other.layer_sizes} into {self.layer_sizes}")
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src
        self.touch()

    def touch(self):
        """Mark parameters as modified; caches from earlier forwards become stale."""
        self.version += 1

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params())

    def forward(self, x, keep_cache=True):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.layer_sizes[0] or x.ndim > 2:
            raise ShapeError(f"input shape {x.shape} does not match input size {self.layer_sizes[0]}")
        inputs, outputs = [], []
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w.T + b
            if k < last:
                h = np.tanh(z)
                outputs.append(h)
            else:
                h = z
        cache = Cache(id(self), self.version, inputs, outputs) if keep_cache else None
        return h, cache

    def __call__(self, x):
        return self.forward(x, keep_cache=False)[0]

    def backward(self, cache: Cache, grad_output) -> Gradients:
        """Gradients of ``sum(output * grad_output)`` w.r.t. every parameter and the input."""
        if cache is None or cache.owner != id(self) or cache.version != self.version:
            raise UsageError("cache does not belong to the current parameters of this network")
        g = np.asarray(grad_output, dtype=np.float64)
        batched = cache.inputs[0].ndim == 2
        expect = (cache.inputs[0].shape[0], self.layer_sizes[-1]) if batched else (self.layer_sizes[-1],)
        if g.shape != expect:
            raise ShapeError(f"grad_output shape {g.shape}, expected {expect}")
        grads = [None] * (2 * len(self.weights))
        for k in range(len(self.weights) - 1, -1, -1):
            h_in = cache.inputs[k]
            if batched:
                grads[2 * k] = g.T @ h_in
                grads[2 * k + 1] = g.sum(axis=0)
            else:
                grads[2 * k] = np.outer(g, h_in)
                grads[2 * k + 1] = g.copy()
            g = g @ self.weights[k]
            if k > 0:
                g = g * (1.0 - cache.outputs[k - 1] ** 2)
        return Gradients(grads, g)


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net: Mlp, lr: float = 3e-4, **kwargs) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p) for p in net.params()],
                   v=[np.zeros_like(p) for p in net.params()], **kwargs)


def adam_step(net: Mlp, grads: Gradients, state: AdamState):
    """Bias-corrected Adam update in place. Refuses non-finite gradients without touching anything."""
    params = net.params()
    if len(grads.params) != len(params) or any(g.shape != p.shape for g, p in zip(grads.params, params)):
        raise ShapeError("gradient shapes do not match network parameters")
    if not all(np.isfinite(g).all() for g in grads.params):
        raise NumericError("non-finite gradient; update refused")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads.params, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    net.touch()


def clip_grad_norm(grads: Gradients, max_norm: float) -> float:
    """Rescale in place so the global norm is at most ``max_norm``; returns the norm before clipping."""
    norm = grads.global_norm()
    if max_norm > 0 and norm > max_norm:
        grads.scale(max_norm / (norm + 1e-12))
    return norm


def soft_update(target: Mlp, source: Mlp, tau: float):
    """Polyak averaging ``target <- tau * source + (1 - tau) * target``."""
    for t, s in zip(target.params(), source.params()):
        if tau == 1.0:
            t[...] = s
        else:
            t *= 1.0 - tau
            t += tau * s
    target.touch()


def params_digest(net: Mlp) -> bytes:
    return b"".join(p.tobytes() for p in net.params())
