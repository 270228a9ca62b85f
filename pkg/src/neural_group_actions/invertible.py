"""Volume-preserving invertible networks with hand-written reverse mode.

An :class:`InvertibleNet` is a stack of additive coupling layers and fixed
permutations.  Every layer works on row batches ``(B, d)`` and exposes four
primitives: a forward and an inverse pass that each return a tape, and the
matching vector-Jacobian products that turn an output cotangent into an input
cotangent plus parameter gradients.  All arithmetic is float64.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch

SCHEMA_VERSION = 1

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda h: 1.0 - h * h),
}


def _as_batch(x, dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != dim:
        raise DimensionMismatch(f"expected trailing dimension {dim}, got shape {x.shape}")
    return X, single


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


class Mlp:
    """Dense network ``x @ W + b`` with an activation between layers (none after the last).

    ``widths = [w_in, *hidden, w_out]``; with no hidden widths the map is affine.
    """

    def __init__(self, widths: Sequence[int], weights, biases, activation: str = "tanh"):
        widths = [int(w) for w in widths]
        if len(widths) < 2:
            raise ValueError("an Mlp needs at least input and output widths")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.widths = widths
        self.activation = activation
        self.weights = [np.array(W, dtype=np.float64) for W in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (widths[i], widths[i + 1]) or b.shape != (widths[i + 1],):
                raise DimensionMismatch(f"layer {i}: weight {W.shape} / bias {b.shape} "
                                        f"inconsistent with widths {widths}")
        if len(self.weights) != len(widths) - 1:
            raise DimensionMismatch("number of weight matrices does not match widths")

    @classmethod
    def init(cls, widths, rng, activation="tanh", zero_last=True) -> "Mlp":
        weights, biases = [], []
        n = len(widths) - 1
        for i in range(n):
            if zero_last and i == n - 1:
                weights.append(np.zeros((widths[i], widths[i + 1])))
            else:
                weights.append(glorot_uniform(rng, widths[i], widths[i + 1]))
            biases.append(np.zeros(widths[i + 1]))
        return cls(widths, weights, biases, activation)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def __call__(self, X):
        return self.forward_tape(X)[0]

    def forward_tape(self, X):
        act, _ = _ACTIVATIONS[self.activation]
        hs = [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if i == last else act(z)
            if i != last:
                hs.append(h)
        return h, hs

    def backward(self, hs, dout):
        """Return ``(d_input, [dW0, db0, dW1, db1, ...])``."""
        _, dact = _ACTIVATIONS[self.activation]
        grads = [None] * (2 * len(self.weights))
        dz = dout
        for i in range(len(self.weights) - 1, -1, -1):
            h = hs[i]
            grads[2 * i] = h.T @ dz
            grads[2 * i + 1] = dz.sum(axis=0)
            dh = dz @ self.weights[i].T
            dz = dh * dact(h) if i > 0 else dh
        return dz, grads

    def to_dict(self) -> dict:
        return {"widths": self.widths, "activation": self.activation,
                "weights": [W.tolist() for W in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, d) -> "Mlp":
        return cls(d["widths"], d["weights"], d["biases"], d.get("activation", "tanh"))


class AdditiveCouplingLayer:
    """``(x1, x2) -> (x1, x2 + m(x1))`` with ``x1`` the first half of the coordinates."""

    kind = "coupling"

    def __init__(self, dim: int, conditioner: Mlp):
        if dim < 2 or dim % 2:
            raise ValueError(f"coupling layers need an even dimension >= 2, got {dim}")
        half = dim // 2
        if conditioner.widths[0] != half or conditioner.widths[-1] != half:
            raise DimensionMismatch(f"conditioner must map {half} -> {half} reals")
        self.dim = dim
        self.half = half
        self.conditioner = conditioner

    @classmethod
    def init(cls, dim, rng, hidden=(64, 64), activation="tanh", zero_last=True):
        if dim < 2 or dim % 2:
            raise ValueError(f"coupling layers need an even dimension >= 2, got {dim}")
        widths = [dim // 2, *hidden, dim // 2]
        return cls(dim, Mlp.init(widths, rng, activation, zero_last))

    @property
    def params(self):
        return self.conditioner.params

    def forward_tape(self, X):
        x1, x2 = X[:, :self.half], X[:, self.half:]
        m, hs = self.conditioner.forward_tape(x1)
        return np.concatenate([x1, x2 + m], axis=1), hs

    def inverse_tape(self, Y):
        y1, y2 = Y[:, :self.half], Y[:, self.half:]
        m, hs = self.conditioner.forward_tape(y1)
        return np.concatenate([y1, y2 - m], axis=1), hs

    def forward_vjp(self, hs, dY):
        dy1, dy2 = dY[:, :self.half], dY[:, self.half:]
        dx1, grads = self.conditioner.backward(hs, dy2)
        return np.concatenate([dy1 + dx1, dy2], axis=1), grads

    def inverse_vjp(self, hs, dX):
        dx1, dx2 = dX[:, :self.half], dX[:, self.half:]
        dy1, grads = self.conditioner.backward(hs, -dx2)
        return np.concatenate([dx1 + dy1, dx2], axis=1), grads

    def to_dict(self):
        return {"type": self.kind, "dim": self.dim, **self.conditioner.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["dim"], Mlp.from_dict(d))


class PermutationLayer:
    """Fixed coordinate shuffle: ``y[i] = x[perm[i]]``."""

    kind = "permutation"
    params: list = []

    def __init__(self, perm: Sequence[int], seed: int | None = None):
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(len(perm))):
            raise ValueError("not a permutation")
        self.dim = len(perm)
        self.perm = perm
        self.inv_perm = np.argsort(perm)
        self.seed = seed

    @classmethod
    def init(cls, dim, rng):
        seed = int(rng.integers(2**31))
        return cls(np.random.default_rng(seed).permutation(dim), seed)

    def forward_tape(self, X):
        return X[:, self.perm], None

    def inverse_tape(self, Y):
        return Y[:, self.inv_perm], None

    def forward_vjp(self, _, dY):
        return dY[:, self.inv_perm], []

    def inverse_vjp(self, _, dX):
        return dX[:, self.perm], []

    def to_dict(self):
        return {"type": self.kind, "dim": self.dim, "perm": self.perm.tolist(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["perm"], d.get("seed"))


class LinearLayer:
    """Fixed invertible matrix ``y = M x``.

    Not volume preserving in general and carries no trainable parameters;
    meant for hand-built maps such as ``(x, y) -> (x + y, x - y)``.
    """

    kind = "linear"
    params: list = []

    def __init__(self, matrix):
        M = np.array(matrix, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionMismatch("linear layer needs a square matrix")
        self.dim = M.shape[0]
        self.matrix = M
        self.inv_matrix = np.linalg.inv(M)

    def forward_tape(self, X):
        return X @ self.matrix.T, None

    def inverse_tape(self, Y):
        return Y @ self.inv_matrix.T, None

    def forward_vjp(self, _, dY):
        return dY @ self.matrix, []

    def inverse_vjp(self, _, dX):
        return dX @ self.inv_matrix, []

    def to_dict(self):
        return {"type": self.kind, "dim": self.dim, "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["matrix"])


_LAYER_TYPES = {c.kind: c for c in (AdditiveCouplingLayer, PermutationLayer, LinearLayer)}


class InvertibleNet:
    """A composition of invertible layers on ``R^dim``; an empty stack is the identity."""

    def __init__(self, dim: int, layers: Sequence = ()):
        self.dim = int(dim)
        self.layers = list(layers)
        for i, layer in enumerate(self.layers):
            if layer.dim != self.dim:
                raise DimensionMismatch(f"layer {i} has dim {layer.dim}, net has dim {self.dim}")

    @classmethod
    def identity(cls, dim) -> "InvertibleNet":
        return cls(dim, [])

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += layer.params
        return out

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    @property
    def volume_preserving(self) -> bool:
        return all(l.kind != "linear" for l in self.layers)

    def forward(self, x):
        X, single = _as_batch(x, self.dim)
        Y = self.forward_tape(X)[0]
        return Y[0] if single else Y

    def inverse(self, y):
        Y, single = _as_batch(y, self.dim)
        X = self.inverse_tape(Y)[0]
        return X[0] if single else X

    __call__ = forward

    def forward_tape(self, X):
        tape = []
        for layer in self.layers:
            X, t = layer.forward_tape(X)
            tape.append(t)
        return X, tape

    def inverse_tape(self, Y):
        tape = []
        for layer in reversed(self.layers):
            Y, t = layer.inverse_tape(Y)
            tape.append(t)
        return Y, tape

    def forward_vjp(self, tape, dY):
        """Pull ``dY`` back through :meth:`forward_tape`; grads align with :attr:`params`."""
        grads = []
        for layer, t in zip(reversed(self.layers), reversed(tape)):
            dY, g = layer.forward_vjp(t, dY)
            grads = g + grads
        return dY, grads

    def inverse_vjp(self, tape, dX):
        grads = []
        for layer, t in zip(self.layers, reversed(tape)):
            dX, g = layer.inverse_vjp(t, dX)
            grads += g
        return dX, grads

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "dim": self.dim,
                "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d) -> "InvertibleNet":
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported net schema version {version}")
        layers = []
        for ld in d["layers"]:
            if ld.get("type") not in _LAYER_TYPES:
                raise ValueError(f"unknown layer type {ld.get('type')!r}")
            layers.append(_LAYER_TYPES[ld["type"]].from_dict(ld))
        return cls(d["dim"], layers)


def build_net(dim: int, num_coupling: int, rng: np.random.Generator, hidden=(64, 64),
              activation="tanh", permute=True, zero_last=True) -> InvertibleNet:
    """Coupling layers with a seeded random permutation between consecutive pairs."""
    layers = []
    for i in range(num_coupling):
        if i > 0 and permute:
            layers.append(PermutationLayer.init(dim, rng))
        layers.append(AdditiveCouplingLayer.init(dim, rng, hidden, activation, zero_last))
    return InvertibleNet(dim, layers)


def forward(net: InvertibleNet, x):
    return net.forward(x)


def inverse(net: InvertibleNet, y):
    return net.inverse(y)


def grad(net: InvertibleNet, x, cotangent):
    """Reverse-mode derivative of ``net.forward`` at ``x`` contracted with ``cotangent``.

    Returns the input cotangent and a list of parameter gradients aligned
    with ``net.params``.  Batched inputs sum parameter gradients over rows.
    """
    X, single = _as_batch(x, net.dim)
    dY, _ = _as_batch(cotangent, net.dim)
    if dY.shape != X.shape:
        raise DimensionMismatch(f"cotangent shape {dY.shape} != input shape {X.shape}")
    _, tape = net.forward_tape(X)
    dX, grads = net.forward_vjp(tape, dY)
    return (dX[0] if single else dX), grads


def numeric_jacobian(f: Callable, x, step: float = 1e-6, batched: bool = False) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``x``; row ``i`` is ``d f_i``.

    With ``batched=True`` ``f`` is called once on the ``(2d, d)`` stack of
    perturbed points and must map rows independently.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    E = np.eye(d) * step
    pts = np.concatenate([x + E, x - E], axis=0)
    if batched:
        vals = np.asarray(f(pts), dtype=np.float64)
    else:
        vals = np.stack([np.asarray(f(p), dtype=np.float64).ravel() for p in pts])
    return ((vals[:d] - vals[d:]) / (2.0 * step)).T
