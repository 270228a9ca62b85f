"""Neural group actions: per-slot invertible nets wired by a finite group action.

The input ``x`` in ``R^(p*|S|)`` is read as ``|S|`` contiguous slots of ``p``
reals.  Group element ``g`` acts by

    (g.x)_s = T_s(T_{g^-1 s}^{-1}(x_{g^-1 s}))

conjugated by an invertible change of coordinates ``H``, i.e.
``g.x = H(raw_g(H^{-1}(x)))``.  The group laws hold for every parameter
setting because the slot permutations form an action and each ``T_s`` is
undone exactly by its own inverse.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, DimensionTooLarge, UnknownElement
from .groups import FiniteGAction, builtin_group, left_multiplication_action
from .invertible import SCHEMA_VERSION, InvertibleNet, build_net, numeric_jacobian


class NeuralGroupAction:
    def __init__(self, action: FiniteGAction, p: int, T, H: InvertibleNet | None = None):
        self.action = action
        self.p = int(p)
        self.T = list(T)
        self.dim = self.p * action.set_size
        self.H = H if H is not None else InvertibleNet.identity(self.dim)
        if len(self.T) != action.set_size:
            raise DimensionMismatch(f"need {action.set_size} slot nets, got {len(self.T)}")
        for s, net in enumerate(self.T):
            if net.dim != self.p:
                raise DimensionMismatch(f"slot net {s} has dim {net.dim}, expected p={self.p}")
        if self.H.dim != self.dim:
            raise DimensionMismatch(f"conjugator has dim {self.H.dim}, expected {self.dim}")
        self._src = action.preimage_table()

    @property
    def group(self):
        return self.action.group

    @property
    def params(self) -> list[np.ndarray]:
        """All trainable arrays: slot nets in slot order, then the conjugator."""
        out = []
        for net in self.T:
            out += net.params
        return out + self.H.params

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self.params)

    def _elements(self, g, batch):
        g = np.asarray(g, dtype=np.int64)
        if g.ndim == 0:
            g = np.full(batch, int(g))
        if g.shape != (batch,):
            raise DimensionMismatch(f"need one group element per row ({batch}), got {g.shape}")
        if g.size and (g.min() < 0 or g.max() >= self.group.order):
            raise UnknownElement(f"group element out of range [0, {self.group.order})")
        return g

    def _batch(self, x):
        X = np.asarray(x, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None]
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DimensionMismatch(f"expected vectors of length {self.dim}, got shape {np.shape(x)}")
        return X, single

    def _decode(self, Z):
        B, S, p = Z.shape[0], self.action.set_size, self.p
        U = np.empty((B, S, p))
        tapes = []
        for s, net in enumerate(self.T):
            U[:, s], t = net.inverse_tape(Z[:, s * p:(s + 1) * p])
            tapes.append(t)
        return U, tapes

    def _decode_vjp(self, tapes, dU):
        p = self.p
        dZ = np.empty((dU.shape[0], self.dim))
        grads = []
        for s, net in enumerate(self.T):
            dZ[:, s * p:(s + 1) * p], g = net.inverse_vjp(tapes[s], dU[:, s])
            grads.append(g)
        return dZ, grads

    def _encode(self, V):
        p = self.p
        W = np.empty((V.shape[0], self.dim))
        tapes = []
        for s, net in enumerate(self.T):
            W[:, s * p:(s + 1) * p], t = net.forward_tape(V[:, s])
            tapes.append(t)
        return W, tapes

    def _encode_vjp(self, tapes, dW):
        p = self.p
        dV = np.empty((dW.shape[0], self.action.set_size, p))
        grads = []
        for s, net in enumerate(self.T):
            dV[:, s], g = net.forward_vjp(tapes[s], dW[:, s * p:(s + 1) * p])
            grads.append(g)
        return dV, grads

    def apply_raw(self, g, x):
        """The unconjugated action; ``g`` may be one element or one per row."""
        X, single = self._batch(x)
        g = self._elements(g, X.shape[0])
        U, _ = self._decode(X)
        W, _ = self._encode(np.take_along_axis(U, self._src[g][:, :, None], axis=1))
        return W[0] if single else W

    def apply(self, g, x, rows=None):
        """``H(raw_g(H^{-1}(x)))``; ``g`` may be one element or one per row.

        With ``rows`` given, ``x`` holds distinct inputs and output row ``i``
        is computed from ``x[rows[i]]``; the decoding half then runs once per
        distinct input.
        """
        X, single = self._batch(x)
        Y = self.apply_tape(g, X, rows)[0]
        return Y[0] if single and rows is None else Y

    __call__ = apply

    def apply_tape(self, g, X, rows=None):
        n = X.shape[0] if rows is None else len(rows)
        g = self._elements(g, n)
        Z, tinv = self.H.inverse_tape(X)
        U, dec = self._decode(Z)
        src = self._src[g]
        if rows is None:
            V = np.take_along_axis(U, src[:, :, None], axis=1)
        else:
            rows = np.asarray(rows, dtype=np.int64)
            V = U[rows[:, None], src]
        W, enc = self._encode(V)
        Y, tfwd = self.H.forward_tape(W)
        return Y, (tinv, dec, src, rows, U.shape[0], enc, tfwd)

    def apply_vjp(self, tape, dY):
        """Pull an output cotangent back; returns ``(dX, grads aligned with params)``.

        ``dX`` has one row per input row of :meth:`apply_tape`.
        """
        tinv, dec, src, rows, n_in, enc, tfwd = tape
        dW, gh_fwd = self.H.forward_vjp(tfwd, dY)
        dV, g_enc = self._encode_vjp(enc, dW)
        if rows is None:
            dU = np.empty_like(dV)
            np.put_along_axis(dU, src[:, :, None], dV, axis=1)
        else:
            dU = np.zeros((n_in,) + dV.shape[1:])
            np.add.at(dU, (rows[:, None], src), dV)
        dZ, g_dec = self._decode_vjp(dec, dU)
        dX, gh_inv = self.H.inverse_vjp(tinv, dZ)
        grads = []
        for ge, gd in zip(g_enc, g_dec):
            grads += [a + b for a, b in zip(ge, gd)]
        return dX, grads + [a + b for a, b in zip(gh_fwd, gh_inv)]

    def with_action(self, action: FiniteGAction) -> "NeuralGroupAction":
        """Same nets, different slot wiring (used for negative controls in tests)."""
        new = object.__new__(NeuralGroupAction)
        new.__dict__.update(self.__dict__)
        new.action = action
        new._src = action.preimage_table()
        return new

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "action": self.action.to_dict(), "p": self.p,
                "T": [net.to_dict() for net in self.T], "H": self.H.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "NeuralGroupAction":
        action = FiniteGAction.from_dict(d["action"])
        return cls(action, d["p"], [InvertibleNet.from_dict(t) for t in d["T"]],
                   InvertibleNet.from_dict(d["H"]))


def build_action(group_or_action, p: int, seed: int = 0, t_layers: int = 1, h_layers: int = 3,
                 hidden=(64, 64), zero_last: bool = True) -> NeuralGroupAction:
    """Random neural group action with coupling-only slot nets and conjugator.

    ``group_or_action`` is a builtin group name, a ``FiniteGroup`` (acting on
    itself by left multiplication) or a ``FiniteGAction``.  With the default
    ``zero_last`` every conditioner starts at zero, so every net starts as a
    permutation and the action starts as a pure slot shuffle.
    """
    if isinstance(group_or_action, str):
        group_or_action = builtin_group(group_or_action)
    action = (group_or_action if isinstance(group_or_action, FiniteGAction)
              else left_multiplication_action(group_or_action))
    rng = np.random.default_rng(seed)
    T = [build_net(p, t_layers, rng, hidden, zero_last=zero_last) for _ in range(action.set_size)]
    H = build_net(p * action.set_size, h_layers, rng, hidden, zero_last=zero_last)
    return NeuralGroupAction(action, p, T, H)


@dataclass
class PairResidual:
    g: int
    h: int
    max: float
    mean: float


@dataclass
class LawReport:
    tol: float
    num_samples: int
    identity_max: float
    identity_mean: float
    pairs: list[PairResidual]
    max_scaled: float
    passed: bool

    @property
    def max_residual(self) -> float:
        return max([self.identity_max] + [r.max for r in self.pairs])

    def to_dict(self) -> dict:
        return {"passed": self.passed, "tol": self.tol, "num_samples": self.num_samples,
                "max_residual": self.max_residual, "max_scaled_residual": self.max_scaled,
                "identity": {"max": self.identity_max, "mean": self.identity_mean},
                "pairs": [vars(r) for r in self.pairs]}


def verify_group_laws(A: NeuralGroupAction, num_samples: int = 100, tol: float = 1e-9,
                      seed: int = 0) -> LawReport:
    """Check identity and composition laws on Gaussian inputs.

    Residuals are sup-norm differences.  Pass means every residual divided by
    ``1 + |x|_inf`` is at most ``tol``.
    """
    if num_samples < 1 or tol <= 0:
        raise ValueError("need num_samples >= 1 and tol > 0")
    G = A.group
    n = G.order
    X = np.random.default_rng(seed).standard_normal((num_samples, A.dim))
    scale = 1.0 + np.abs(X).max(axis=1)

    id_res = np.abs(A.apply(G.identity, X) - X).max(axis=1)
    worst = (id_res / scale).max()

    # one big batch: rows ordered (g, h, sample)
    gs = np.repeat(np.arange(n), n * num_samples)
    hs = np.tile(np.repeat(np.arange(n), num_samples), n)
    rows = np.tile(np.arange(num_samples), n * n)
    ghs = G.table[gs, hs]
    lhs = A.apply(ghs, X, rows)
    rhs = A.apply(gs, A.apply(hs, X, rows))
    res = np.abs(lhs - rhs).max(axis=1).reshape(n, n, num_samples)
    worst = max(worst, (res / scale[None, None, :]).max())
    pairs = [PairResidual(g, h, float(res[g, h].max()), float(res[g, h].mean()))
             for g in range(n) for h in range(n)]
    return LawReport(tol, num_samples, float(id_res.max()), float(id_res.mean()), pairs,
                     float(worst), bool(worst <= tol))


@dataclass
class VolumeReport:
    tol: float
    fd_step: float
    deviations: list[list[float]]  # [g][sample] of ||det J| - 1|
    passed: bool

    @property
    def max_deviation(self) -> float:
        return max(max(row) for row in self.deviations)

    def to_dict(self):
        return {"passed": self.passed, "tol": self.tol, "fd_step": self.fd_step,
                "max_deviation": self.max_deviation, "deviations": self.deviations}


MAX_VOLUME_DIM = 32


def verify_volume(A: NeuralGroupAction, num_samples: int = 20, fd_step: float = 1e-5,
                  tol: float = 1e-6, seed: int = 0) -> VolumeReport:
    """Finite-difference ``||det J_g(x)| - 1|`` for every element and sample."""
    if A.dim > MAX_VOLUME_DIM:
        raise DimensionTooLarge(f"p*|S| = {A.dim} exceeds {MAX_VOLUME_DIM} for finite-difference determinants")
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    X = np.random.default_rng(seed).standard_normal((num_samples, A.dim))
    devs = []
    for g in range(A.group.order):
        row = []
        for x in X:
            J = numeric_jacobian(lambda P: A.apply(g, P), x, fd_step, batched=True)
            row.append(float(abs(abs(np.linalg.det(J)) - 1.0)))
        devs.append(row)
    worst = max(max(r) for r in devs)
    return VolumeReport(tol, fd_step, devs, bool(worst <= tol))


@dataclass
class GenerativeAction:
    """A neural group action on ``(phi, pi)`` with ``pi ~ N(0, I_m)`` auxiliary noise."""

    base: NeuralGroupAction
    n: int
    m: int = field(default=0)

    def __post_init__(self):
        if self.m == 0:
            self.m = self.base.dim - self.n
        if self.n < 1 or self.m < 1 or self.n + self.m != self.base.dim:
            raise DimensionMismatch(f"need n, m >= 1 with n + m = {self.base.dim}, "
                                    f"got n={self.n}, m={self.m}")


def generative_transition(GA: GenerativeAction, g: int, phi, seed) -> np.ndarray:
    """Sample auxiliary noise, act with ``g`` on ``(phi, pi)``, return the new ``phi``."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (GA.n,):
        raise DimensionMismatch(f"phi must have length {GA.n}, got shape {phi.shape}")
    aux = np.random.default_rng(seed).standard_normal(GA.m)
    return GA.base.apply(g, np.concatenate([phi, aux]))[:GA.n]
