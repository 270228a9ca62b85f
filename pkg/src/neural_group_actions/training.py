"""Supervised training of a neural group action with Adam.

The loss is a plain sum of squared errors over the readout coordinates of
``apply(g, input)``; there is no averaging over samples.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .action import NeuralGroupAction, verify_group_laws
from .errors import DimensionMismatch, NonFiniteLoss

log = logging.getLogger(__name__)

DIVERGENCE_FLOOR = 1e-8


@dataclass
class Sample:
    g: int
    input: np.ndarray
    target: np.ndarray


@dataclass
class Batch:
    """Column-stacked samples."""

    g: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray
    _distinct: tuple | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Batch":
        if not samples:
            raise ValueError("empty batch")
        return cls(np.array([s.g for s in samples], dtype=np.int64),
                   np.stack([np.asarray(s.input, dtype=np.float64) for s in samples]),
                   np.stack([np.asarray(s.target, dtype=np.float64) for s in samples]))

    def __len__(self):
        return len(self.g)

    def take(self, idx) -> "Batch":
        return Batch(self.g[idx], self.inputs[idx], self.targets[idx])

    def distinct(self):
        """``(unique input rows, row index per sample)``, computed once."""
        if self._distinct is None:
            uniq, rows = np.unique(self.inputs, axis=0, return_inverse=True)
            self._distinct = (uniq, rows.reshape(-1))
        return self._distinct


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int | None = None       # None: full batch
    max_epochs: int = 1000
    target_loss: float = 0.0
    seed: int = 0
    readout: tuple[int, ...] = (0, 1, 2, 3)
    law_check_samples: int = 10
    law_tol: float = 1e-9
    divergence_factor: float = 1e6
    keep_best: bool = True              # return the iterate with the lowest training loss

    def validate(self, dim: int | None = None):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.readout:
            raise ValueError("readout mask must be nonempty")
        if dim is not None and not all(0 <= c < dim for c in self.readout):
            raise ValueError(f"readout coordinates must lie in [0, {dim})")


@dataclass
class LossValue:
    total: float
    rms: float

    def __float__(self):
        return self.total


def _as_batch(data) -> Batch:
    return data if isinstance(data, Batch) else Batch.from_samples(list(data))


def _check(A, batch, mask):
    if batch.inputs.shape[1] != A.dim:
        raise DimensionMismatch(f"inputs have length {batch.inputs.shape[1]}, action has {A.dim}")
    if batch.targets.shape[1] != len(mask):
        raise DimensionMismatch(f"targets have length {batch.targets.shape[1]}, mask has {len(mask)}")


def loss(A: NeuralGroupAction, batch, mask: Sequence[int]) -> LossValue:
    """Summed squared error on the masked output coordinates, plus per-coordinate RMS."""
    batch = _as_batch(batch)
    mask = list(mask)
    _check(A, batch, mask)
    X, rows = batch.distinct()
    r = A.apply(batch.g, X, rows)[:, mask] - batch.targets
    total = float(np.sum(r * r))
    return LossValue(total, math.sqrt(total / r.size))


def loss_and_grad(A: NeuralGroupAction, batch, mask: Sequence[int]):
    """Return ``(summed loss, gradients aligned with A.params)``."""
    batch = _as_batch(batch)
    mask = list(mask)
    _check(A, batch, mask)
    X, rows = batch.distinct()
    Y, tape = A.apply_tape(batch.g, X, rows)
    r = Y[:, mask] - batch.targets
    dY = np.zeros_like(Y)
    dY[:, mask] = 2.0 * r
    _, grads = A.apply_vjp(tape, dY)
    return float(np.sum(r * r)), grads


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros(cls, params) -> "AdamState":
        return cls(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])

    def to_dict(self):
        return {"step": self.step, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    b1, b2 = config.beta1, config.beta2
    t = state.step + 1
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.epsilon)
    state.step = t
    return params, state


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float | None
    max_law_residual: float | None


@dataclass
class TrainResult:
    action: NeuralGroupAction
    history: list[float]
    records: list[EpochRecord] = field(default_factory=list)
    converged: bool = False
    optimizer: AdamState | None = None

    def __iter__(self):
        # allows ``trained, history = train(...)``
        return iter((self.action, self.history))


def train(A: NeuralGroupAction, dataset, config: TrainConfig, test=None,
          callback: Callable[[int, NeuralGroupAction, AdamState, EpochRecord], None] | None = None
          ) -> TrainResult:
    """Minibatch Adam on a copy of ``A`` until ``target_loss`` or ``max_epochs``.

    ``history[k]`` is the total training loss at the start of epoch ``k``;
    training stops as soon as it is at or below ``target_loss``.  Shuffling
    derives from ``config.seed`` only.  With ``keep_best`` the returned action
    carries the parameters with the lowest training loss seen, which guards
    against ending on one of Adam's transient loss spikes.
    """
    data = _as_batch(dataset)
    test = _as_batch(test) if test is not None and len(test) else None
    config.validate(A.dim)
    mask = list(config.readout)
    A = copy.deepcopy(A)
    params = A.params
    state = AdamState.zeros(params)
    rng = np.random.default_rng(config.seed)
    N = len(data)
    bs = N if config.batch_size is None else min(config.batch_size, N)
    history: list[float] = []
    records: list[EpochRecord] = []
    initial = None
    best = (math.inf, None)

    def guard(value):
        # the floor keeps a near-zero initial loss from flagging roundoff as divergence
        if not math.isfinite(value) or (
                initial is not None and value > config.divergence_factor * max(initial, DIVERGENCE_FLOOR)):
            raise NonFiniteLoss(f"training diverged at epoch {len(history)}: loss {value!r}",
                                history + [value])

    for epoch in range(config.max_epochs):
        if bs == N:
            train_loss, grads = loss_and_grad(A, data, mask)
        else:
            train_loss, grads = float(loss(A, data, mask)), None
        guard(train_loss)
        if initial is None:
            initial = train_loss
        history.append(train_loss)
        rec = EpochRecord(epoch, train_loss,
                          float(loss(A, test, mask)) if test is not None else None,
                          _law_residual(A, config, epoch))
        records.append(rec)
        log.debug("epoch %d train %.3e test %s", epoch, train_loss, rec.test_loss)
        if callback is not None:
            callback(epoch, A, state, rec)
        if train_loss <= config.target_loss:
            return TrainResult(A, history, records, True, state)
        if config.keep_best and train_loss < best[0]:
            best = (train_loss, [p.copy() for p in params])
        if grads is not None:
            adam_step(params, grads, state, config)
            continue
        order = rng.permutation(N)
        for start in range(0, N, bs):
            bl, grads = loss_and_grad(A, data.take(order[start:start + bs]), mask)
            guard(bl)
            adam_step(params, grads, state, config)
    if config.keep_best and best[1] is not None:
        final = float(loss(A, data, mask))
        if not final <= best[0]:
            for p, b in zip(params, best[1]):
                p[...] = b
        elif final <= config.target_loss:
            return TrainResult(A, history, records, True, state)
    return TrainResult(A, history, records, False, state)


def _law_residual(A, config, epoch):
    if config.law_check_samples <= 0:
        return None
    rep = verify_group_laws(A, config.law_check_samples, config.law_tol, seed=config.seed + epoch)
    return rep.max_scaled


def split_dataset(samples: Sequence, test_fraction: float, seed: int):
    """Seeded shuffle then split into ``(train, test)``."""
    idx = np.random.default_rng(seed).permutation(len(samples))
    n_test = int(round(test_fraction * len(samples)))
    test = [samples[i] for i in idx[:n_test]]
    train_ = [samples[i] for i in idx[n_test:]]
    return train_, test
