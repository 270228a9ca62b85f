"""Single-qubit states and gates, and the finite gate group the pi-rotations generate."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ClosureTooLarge, DimensionMismatch, NotIsomorphicToExpectedGroup
from .groups import FiniteGroup, builtin_group, make_group

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}

NORM_TOL = 1e-12
MAX_CLOSURE = 64


@dataclass(frozen=True)
class QubitState:
    """``alpha|0> + beta|1>`` stored as ``(re0, im0, re1, im1)``."""

    re0: float
    im0: float
    re1: float
    im1: float

    def __post_init__(self):
        norm2 = self.re0 ** 2 + self.im0 ** 2 + self.re1 ** 2 + self.im1 ** 2
        if abs(norm2 - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized: |alpha|^2 + |beta|^2 = {norm2!r}")

    @classmethod
    def from_amplitudes(cls, alpha: complex, beta: complex) -> "QubitState":
        return cls(float(np.real(alpha)), float(np.imag(alpha)), float(np.real(beta)), float(np.imag(beta)))

    @classmethod
    def from_reals(cls, r) -> "QubitState":
        r = [float(v) for v in r]
        if len(r) != 4:
            raise DimensionMismatch("a qubit state has 4 real components")
        return cls(*r)

    @property
    def alpha(self) -> complex:
        return complex(self.re0, self.im0)

    @property
    def beta(self) -> complex:
        return complex(self.re1, self.im1)

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.alpha, self.beta])

    @property
    def reals(self) -> np.ndarray:
        return np.array([self.re0, self.im0, self.re1, self.im1])


ZERO = QubitState(1.0, 0.0, 0.0, 0.0)
ONE = QubitState(0.0, 0.0, 1.0, 0.0)


@dataclass(frozen=True, eq=False)
class Gate:
    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        U = np.array(self.matrix, dtype=complex)
        if U.shape != (2, 2):
            raise DimensionMismatch("single-qubit gates are 2x2")
        if np.abs(U.conj().T @ U - np.eye(2)).max() > NORM_TOL:
            raise ValueError(f"gate {self.label!r} is not unitary")
        object.__setattr__(self, "matrix", U)

    @property
    def reals(self) -> np.ndarray:
        """Row-major ``(re, im)`` pairs of the four entries."""
        return np.stack([self.matrix.real, self.matrix.imag], axis=-1).ravel()

    def __matmul__(self, other: "Gate") -> "Gate":
        return Gate(self.matrix @ other.matrix, f"{self.label}{other.label}")

    def __call__(self, psi: QubitState) -> QubitState:
        a, b = self.matrix @ psi.vector
        return QubitState.from_amplitudes(a, b)


def rotation_gate(axis: str, angle: float) -> Gate:
    """``R_axis(angle) = exp(-i angle sigma_axis / 2) = cos(a/2) I - i sin(a/2) sigma``."""
    sigma = PAULI[axis.lower()]
    U = np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * sigma
    return Gate(U, f"R{axis.lower()}({angle:g})")


def pi_rotation(axis: str) -> Gate:
    return rotation_gate(axis, np.pi)


@dataclass(frozen=True, eq=False)
class GateGroup:
    gates: tuple[Gate, ...]
    group: FiniteGroup                 # Cayley table from matrix products, gate order
    target: FiniteGroup                # the abstract group the gates were matched to
    isomorphism: tuple[int, ...]       # gate index -> target element index

    def gate_for(self, element: int) -> Gate:
        return self.gates[self.isomorphism.index(element)]


def _find(mats, M, tol):
    for i, A in enumerate(mats):
        if np.abs(A - M).max() <= tol:
            return i
    return -1


def find_isomorphism(source: FiniteGroup, target: FiniteGroup) -> tuple[int, ...] | None:
    """Backtracking search for ``phi`` with ``phi(ab) = phi(a) phi(b)``.

    Identity maps to identity; candidate images are pruned by element order.
    """
    n = source.order
    if target.order != n:
        return None
    src_ord = [source.element_order(a) for a in range(n)]
    tgt_ord = [target.element_order(a) for a in range(n)]
    if sorted(src_ord) != sorted(tgt_ord):
        return None
    phi = [-1] * n
    phi[source.identity] = target.identity
    used = {target.identity}
    order = [a for a in range(n) if a != source.identity]

    def consistent(a):
        for b in range(n):
            if phi[b] < 0:
                continue
            for x, y in ((a, b), (b, a)):
                xy = source.cayley[x][y]
                if phi[xy] >= 0 and phi[xy] != target.cayley[phi[x]][phi[y]]:
                    return False
        return True

    def search(k):
        if k == len(order):
            return True
        a = order[k]
        for c in range(n):
            if c in used or tgt_ord[c] != src_ord[a]:
                continue
            phi[a] = c
            used.add(c)
            if consistent(a) and search(k + 1):
                return True
            used.discard(c)
            phi[a] = -1
        return False

    return tuple(phi) if search(0) else None


def generate_gate_group(generators: Sequence[Gate], tol: float = 1e-9,
                        target: FiniteGroup | None = None) -> GateGroup:
    """Close ``generators`` under multiplication and match the result to ``target``.

    Matrices equal entrywise within ``tol`` are identified.  ``target``
    defaults to builtin Q8.
    """
    target = builtin_group("Q8") if target is None else target
    mats = [np.eye(2, dtype=complex)]
    labels = ["I"]
    frontier = [0]
    while frontier:
        nxt = []
        for i in frontier:
            for gen in generators:
                M = mats[i] @ gen.matrix
                if _find(mats, M, tol) < 0:
                    if len(mats) >= MAX_CLOSURE:
                        raise ClosureTooLarge(f"closure exceeds {MAX_CLOSURE} elements")
                    mats.append(M)
                    labels.append(gen.label if labels[i] == "I" else f"{labels[i]}*{gen.label}")
                    nxt.append(len(mats) - 1)
        frontier = nxt
    n = len(mats)
    table = [[_find(mats, mats[a] @ mats[b], tol) for b in range(n)] for a in range(n)]
    if any(v < 0 for row in table for v in row):
        raise ClosureTooLarge("matrix tolerance too tight: products not identified within the set")
    group = make_group(table, labels)
    iso = find_isomorphism(group, target)
    if iso is None:
        raise NotIsomorphicToExpectedGroup(
            f"generated group of order {n} is not isomorphic to the target of order {target.order}")
    return GateGroup(tuple(Gate(M, l) for M, l in zip(mats, labels)), group, target, iso)


def random_state(seed) -> QubitState:
    """Haar-random state: normalized complex Gaussian 2-vector."""
    v = np.random.default_rng(seed).standard_normal(4)
    return QubitState.from_reals(v / np.linalg.norm(v))


def bloch_coordinates(psi: QubitState) -> tuple[float, float, float]:
    c = np.conj(psi.alpha) * psi.beta
    return (2 * c.real, 2 * c.imag, abs(psi.alpha) ** 2 - abs(psi.beta) ** 2)


def phase_invariant_distance(psi: QubitState, phi: QubitState) -> float:
    """``sqrt(1 - |<psi|phi>|^2)``; zero iff the states differ by a global phase.

    For normalized 2-vectors ``1 - |<psi|phi>|^2 = |psi_0 phi_1 - psi_1 phi_0|^2``,
    which avoids the cancellation of the direct form near zero.
    """
    a, b = psi.vector, phi.vector
    return float(abs(a[0] * b[1] - a[1] * b[0]))


def embed(reals, dim: int, coords: Sequence[int] = (0, 1, 2, 3)) -> np.ndarray:
    """Place state reals at ``coords`` of a zero vector of length ``dim``."""
    reals = np.asarray(reals, dtype=np.float64)
    if reals.shape[-1] != len(coords) or max(coords) >= dim:
        raise DimensionMismatch(f"cannot embed {reals.shape[-1]} reals at {list(coords)} in R^{dim}")
    out = np.zeros(reals.shape[:-1] + (dim,))
    out[..., list(coords)] = reals
    return out


def state_seeds(seed: int, num_states: int):
    return np.random.SeedSequence(seed).spawn(num_states)


def make_dataset(gates: GateGroup, num_states: int, seed: int, dim: int,
                 readout: Sequence[int] = (0, 1, 2, 3)):
    """One sample per (random state, gate): input = embedded state, target = gate applied."""
    from .training import Sample

    if num_states < 1:
        raise ValueError("num_states must be >= 1")
    samples = []
    for ss in state_seeds(seed, num_states):
        psi = random_state(ss)
        x = embed(psi.reals, dim, readout)
        for k, U in enumerate(gates.gates):
            samples.append(Sample(gates.isomorphism[k], x, U(psi).reals))
    return samples


BLOCH_COLUMNS = ["label", "x", "y", "z", "re0", "im0", "re1", "im1"]


def bloch_row(label: str, psi_reals) -> list:
    r = np.asarray(psi_reals, dtype=np.float64)
    a, b = complex(r[0], r[1]), complex(r[2], r[3])
    c = np.conj(a) * b
    return [label, 2 * c.real, 2 * c.imag, abs(a) ** 2 - abs(b) ** 2, *r.tolist()]


def write_bloch_csv(path, rows) -> None:
    """Rows are ``(label, four state reals)``; learned outputs need not be normalized."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(BLOCH_COLUMNS)
        for label, reals in rows:
            w.writerow(bloch_row(label, reals))
