"""Finite groups given by Cayley tables, and their actions on finite sets.

Elements are dense integer indices ``0..n-1``.  ``cayley[g][h]`` is the index
of the product ``g*h``.  Builtin groups always put the identity at index 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AxiomViolation, InvalidAction, UnknownGroup

MAX_ORDER = 256


@dataclass(frozen=True)
class FiniteGroup:
    order: int
    cayley: tuple[tuple[int, ...], ...]
    identity: int
    inverse: tuple[int, ...]
    labels: tuple[str, ...]
    _table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        table = np.array(self.cayley, dtype=np.int64).reshape(self.order, self.order)
        table.setflags(write=False)
        object.__setattr__(self, "_table", table)

    @property
    def table(self) -> np.ndarray:
        """Read-only ``(n, n)`` integer array view of the Cayley table."""
        return self._table

    def mul(self, g: int, h: int) -> int:
        return self.cayley[g][h]

    def inv(self, g: int) -> int:
        return self.inverse[g]

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def element_order(self, g: int) -> int:
        k, x = 1, g
        while x != self.identity:
            x = self.cayley[x][g]
            k += 1
        return k

    def __len__(self):
        return self.order

    def to_dict(self) -> dict:
        return {"order": self.order, "labels": list(self.labels),
                "cayley": [list(row) for row in self.cayley]}

    @classmethod
    def from_dict(cls, d: dict) -> "FiniteGroup":
        return make_group(d["cayley"], d.get("labels"))


def make_group(cayley: Sequence[Sequence[int]], labels: Sequence[str] | None = None) -> FiniteGroup:
    """Validate a Cayley table and derive identity and inverses.

    Raises ``AxiomViolation`` naming the first failing axiom and a witness.
    """
    rows = [list(r) for r in cayley]
    n = len(rows)
    if n == 0:
        raise AxiomViolation("closure", (), "empty Cayley table")
    if n > MAX_ORDER:
        raise ValueError(f"group order {n} exceeds the supported maximum {MAX_ORDER}")
    for g, row in enumerate(rows):
        if len(row) != n:
            raise AxiomViolation("closure", (g,), f"row {g} has length {len(row)}, expected {n}")
        for h, v in enumerate(row):
            if not isinstance(v, (int, np.integer)) or not 0 <= v < n:
                raise AxiomViolation("closure", (g, h), f"cayley[{g}][{h}] = {v!r} not in [0, {n})")
    t = np.array(rows, dtype=np.int64)
    ar = np.arange(n)

    candidates = [e for e in range(n) if (t[e] == ar).all() and (t[:, e] == ar).all()]
    if not candidates:
        raise AxiomViolation("identity", (), "no two-sided identity element")
    e = candidates[0]

    inverse = []
    for g in range(n):
        hs = np.nonzero((t[g] == e) & (t[:, g] == e))[0]
        if len(hs) == 0:
            raise AxiomViolation("inverse", (g,), f"element {g} has no two-sided inverse")
        inverse.append(int(hs[0]))

    for a in range(n):
        left = t[t[a]]            # (a*b)*c over (b, c)
        right = t[a][t]           # a*(b*c) over (b, c)
        bad = np.argwhere(left != right)
        if len(bad):
            b, c = bad[0]
            raise AxiomViolation("associativity", (a, int(b), int(c)),
                                 f"({a}*{b})*{c} != {a}*({b}*{c})")

    if labels is None:
        labels = [str(i) for i in range(n)]
    if len(labels) != n:
        raise ValueError(f"expected {n} labels, got {len(labels)}")
    return FiniteGroup(order=n, cayley=tuple(tuple(int(v) for v in r) for r in rows),
                       identity=e, inverse=tuple(inverse), labels=tuple(str(s) for s in labels))


_Q8_TABLE = [
    [0, 1, 2, 3, 4, 5, 6, 7],
    [1, 0, 3, 2, 5, 4, 7, 6],
    [2, 3, 1, 0, 6, 7, 5, 4],
    [3, 2, 0, 1, 7, 6, 4, 5],
    [4, 5, 7, 6, 1, 0, 2, 3],
    [5, 4, 6, 7, 0, 1, 3, 2],
    [6, 7, 4, 5, 3, 2, 1, 0],
    [7, 6, 5, 4, 2, 3, 0, 1],
]
_Q8_LABELS = ["1", "-1", "i", "-i", "j", "-j", "k", "-k"]


def cyclic_group(n: int) -> FiniteGroup:
    if n < 1:
        raise UnknownGroup(f"Z{n}: cyclic group order must be >= 1")
    table = [[(a + b) % n for b in range(n)] for a in range(n)]
    return make_group(table, [str(a) for a in range(n)])


def builtin_group(name: str) -> FiniteGroup:
    """Return ``Z2``, ``Zn`` (e.g. ``"Z5"``), ``K4`` or ``Q8``."""
    key = name.strip()
    if key == "K4":
        # e, a, b, c with bit-xor multiplication: a^2 = b^2 = c^2 = e, ab = c
        return make_group([[a ^ b for b in range(4)] for a in range(4)], ["e", "a", "b", "c"])
    if key == "Q8":
        return make_group(_Q8_TABLE, _Q8_LABELS)
    if key.startswith("Z") and key[1:].isdigit():
        return cyclic_group(int(key[1:]))
    raise UnknownGroup(f"unknown builtin group {name!r}; expected Z2, Zn, K4 or Q8")


@dataclass(frozen=True)
class FiniteGAction:
    """An action of ``group`` on ``{0, ..., set_size-1}``.

    ``perm[g][s]`` is ``g.s``.  Construction only checks shapes and that each
    row is a bijection; use :func:`validate_action` or :func:`make_action`
    for the action laws.
    """

    group: FiniteGroup
    set_size: int
    perm: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.set_size < 1:
            raise InvalidAction("set_size must be positive")
        if len(self.perm) != self.group.order:
            raise InvalidAction(f"need one permutation per group element ({self.group.order}), "
                                f"got {len(self.perm)}")
        for g, row in enumerate(self.perm):
            if sorted(row) != list(range(self.set_size)):
                raise InvalidAction(f"perm[{g}] is not a permutation of range({self.set_size})")

    def act(self, g: int, s: int) -> int:
        return self.perm[g][s]

    def preimage_table(self) -> np.ndarray:
        """``src[g, s] = g^-1 . s``, the slot whose content lands on ``s``."""
        p = np.array(self.perm, dtype=np.int64)
        src = np.empty_like(p)
        rows = np.arange(p.shape[0])[:, None]
        src[rows, p] = np.arange(self.set_size)[None, :]
        return src

    def to_dict(self) -> dict:
        d = self.group.to_dict()
        d["set_size"] = self.set_size
        d["perm"] = [list(r) for r in self.perm]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FiniteGAction":
        group = FiniteGroup.from_dict(d)
        if "perm" not in d:
            return left_multiplication_action(group)
        return make_action(group, d["perm"])


def left_multiplication_action(group: FiniteGroup) -> FiniteGAction:
    return FiniteGAction(group, group.order, group.cayley)


@dataclass
class ActionReport:
    identity_violations: list[int]
    composition_violations: list[tuple[int, int]]

    @property
    def ok(self) -> bool:
        return not self.identity_violations and not self.composition_violations


def validate_action(action: FiniteGAction) -> ActionReport:
    """Exhaustively check ``perm[e] = id`` and ``perm[gh] = perm[g] o perm[h]``.

    ``identity_violations`` lists points moved by the identity,
    ``composition_violations`` every failing ordered pair ``(g, h)``.
    """
    G = action.group
    p = np.array(action.perm, dtype=np.int64)
    moved = np.nonzero(p[G.identity] != np.arange(action.set_size))[0]
    bad = []
    for g in range(G.order):
        for h in range(G.order):
            if not np.array_equal(p[G.cayley[g][h]], p[g][p[h]]):
                bad.append((g, h))
    return ActionReport([int(s) for s in moved], bad)


def make_action(group: FiniteGroup, perm: Sequence[Sequence[int]]) -> FiniteGAction:
    """Build an action from explicit permutations, raising if it breaks the laws."""
    perm = tuple(tuple(int(v) for v in row) for row in perm)
    if not perm:
        raise InvalidAction("empty permutation table")
    action = FiniteGAction(group, len(perm[0]), perm)
    report = validate_action(action)
    if not report.ok:
        raise InvalidAction(f"not a group action: identity moves {report.identity_violations}, "
                            f"composition fails for pairs {report.composition_violations[:5]}")
    return action
