"""Exact sparse row reduction over the rationals.

Rows are dicts ``column -> Fraction``.  Columns are arbitrary hashable keys
ordered by a user supplied sort key; the pivot of a stored row is its
*smallest* column.  This matches the local-ring convention used by the
division and membership solvers: the leading term of a germ is its lowest
term, and the pivot set of a module is its set of leading exponents.

Every stored row remembers how it was produced from the inserted rows
(``combo``), so a successful reduction yields explicit coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Hashable, Iterable, Mapping

Row = dict


def _axpy(target: dict, src: Mapping, c: Fraction) -> None:
    """``target += c * src`` in place, dropping zeros."""
    for k, v in src.items():
        w = target.get(k, 0) + c * v
        if w:
            target[k] = w
        else:
            target.pop(k, None)


@dataclass
class Reduction:
    remainder: dict
    combo: dict  # label -> coefficient with  vector = sum combo*rows + remainder
    steps: int = 0

    @property
    def is_member(self) -> bool:
        return not self.remainder


class Echelon:
    """Incrementally built echelon basis with pivot = least column.

    ``order`` maps a column key to a sortable value; ties are not allowed
    (the caller must make the order total on the columns in play).
    """

    def __init__(self, order: Callable[[Hashable], Any] | None = None):
        self.order = order or (lambda k: k)
        self.rows: dict[Hashable, tuple[dict, dict]] = {}  # pivot -> (row, combo)
        self.n_inserted = 0

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def pivots(self) -> set:
        return set(self.rows)

    def _lead(self, row: Mapping):
        return min(row, key=self.order)

    def reduce(self, vec: Mapping, full: bool = True) -> Reduction:
        """Eliminate pivot columns from ``vec``.

        With ``full`` every pivot column is cleared (the result has no support
        in the pivot set); otherwise stop once the leading column is free.
        """
        r = {k: Fraction(v) for k, v in vec.items() if v}
        combo: dict = {}
        steps = 0
        done: set = set()
        while True:
            cand = [k for k in r if k in self.rows and k not in done] if full else None
            if full:
                if not cand:
                    break
                k = min(cand, key=self.order)
            else:
                if not r:
                    break
                k = self._lead(r)
                if k not in self.rows:
                    break
            row, rc = self.rows[k]
            c = r[k]
            _axpy(r, row, -c)
            _axpy(combo, rc, c)
            steps += 1
            if full and k in r:  # cannot happen with exact arithmetic
                raise ArithmeticError("pivot column survived elimination")
        return Reduction(r, combo, steps)

    def insert(self, vec: Mapping, label: Hashable | None = None) -> bool:
        """Add a row; return True if it enlarged the span."""
        self.n_inserted += 1
        red = self.reduce(vec, full=False)
        r = red.remainder
        if not r:
            return False
        combo = {kk: -v for kk, v in red.combo.items()}
        if label is not None:
            combo[label] = combo.get(label, 0) + 1
            if not combo[label]:
                del combo[label]
        k = self._lead(r)
        inv = 1 / r[k]
        row = {kk: v * inv for kk, v in r.items()}
        combo = {kk: v * inv for kk, v in combo.items()}
        self.rows[k] = (row, combo)
        return True

    def rank(self) -> int:
        return len(self.rows)


def solve_membership(rows: Iterable[tuple[Hashable, Mapping]], target: Mapping,
                     order: Callable | None = None) -> dict | None:
    """Coefficients ``c`` with ``target = sum c[label] * row`` or None if infeasible."""
    ech = Echelon(order)
    for label, row in rows:
        ech.insert(row, label)
    red = ech.reduce(target)
    if red.remainder:
        return None
    return red.combo


def rank_of(rows: Iterable[Mapping], order: Callable | None = None) -> int:
    ech = Echelon(order)
    for row in rows:
        ech.insert(row)
    return ech.rank()


def replay(rows: Mapping[Hashable, Mapping], combo: Mapping[Hashable, Fraction]) -> dict:
    """``sum combo[label] * rows[label]``."""
    out: dict = {}
    for label, c in combo.items():
        _axpy(out, rows[label], Fraction(c))
    return out
