"""Multiderivative Butcher tableaux built from Hermite-Birkhoff quadrature.

A tableau with ``s`` nodes and ``m`` derivatives integrates

    int_0^{c_l} g(tau) dtau  ~=  sum_d sum_j B[d][l, j] * g^{(d-1)}(c_j)

and is applied to an ODE with ``g^{(d-1)} -> dt**(d-1) * F_d`` so that the
stage increment reads ``sum_d dt**d * sum_j B[d][l, j] * F_d(w_j)``.

Weights are generated in exact rational arithmetic and converted to floats
only when the tableau object is built.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ConditioningError, SingularSystem, UnknownTableau

MAX_CONDITIONS = 12


@dataclass(frozen=True, eq=False)
class MDTableau:
    name: str
    c: np.ndarray  # (s,)
    B: np.ndarray  # (m, s, s); B[d-1] multiplies dt**d * F_d
    b: np.ndarray  # (m, s)
    q: int
    rational: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.c, self.B, self.b):
            arr.flags.writeable = False
        m, s, s2 = self.B.shape
        if s != s2 or self.c.shape != (s,) or self.b.shape != (m, s):
            raise ValueError("inconsistent tableau shapes")
        object.__setattr__(self, "_stiffly_accurate", self._check_stiffly_accurate())

    @property
    def s(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[0]

    def stiffly_accurate(self) -> bool:
        """True when the update weights equal the last stage row."""
        return self._stiffly_accurate

    def _check_stiffly_accurate(self) -> bool:
        if self.rational is not None:
            B, b = self.rational["B"], self.rational["b"]
            return all(b[d] == B[d][-1] for d in range(self.m))
        return bool(np.array_equal(self.b, self.B[:, -1, :]))

    def to_dict(self) -> dict:
        doc = {
            "name": self.name,
            "s": self.s,
            "m": self.m,
            "q": self.q,
            "c": [_fmt(x) for x in self.c],
            "B": [[[_fmt(x) for x in row] for row in Bd] for Bd in self.B],
            "b": [[_fmt(x) for x in bd] for bd in self.b],
        }
        if self.rational is not None:
            r = self.rational
            doc["rational"] = {
                "c": [_rat(x) for x in r["c"]],
                "B": [[[_rat(x) for x in row] for row in Bd] for Bd in r["B"]],
                "b": [[_rat(x) for x in bd] for bd in r["b"]],
            }
        return doc

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict) -> "MDTableau":
        rational = None
        if "rational" in doc:
            r = doc["rational"]
            rational = {
                "c": [Fraction(x) for x in r["c"]],
                "B": [[[Fraction(x) for x in row] for row in Bd] for Bd in r["B"]],
                "b": [[Fraction(x) for x in bd] for bd in r["b"]],
            }
            return _from_rational(doc["name"], rational["c"], rational["B"],
                                  rational["b"], int(doc["q"]))
        return cls(
            name=doc["name"],
            c=np.array(doc["c"], dtype=float),
            B=np.array(doc["B"], dtype=float),
            b=np.array(doc["b"], dtype=float),
            q=int(doc["q"]),
            rational=rational,
        )

    @classmethod
    def from_json(cls, text: str) -> "MDTableau":
        return cls.from_dict(json.loads(text))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _rat(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def _as_fraction(x) -> Fraction:
    if isinstance(x, float):
        f = Fraction(x).limit_denominator(10**6)
        return f if float(f) == x else Fraction(x)
    return Fraction(x)


def _from_rational(name, c, B, b, q) -> MDTableau:
    return MDTableau(
        name=name,
        c=np.array([float(x) for x in c]),
        B=np.array([[[float(x) for x in row] for row in Bd] for Bd in B]),
        b=np.array([[float(x) for x in bd] for bd in b]),
        q=q,
        rational={"c": list(c), "B": [[list(r) for r in Bd] for Bd in B],
                  "b": [list(bd) for bd in b]},
    )


def _solve_exact(A: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    """Gauss-Jordan elimination over the rationals."""
    n = len(rhs)
    M = [row[:] + [r] for row, r in zip(A, rhs)]
    for col in range(n):
        piv = next((i for i in range(col, n) if M[i][col] != 0), None)
        if piv is None:
            raise SingularSystem("Hermite-Birkhoff system is singular (repeated nodes?)")
        M[col], M[piv] = M[piv], M[col]
        p = M[col][col]
        M[col] = [v / p for v in M[col]]
        for i in range(n):
            if i != col and M[i][col] != 0:
                f = M[i][col]
                M[i] = [a - f * b for a, b in zip(M[i], M[col])]
    return [M[i][n] for i in range(n)]


def _hermite_matrix(nodes: Sequence[Fraction], m: int) -> list[list[Fraction]]:
    # row k: monomial tau^k; column (d, j): (d-1)-th derivative evaluated at node j
    s = len(nodes)
    n = m * s
    A = []
    for k in range(n):
        row = []
        for d in range(1, m + 1):
            order = d - 1
            for cj in nodes:
                if k < order:
                    row.append(Fraction(0))
                else:
                    coef = math.factorial(k) // math.factorial(k - order)
                    row.append(coef * cj ** (k - order))
        A.append(row)
    return A


def _hermite_weights(A, upper: Fraction, m: int, s: int) -> list[list[Fraction]]:
    n = m * s
    rhs = [upper ** (k + 1) / (k + 1) for k in range(n)]
    x = _solve_exact(A, rhs)
    return [x[d * s:(d + 1) * s] for d in range(m)]


def hermite_birkhoff_tableau(nodes: Sequence, m: int, name: str | None = None) -> MDTableau:
    """Tableau whose rows are the Hermite-Birkhoff quadratures on ``nodes``.

    Each row integrates polynomials of degree ``m*s - 1`` exactly.  Nodes may
    be given as ints, strings like ``"1/3"``, Fractions or floats (floats are
    snapped to the nearest rational with denominator at most 10**6 when that
    reproduces them exactly).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    c = [_as_fraction(x) for x in nodes]
    s = len(c)
    if s == 0:
        raise ValueError("need at least one node")
    if any(x < 0 or x > 1 for x in c):
        raise ValueError("nodes must lie in [0, 1]")
    if len(set(c)) != s:
        raise SingularSystem("nodes must be distinct")
    if any(b <= a for a, b in zip(c, c[1:])):
        raise ValueError("nodes must be sorted ascending")
    if m * s > MAX_CONDITIONS:
        raise ConditioningError(f"m*s = {m * s} exceeds {MAX_CONDITIONS}")

    A = _hermite_matrix(c, m)
    rows = [_hermite_weights(A, cl, m, s) for cl in c]
    # B[d][l][j]
    B = [[rows[l][d] for l in range(s)] for d in range(m)]
    if c[-1] == 1:
        b = [list(B[d][-1]) for d in range(m)]
    else:
        b = _hermite_weights(A, Fraction(1), m, s)
    if name is None:
        name = f"HB-{m}d-{s}s"
    return _from_rational(name, c, B, b, m * s)


BUILTINS = {
    "HB-I2DRK6-3s": (["0", "1/2", "1"], 2),
    "HB-I2DRK8-4s": (["0", "1/3", "2/3", "1"], 2),
    "HB-I3DRK6-2s": (["0", "1"], 3),
}


def builtin(name: str) -> MDTableau:
    try:
        nodes, m = BUILTINS[name]
    except KeyError:
        raise UnknownTableau(f"unknown tableau {name!r}; choose from {sorted(BUILTINS)}") from None
    return hermite_birkhoff_tableau(nodes, m, name=name)


def _row_exact_to(weights, c, upper, max_deg: int, tol: float | None) -> int:
    """Number of leading monomial degrees integrated exactly by one row.

    With ``tol=None`` the arguments are Fractions and the check is exact;
    otherwise the float residual is compared against ``tol`` times the size
    of the summed terms, since large weights of mixed sign cancel.
    """
    m = len(weights)
    for k in range(max_deg + 1):
        approx = 0
        scale = 0.0
        for d in range(1, m + 1):
            order = d - 1
            if k < order:
                continue
            coef = math.factorial(k) // math.factorial(k - order)
            for w, x in zip(weights[d - 1], c):
                term = coef * w * x ** (k - order)
                approx += term
                scale += abs(float(term))
        exact = upper ** (k + 1) / (k + 1) if tol is not None else Fraction(upper) ** (k + 1) / (k + 1)
        if tol is None:
            if approx != exact:
                return k
        elif abs(approx - exact) > tol * (1.0 + scale):
            return k
    return max_deg + 1


def verify_quadrature_order(t: MDTableau, tol: float = 1e-12, max_deg: int = 40) -> int:
    """Largest k such that every row (and the update) is exact up to degree k-1.

    Uses the exact rational weights when the tableau carries them.
    """
    if t.rational is not None:
        r = t.rational
        c, B, b = r["c"], r["B"], r["b"]
        rows = [([Bd[l] for Bd in B], c[l]) for l in range(t.s)] + [(b, 1)]
        return min(_row_exact_to(w, c, up, max_deg, None) for w, up in rows)
    rows = [(t.B[:, l, :], float(t.c[l])) for l in range(t.s)] + [(t.b, 1.0)]
    return min(_row_exact_to(w, t.c, up, max_deg, tol) for w, up in rows)
