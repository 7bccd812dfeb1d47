"""Sparse multivariate polynomials and polynomial matrices.

A polynomial is a map from exponent multi-indices to real coefficients.
Coefficients are binary64 floats in the numeric case, but any object
supporting ``+`` and ``*`` (e.g. cvxpy scalar expressions) is accepted so
the same algebra drives both plant models and semidefinite program
assembly.  Everything is immutable after construction and safe to share.

Monomials are ordered graded-lexicographically throughout the library:
lower total degree first, and within one degree the variable with the
lowest index dominates (x1^2 before x1*x2 before x2^2).  All selector
matrices built downstream depend on this order being fixed.
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Monomial",
    "Polynomial",
    "PolyMatrix",
    "enumerate_monomials",
    "jacobian",
    "DimensionError",
]


class DimensionError(ValueError):
    """Raised when ambient dimensions of polynomial objects disagree."""


def _is_number(c) -> bool:
    return isinstance(c, numbers.Real) or isinstance(c, (np.floating, np.integer))


@dataclass(frozen=True)
class Monomial:
    """A multi-index alpha, representing x^alpha = x1^a1 * ... * xn^an."""

    exps: tuple[int, ...]

    def __post_init__(self):
        if any(e < 0 for e in self.exps):
            raise ValueError(f"negative exponent in {self.exps}")

    @property
    def n_vars(self) -> int:
        return len(self.exps)

    @property
    def degree(self) -> int:
        return sum(self.exps)

    def factorial(self) -> int:
        """alpha! = a1! * ... * an!"""
        out = 1
        for e in self.exps:
            out *= math.factorial(e)
        return out

    def grlex_key(self):
        return (self.degree, tuple(-e for e in self.exps))

    def __mul__(self, other: "Monomial") -> "Monomial":
        if len(self.exps) != len(other.exps):
            raise DimensionError("monomial dimension mismatch")
        return Monomial(tuple(a + b for a, b in zip(self.exps, other.exps)))

    def evaluate(self, x: Sequence[float]) -> float:
        if len(x) != len(self.exps):
            raise DimensionError(f"point has dim {len(x)}, monomial has {len(self.exps)}")
        v = 1.0
        for xi, e in zip(x, self.exps):
            if e:
                v *= xi**e
        return v

    def __repr__(self):
        if self.degree == 0:
            return "1"
        return "*".join(f"x{i + 1}" + (f"^{e}" if e > 1 else "") for i, e in enumerate(self.exps) if e)


def enumerate_monomials(n: int, d_min: int, d_max: int) -> list[Monomial]:
    """All monomials in n variables with d_min <= |alpha| <= d_max, grlex order.

    combinations_with_replacement over variable indices yields, within each
    degree, exactly the graded-lexicographic order fixed by this library.
    """
    if not (0 <= d_min <= d_max):
        raise ValueError(f"need 0 <= d_min <= d_max, got ({d_min}, {d_max})")
    if n < 1:
        raise ValueError("dimension must be >= 1")
    out = []
    for d in range(d_min, d_max + 1):
        for combo in combinations_with_replacement(range(n), d):
            exps = [0] * n
            for idx in combo:
                exps[idx] += 1
            out.append(Monomial(tuple(exps)))
    return out


class Polynomial:
    """Sparse polynomial: dict from Monomial to coefficient.

    Stored zero coefficients are dropped (only testable for plain numbers;
    symbolic coefficients are always kept).
    """

    __slots__ = ("n_vars", "terms")

    def __init__(self, n_vars: int, terms: dict[Monomial, object] | None = None):
        self.n_vars = n_vars
        clean: dict[Monomial, object] = {}
        if terms:
            for m, c in terms.items():
                if m.n_vars != n_vars:
                    raise DimensionError(f"monomial {m} has dim {m.n_vars}, polynomial has {n_vars}")
                if _is_number(c):
                    c = float(c)
                    if c == 0.0:
                        continue
                if m in clean:
                    clean[m] = clean[m] + c
                else:
                    clean[m] = c
        self.terms = clean

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, n_vars: int) -> "Polynomial":
        return cls(n_vars, {})

    @classmethod
    def constant(cls, n_vars: int, c) -> "Polynomial":
        return cls(n_vars, {Monomial((0,) * n_vars): c})

    @classmethod
    def variable(cls, n_vars: int, i: int) -> "Polynomial":
        """The polynomial x_{i+1} (zero-based index i)."""
        if not 0 <= i < n_vars:
            raise DimensionError(f"variable index {i} out of range for dim {n_vars}")
        e = [0] * n_vars
        e[i] = 1
        return cls(n_vars, {Monomial(tuple(e)): 1.0})

    @classmethod
    def from_monomial(cls, m: Monomial, c=1.0) -> "Polynomial":
        return cls(m.n_vars, {m: c})

    # -- queries -----------------------------------------------------------

    @property
    def degree(self) -> int:
        """Max |alpha| over stored terms; 0 for the zero polynomial."""
        if not self.terms:
            return 0
        return max(m.degree for m in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def is_numeric(self) -> bool:
        return all(_is_number(c) for c in self.terms.values())

    def coefficient(self, m: Monomial):
        return self.terms.get(m, 0.0)

    def monomials(self) -> list[Monomial]:
        return sorted(self.terms.keys(), key=Monomial.grlex_key)

    # -- arithmetic ---------------------------------------------------------

    def _check_dim(self, other: "Polynomial"):
        if self.n_vars != other.n_vars:
            raise DimensionError(f"dimension mismatch: {self.n_vars} vs {other.n_vars}")

    def __add__(self, other):
        if _is_number(other) or not isinstance(other, Polynomial):
            other = Polynomial.constant(self.n_vars, other)
        self._check_dim(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out[m] + c if m in out else c
        return Polynomial(self.n_vars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.n_vars, {m: -1.0 * c if not _is_number(c) else -c for m, c in self.terms.items()})

    def __sub__(self, other):
        if _is_number(other) or not isinstance(other, Polynomial):
            other = Polynomial.constant(self.n_vars, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            if _is_number(other) and float(other) == 0.0:
                return Polynomial.zero(self.n_vars)
            return Polynomial(self.n_vars, {m: c * other for m, c in self.terms.items()})
        self._check_dim(other)
        out: dict[Monomial, object] = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                m = ma * mb
                c = ca * cb
                out[m] = out[m] + c if m in out else c
        return Polynomial(self.n_vars, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative power")
        out = Polynomial.constant(self.n_vars, 1.0)
        for _ in range(k):
            out = out * self
        return out

    def diff(self, i: int) -> "Polynomial":
        """Partial derivative with respect to x_{i+1}."""
        out: dict[Monomial, object] = {}
        for m, c in self.terms.items():
            e = m.exps[i]
            if e == 0:
                continue
            ne = list(m.exps)
            ne[i] = e - 1
            nm = Monomial(tuple(ne))
            nc = c * float(e)
            out[nm] = out[nm] + nc if nm in out else nc
        return Polynomial(self.n_vars, out)

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, x: Sequence[float]):
        """Exact evaluation at a point. Returns a float for numeric polynomials."""
        if len(x) != self.n_vars:
            raise DimensionError(f"point has dim {len(x)}, polynomial has {self.n_vars}")
        acc = None
        for m, c in self.terms.items():
            t = c * m.evaluate(x)
            acc = t if acc is None else acc + t
        return 0.0 if acc is None else acc

    def __call__(self, x):
        return self.evaluate(x)

    def compiled(self):
        """Vectorized evaluator for numeric polynomials.

        Returns f with f(X) accepting X of shape (n_vars,) or (N, n_vars).
        """
        if not self.is_numeric():
            raise TypeError("cannot compile a polynomial with symbolic coefficients")
        if not self.terms:
            return lambda X: np.zeros(np.atleast_2d(X).shape[0]) if np.ndim(X) > 1 else 0.0
        exps = np.array([m.exps for m in self.terms], dtype=float)
        coefs = np.array([float(c) for c in self.terms.values()])

        def f(X):
            X = np.asarray(X, dtype=float)
            single = X.ndim == 1
            Xm = X[None, :] if single else X
            vals = np.prod(Xm[:, None, :] ** exps[None, :, :], axis=2) @ coefs
            return float(vals[0]) if single else vals

        return f

    def value(self) -> "Polynomial":
        """Resolve symbolic coefficients to their solved numeric values."""
        out = {}
        for m, c in self.terms.items():
            if _is_number(c):
                out[m] = float(c)
            else:
                out[m] = float(np.asarray(c.value).reshape(()))
        return Polynomial(self.n_vars, out)

    # -- comparison / repr --------------------------------------------------

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.n_vars == other.n_vars and self.terms == other.terms

    def allclose(self, other: "Polynomial", atol=1e-12, rtol=1e-9) -> bool:
        self._check_dim(other)
        keys = set(self.terms) | set(other.terms)
        for m in keys:
            a = float(self.terms.get(m, 0.0))
            b = float(other.terms.get(m, 0.0))
            if abs(a - b) > atol + rtol * max(abs(a), abs(b)):
                return False
        return True

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for m in self.monomials():
            c = self.terms[m]
            cs = f"{c:g}" if _is_number(c) else "<expr>"
            parts.append(cs if m.degree == 0 else f"{cs}*{m!r}")
        return " + ".join(parts)


class PolyMatrix:
    """Dense matrix of Polynomial entries sharing one ambient dimension."""

    __slots__ = ("rows", "cols", "n_vars", "entries")

    def __init__(self, entries: Sequence[Sequence[Polynomial]], n_vars: int | None = None):
        entries = [list(r) for r in entries]
        if not entries or not entries[0]:
            if n_vars is None:
                raise DimensionError("empty PolyMatrix needs explicit n_vars")
            self.rows = len(entries)
            self.cols = 0
            self.n_vars = n_vars
            self.entries = entries
            return
        self.rows = len(entries)
        self.cols = len(entries[0])
        dims = {p.n_vars for row in entries for p in row}
        if len(dims) != 1:
            raise DimensionError(f"entries have mixed dimensions {dims}")
        self.n_vars = dims.pop()
        if n_vars is not None and n_vars != self.n_vars:
            raise DimensionError("declared n_vars disagrees with entries")
        if any(len(r) != self.cols for r in entries):
            raise DimensionError("ragged rows")
        self.entries = entries

    # -- constructors ------------------------------------------------------

    @classmethod
    def zeros(cls, rows: int, cols: int, n_vars: int) -> "PolyMatrix":
        if rows == 0 or cols == 0:
            m = cls.__new__(cls)
            m.rows, m.cols, m.n_vars = rows, cols, n_vars
            m.entries = [[] for _ in range(rows)]
            return m
        z = Polynomial.zero(n_vars)
        return cls([[z] * cols for _ in range(rows)])

    @classmethod
    def identity(cls, n: int, n_vars: int) -> "PolyMatrix":
        m = cls.zeros(n, n, n_vars)
        one = Polynomial.constant(n_vars, 1.0)
        for i in range(n):
            m.entries[i][i] = one
        return m

    @classmethod
    def from_array(cls, a, n_vars: int) -> "PolyMatrix":
        """Lift a numeric 2-D array (or array of cvxpy scalars) to constant polynomials."""
        a = np.asarray(a, dtype=object)
        if a.ndim != 2:
            raise DimensionError("from_array expects a 2-D array")
        if a.shape[0] == 0 or a.shape[1] == 0:
            return cls.zeros(a.shape[0], a.shape[1], n_vars)
        return cls(
            [[e if isinstance(e, Polynomial) else Polynomial.constant(n_vars, e) for e in row] for row in a]
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def __getitem__(self, ij):
        i, j = ij
        return self.entries[i][j]

    def is_numeric(self) -> bool:
        return all(p.is_numeric() for row in self.entries for p in row)

    def degree(self) -> int:
        return max((p.degree for row in self.entries for p in row), default=0)

    # -- algebra -------------------------------------------------------------

    def __add__(self, other: "PolyMatrix") -> "PolyMatrix":
        if self.shape != other.shape:
            raise DimensionError(f"shape mismatch {self.shape} vs {other.shape}")
        return PolyMatrix(
            [[self.entries[i][j] + other.entries[i][j] for j in range(self.cols)] for i in range(self.rows)],
            n_vars=self.n_vars,
        )

    def __sub__(self, other: "PolyMatrix") -> "PolyMatrix":
        return self + (other * -1.0)

    def __mul__(self, scalar) -> "PolyMatrix":
        return PolyMatrix(
            [[self.entries[i][j] * scalar for j in range(self.cols)] for i in range(self.rows)],
            n_vars=self.n_vars,
        )

    __rmul__ = __mul__

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        if self.cols != other.rows:
            raise DimensionError(f"matmul mismatch {self.shape} @ {other.shape}")
        out = PolyMatrix.zeros(self.rows, other.cols, self.n_vars)
        for i in range(self.rows):
            for j in range(other.cols):
                acc = Polynomial.zero(self.n_vars)
                for k in range(self.cols):
                    a = self.entries[i][k]
                    b = other.entries[k][j]
                    if a.is_zero() or b.is_zero():
                        continue
                    acc = acc + a * b
                out.entries[i][j] = acc
        return out

    @property
    def T(self) -> "PolyMatrix":
        out = PolyMatrix.zeros(self.cols, self.rows, self.n_vars)
        for i in range(self.rows):
            for j in range(self.cols):
                out.entries[j][i] = self.entries[i][j]
        return out

    @staticmethod
    def hstack(blocks: Iterable["PolyMatrix"]) -> "PolyMatrix":
        blocks = list(blocks)
        rows = blocks[0].rows
        if any(b.rows != rows for b in blocks):
            raise DimensionError("hstack row mismatch")
        ents = [[p for b in blocks for p in b.entries[i]] for i in range(rows)]
        return PolyMatrix(ents, n_vars=blocks[0].n_vars)

    @staticmethod
    def vstack(blocks: Iterable["PolyMatrix"]) -> "PolyMatrix":
        blocks = list(blocks)
        cols = blocks[0].cols
        if any(b.cols != cols for b in blocks):
            raise DimensionError("vstack col mismatch")
        ents = [row for b in blocks for row in b.entries]
        return PolyMatrix(ents, n_vars=blocks[0].n_vars)

    # -- evaluation ----------------------------------------------------------

    def evaluate(self, x: Sequence[float]) -> np.ndarray:
        out = np.empty(self.shape, dtype=object)
        numeric = True
        for i in range(self.rows):
            for j in range(self.cols):
                v = self.entries[i][j].evaluate(x)
                out[i, j] = v
                numeric = numeric and _is_number(v)
        return out.astype(float) if numeric else out

    def compiled(self):
        """Vectorized evaluator: f(x) -> ndarray of shape (rows, cols)."""
        fns = [[p.compiled() for p in row] for row in self.entries]

        def f(x):
            return np.array([[fn(x) for fn in row] for row in fns], dtype=float).reshape(self.shape)

        return f

    def value(self) -> "PolyMatrix":
        out = PolyMatrix.zeros(self.rows, self.cols, self.n_vars)
        for i in range(self.rows):
            for j in range(self.cols):
                out.entries[i][j] = self.entries[i][j].value()
        return out

    def __repr__(self):
        return f"PolyMatrix({self.rows}x{self.cols}, dim {self.n_vars})"


def jacobian(v: Sequence[Polynomial] | PolyMatrix) -> PolyMatrix:
    """Jacobian of a polynomial vector: entry (i, j) = d v_i / d x_j."""
    if isinstance(v, PolyMatrix):
        if v.cols != 1:
            raise DimensionError("jacobian expects a column vector")
        polys = [v.entries[i][0] for i in range(v.rows)]
    else:
        polys = list(v)
    if not polys:
        raise DimensionError("jacobian of empty vector")
    n = polys[0].n_vars
    return PolyMatrix([[p.diff(j) for j in range(n)] for p in polys], n_vars=n)
