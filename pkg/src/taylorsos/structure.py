"""Row-wise truncated-series representation of an input-affine system.

The unknown drift f is written per row as a degree-k series with unknown
coefficients plus a remainder term whose magnitude is controlled by known
bounds on the (k+1)-st partial derivatives.  This module builds all the
bookkeeping that the inference and synthesis stages consume:

- per-row bases ``z_i`` (monomials scaled by 1/alpha!) and input maps ``G_i``
- the stacked coefficient vector layout ``Theta`` with selectors ``S_i``
- a global monomial vector ``z`` with ``z(0) = 0`` and ``x = [I 0] z``,
  selectors ``F_i`` (``z_i = F_i z``) and ``Omega`` (``omega = Omega z``)
- the remainder basis ``omega`` (entries x^rho / rho!) and the diagonal
  matrix ``D`` bounding the stacked squared remainder, with rows whose
  derivative bounds vanish for every row pruned so ``D`` stays positive
  definite.

Everything is immutable after construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from taylorsos.poly import DimensionError, Monomial, Polynomial, PolyMatrix, enumerate_monomials

__all__ = ["RowSpec", "TaylorStructure", "build_taylor_structure", "remainder_bounds"]


@dataclass(frozen=True)
class RowSpec:
    """Structural prior knowledge for one row of the dynamics.

    state_vars: indices the row's drift may depend on (None = all).
    max_deg:    degree of the row's series basis (None = k); lower values
                encode knowledge that higher derivatives of this row vanish.
    has_input:  whether the control input enters this row.
    input_deg:  degree bound for the row of the input matrix (0 = constant,
                None = take the build-time default).
    input_vars: indices the input-matrix row may depend on (None = all).
    """

    state_vars: tuple[int, ...] | None = None
    max_deg: int | None = None
    has_input: bool = True
    input_deg: int | None = None
    input_vars: tuple[int, ...] | None = None


def _restricted_monomials(n_x: int, d_min: int, d_max: int, vars_: tuple[int, ...] | None):
    mons = enumerate_monomials(n_x, d_min, d_max)
    if vars_ is None:
        return mons
    allowed = set(vars_)
    return [m for m in mons if all(e == 0 or i in allowed for i, e in enumerate(m.exps))]


@dataclass(frozen=True)
class TaylorStructure:
    n_x: int
    n_u: int
    k: int
    rows: tuple[RowSpec, ...]
    # per-row series bases (unscaled monomials; the 1/alpha! scaling sits in F_i
    # and in the scales arrays so that the coefficient on z_i entry x^a/a! is
    # the a-th partial derivative at the origin)
    z_mons: tuple[tuple[Monomial, ...], ...]
    z_scales: tuple[tuple[float, ...], ...]
    G: tuple[PolyMatrix, ...]  # per-row input maps, shape (n_b_i, n_u)
    # global monomial vector and selectors
    z: tuple[Monomial, ...]
    F: tuple[np.ndarray, ...]
    S: tuple[np.ndarray, ...]
    # remainder data
    omega_mons: tuple[Monomial, ...]
    omega_scales: tuple[float, ...]
    Omega: np.ndarray
    D: np.ndarray  # diagonal entries, strictly positive after pruning
    m_bounds: tuple[dict[tuple[int, ...], float], ...]  # per row: exponent -> M
    kappa: tuple[int, ...]
    prior: "AdditivePrior | None" = None

    # -- dimensions ----------------------------------------------------------

    @property
    def n_z(self) -> int:
        return len(self.z)

    @property
    def n_omega(self) -> int:
        return len(self.omega_mons)

    @property
    def n_theta(self) -> int:
        return sum(self.theta_widths)

    @property
    def theta_widths(self) -> list[int]:
        return [len(self.z_mons[i]) + self.G[i].rows for i in range(self.n_x)]

    def theta_slice(self, i: int) -> slice:
        start = sum(self.theta_widths[:i])
        return slice(start, start + self.theta_widths[i])

    # -- polynomial views ------------------------------------------------------

    def z_vector(self) -> PolyMatrix:
        """Global monomial vector z as a column PolyMatrix."""
        return PolyMatrix([[Polynomial.from_monomial(m)] for m in self.z], n_vars=self.n_x)

    def zi_vector(self, i: int) -> PolyMatrix:
        """Row basis z_i (scaled) as a column PolyMatrix."""
        ents = [
            [Polynomial.from_monomial(m, s)]
            for m, s in zip(self.z_mons[i], self.z_scales[i])
        ]
        if not ents:
            return PolyMatrix.zeros(0, 1, self.n_x)
        return PolyMatrix(ents, n_vars=self.n_x)

    def omega_vector(self) -> PolyMatrix:
        ents = [[Polynomial.from_monomial(m, s)] for m, s in zip(self.omega_mons, self.omega_scales)]
        if not ents:
            return PolyMatrix.zeros(0, 1, self.n_x)
        return PolyMatrix(ents, n_vars=self.n_x)

    # -- numeric evaluation ------------------------------------------------------

    def z_eval(self, x: Sequence[float]) -> np.ndarray:
        return np.array([m.evaluate(x) for m in self.z])

    def regressor(self, x: Sequence[float], u: Sequence[float]) -> np.ndarray:
        """Z(x, u): the n_x-by-n_theta matrix with Z(x,u) Theta = series + input part."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape != (self.n_x,) or u.shape != (self.n_u,):
            raise DimensionError("regressor: dimension mismatch")
        Z = np.zeros((self.n_x, self.n_theta))
        for i in range(self.n_x):
            zi = np.array([s * m.evaluate(x) for m, s in zip(self.z_mons[i], self.z_scales[i])])
            gi = self.G[i].evaluate(x) @ u if self.G[i].rows else np.zeros(0)
            phi = np.concatenate([zi, gi])
            Z[i, :] = phi @ self.S[i]
        return Z

    def row_regressor(self, i: int, x, u) -> np.ndarray:
        """phi_i(x, u) = [z_i(x); G_i(x) u], the regressor of row i alone."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        zi = np.array([s * m.evaluate(x) for m, s in zip(self.z_mons[i], self.z_scales[i])])
        gi = self.G[i].evaluate(x) @ u if self.G[i].rows else np.zeros(0)
        return np.concatenate([zi, gi])

    # -- remainder bounds ---------------------------------------------------------

    def remainder_bounds(self, x: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
        return remainder_bounds(self, x)

    def remainder_bounds_many(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized bounds; X of shape (N, n_x) gives arrays of shape (N, n_x)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        N = X.shape[0]
        r_abs = np.zeros((N, self.n_x))
        r_poly = np.zeros((N, self.n_x))
        for i in range(self.n_x):
            items = [(rho, M) for rho, M in self.m_bounds[i].items() if M > 0]
            if not items:
                continue
            exps = np.array([rho for rho, _ in items], dtype=float)
            w = np.array([M / math.prod(math.factorial(e) for e in rho) for rho, M in items])
            mono = np.prod(X[:, None, :] ** exps[None, :, :], axis=2)
            r_abs[:, i] = (np.abs(mono) @ w) ** 2
            r_poly[:, i] = self.kappa[i] * (mono**2 @ w**2)
        return r_abs, r_poly

    def omega_eval(self, x) -> np.ndarray:
        return np.array([s * m.evaluate(x) for m, s in zip(self.omega_mons, self.omega_scales)])

    # -- serialization --------------------------------------------------------------

    def to_json(self) -> str:
        def poly_matrix(pm: PolyMatrix):
            return {
                "rows": pm.rows,
                "cols": pm.cols,
                "n_vars": pm.n_vars,
                "entries": [
                    [[{"exps": list(m.exps), "coef": c} for m, c in p.terms.items()] for p in row]
                    for row in pm.entries
                ],
            }

        doc = {
            "n_x": self.n_x,
            "n_u": self.n_u,
            "k": self.k,
            "rows": [
                {
                    "state_vars": list(r.state_vars) if r.state_vars is not None else None,
                    "max_deg": r.max_deg,
                    "has_input": r.has_input,
                    "input_deg": r.input_deg,
                    "input_vars": list(r.input_vars) if r.input_vars is not None else None,
                }
                for r in self.rows
            ],
            "z_mons": [[list(m.exps) for m in zm] for zm in self.z_mons],
            "z_scales": [list(zs) for zs in self.z_scales],
            "G": [poly_matrix(g) for g in self.G],
            "z": [list(m.exps) for m in self.z],
            "F": [f.tolist() for f in self.F],
            "S": [s.tolist() for s in self.S],
            "omega_mons": [list(m.exps) for m in self.omega_mons],
            "omega_scales": list(self.omega_scales),
            "Omega": self.Omega.tolist(),
            "D": self.D.tolist(),
            "m_bounds": [[[list(rho), M] for rho, M in mb.items()] for mb in self.m_bounds],
            "kappa": list(self.kappa),
        }
        return json.dumps(doc, indent=1)

    @staticmethod
    def from_json(text: str) -> "TaylorStructure":
        doc = json.loads(text)
        n_x = doc["n_x"]

        def poly_matrix(d):
            if d["rows"] == 0 or d["cols"] == 0:
                return PolyMatrix.zeros(d["rows"], d["cols"], d["n_vars"])
            ents = [
                [
                    Polynomial(d["n_vars"], {Monomial(tuple(t["exps"])): t["coef"] for t in cell})
                    for cell in row
                ]
                for row in d["entries"]
            ]
            return PolyMatrix(ents, n_vars=d["n_vars"])

        return TaylorStructure(
            n_x=n_x,
            n_u=doc["n_u"],
            k=doc["k"],
            rows=tuple(
                RowSpec(
                    state_vars=tuple(r["state_vars"]) if r["state_vars"] is not None else None,
                    max_deg=r["max_deg"],
                    has_input=r["has_input"],
                    input_deg=r["input_deg"],
                    input_vars=tuple(r["input_vars"]) if r["input_vars"] is not None else None,
                )
                for r in doc["rows"]
            ),
            z_mons=tuple(tuple(Monomial(tuple(e)) for e in zm) for zm in doc["z_mons"]),
            z_scales=tuple(tuple(zs) for zs in doc["z_scales"]),
            G=tuple(poly_matrix(g) for g in doc["G"]),
            z=tuple(Monomial(tuple(e)) for e in doc["z"]),
            F=tuple(np.array(f).reshape(len(zm), len(doc["z"])) for f, zm in zip(doc["F"], doc["z_mons"])),
            S=tuple(np.array(s).reshape(-1, sum(len(zm) for zm in doc["z_mons"]) + sum(g["rows"] for g in doc["G"])) for s in doc["S"]),
            omega_mons=tuple(Monomial(tuple(e)) for e in doc["omega_mons"]),
            omega_scales=tuple(doc["omega_scales"]),
            Omega=np.array(doc["Omega"]).reshape(len(doc["omega_mons"]), len(doc["z"])),
            D=np.array(doc["D"]),
            m_bounds=tuple({tuple(rho): M for rho, M in mb} for mb in doc["m_bounds"]),
            kappa=tuple(doc["kappa"]),
        )


@dataclass(frozen=True)
class AdditivePrior:
    """Known additive part of each row: value_i(x, u) = a_i^T z(x) + b_i^T G_i(x) u.

    Carried on a TaylorStructure after apply_prior so synthesis can account
    for the known dynamics alongside the inferred uncertain part.
    """

    a: tuple[np.ndarray, ...]  # per row, coefficients over the global z
    G: tuple[PolyMatrix, ...]
    b: tuple[np.ndarray, ...]

    def row_value(self, ts: TaylorStructure, i: int, x, u) -> float:
        v = float(self.a[i] @ ts.z_eval(x))
        if self.G[i].rows:
            v += float(self.b[i] @ (self.G[i].evaluate(x) @ np.asarray(u, dtype=float)))
        return v


def build_taylor_structure(
    n_x: int,
    n_u: int,
    k: int,
    rows: Sequence[RowSpec] | None = None,
    m_bounds: dict[int, dict[tuple[int, ...], float]] | None = None,
    b_degree: int = 0,
    extra_z: Sequence[tuple[int, ...]] = (),
) -> TaylorStructure:
    """Assemble the complete series representation.

    rows: one RowSpec per state; None means full dependence everywhere.
    m_bounds: per-row map from (k+1)-degree exponent tuples to derivative
        magnitude bounds.  Missing entries are zero; rows of the remainder
        basis whose bound vanishes for every row are pruned.
    b_degree: default degree bound for input-matrix rows (RowSpec overrides).
    extra_z: additional monomials (exponent tuples) appended to z.
    """
    if k < 1:
        raise ValueError("series order k must be >= 1")
    if rows is None:
        rows = [RowSpec() for _ in range(n_x)]
    rows = [
        RowSpec(
            state_vars=r.state_vars,
            max_deg=min(r.max_deg, k) if r.max_deg is not None else k,
            has_input=r.has_input,
            input_deg=(r.input_deg if r.input_deg is not None else b_degree) if r.has_input else 0,
            input_vars=r.input_vars,
        )
        for r in rows
    ]
    if len(rows) != n_x:
        raise DimensionError(f"got {len(rows)} row specs for n_x={n_x}")
    m_bounds = m_bounds or {}
    for i, mb in m_bounds.items():
        for rho, M in mb.items():
            if len(rho) != n_x or sum(rho) != k + 1:
                raise DimensionError(f"bound exponent {rho} is not a degree-{k + 1} multi-index")
            if M < 0:
                raise ValueError("derivative magnitude bounds must be non-negative")

    # per-row series bases and input maps
    z_mons, z_scales, G = [], [], []
    for i, r in enumerate(rows):
        mons = _restricted_monomials(n_x, 1, r.max_deg, r.state_vars) if r.max_deg >= 1 else []
        z_mons.append(tuple(mons))
        z_scales.append(tuple(1.0 / m.factorial() for m in mons))
        if r.has_input:
            gmons = _restricted_monomials(n_x, 0, r.input_deg, r.input_vars)
            # one coefficient per (input column, monomial); row j*len(gmons)+m of
            # G_i carries x^m on input column j
            ents = []
            for j in range(n_u):
                for gm in gmons:
                    row = [Polynomial.zero(n_x)] * n_u
                    row[j] = Polynomial.from_monomial(gm)
                    ents.append(row)
            G.append(PolyMatrix(ents, n_vars=n_x))
        else:
            G.append(PolyMatrix.zeros(0, n_u, n_x))

    # remainder basis: all degree-(k+1) exponents with a nonzero bound in some row
    all_rho = enumerate_monomials(n_x, k + 1, k + 1)
    mb_full = [dict(m_bounds.get(i, {})) for i in range(n_x)]
    kept = [rho for rho in all_rho if any(mb_full[i].get(rho.exps, 0.0) > 0 for i in range(n_x))]
    omega_scales = tuple(1.0 / rho.factorial() for rho in kept)
    D = np.array([sum(_kappa(mb_full[i]) * mb_full[i].get(rho.exps, 0.0) ** 2 for i in range(n_x)) for rho in kept])
    kappa = tuple(_kappa(mb_full[i]) for i in range(n_x))

    # global z: x first, then remaining row-basis monomials, then remainder monomials
    z: list[Monomial] = [Monomial(tuple(1 if j == i else 0 for j in range(n_x))) for i in range(n_x)]
    seen = set(m.exps for m in z)
    rest = sorted(
        {m.exps for zm in z_mons for m in zm if m.exps not in seen},
        key=lambda e: Monomial(e).grlex_key(),
    )
    z += [Monomial(e) for e in rest]
    seen.update(rest)
    om_rest = [rho for rho in kept if rho.exps not in seen]
    z += om_rest
    seen.update(m.exps for m in om_rest)
    for e in extra_z:
        if sum(e) == 0:
            raise ValueError("extra z monomials must vanish at the origin")
        if tuple(e) not in seen:
            z.append(Monomial(tuple(e)))
            seen.add(tuple(e))

    index = {m.exps: j for j, m in enumerate(z)}
    n_z = len(z)
    F = []
    for i in range(n_x):
        Fi = np.zeros((len(z_mons[i]), n_z))
        for r_, (m, s) in enumerate(zip(z_mons[i], z_scales[i])):
            Fi[r_, index[m.exps]] = s
        F.append(Fi)
    Omega = np.zeros((len(kept), n_z))
    for r_, (rho, s) in enumerate(zip(kept, omega_scales)):
        Omega[r_, index[rho.exps]] = s

    widths = [len(z_mons[i]) + G[i].rows for i in range(n_x)]
    n_theta = sum(widths)
    S = []
    off = 0
    for w in widths:
        Si = np.zeros((w, n_theta))
        Si[:, off : off + w] = np.eye(w)
        S.append(Si)
        off += w

    return TaylorStructure(
        n_x=n_x,
        n_u=n_u,
        k=k,
        rows=tuple(rows),
        z_mons=tuple(z_mons),
        z_scales=tuple(z_scales),
        G=tuple(G),
        z=tuple(z),
        F=tuple(F),
        S=tuple(S),
        omega_mons=tuple(kept),
        omega_scales=omega_scales,
        Omega=Omega,
        D=D,
        m_bounds=tuple(mb_full),
        kappa=kappa,
    )


def _kappa(mb: dict[tuple[int, ...], float]) -> int:
    return sum(1 for v in mb.values() if v > 0)


def remainder_bounds(ts: TaylorStructure, x: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Per-row remainder bounds at x.

    Row i of the first array is (sum_j M_{i,rho_j}/rho_j! * |x^rho_j|)^2, an
    upper bound on the squared truncation error; the second array is the
    looser polynomial bound kappa_i * sum_j (M_{i,rho_j}/rho_j!)^2 x^{2 rho_j}.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (ts.n_x,):
        raise DimensionError("remainder_bounds: point dimension mismatch")
    r_abs, r_poly = ts.remainder_bounds_many(x[None, :])
    return r_abs[0], r_poly[0]
