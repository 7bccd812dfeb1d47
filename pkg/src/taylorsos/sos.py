"""Sum-of-squares programs compiled to semidefinite programs.

An SOS constraint on a symmetric polynomial matrix expression (entries
affine in the declared decision variables) is parametrized by a Gram matrix:
expr(x) = (I kron v(x))^T G (I kron v(x)) with G positive semidefinite,
matching coefficients monomial by monomial.  The conic backend is abstracted
behind solve_sdp; cvxpy drives whichever interior-point solver is installed.

Certificates are never trusted blindly: verify_sos reconstructs the
expression from the solved Gram matrices and reports the worst coefficient
mismatch and the most negative sampled eigenvalue.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from taylorsos.inference import SolverFailure
from taylorsos.poly import DimensionError, Monomial, Polynomial, PolyMatrix, enumerate_monomials

__all__ = [
    "SosProgram",
    "SdpSolution",
    "SolverOptions",
    "StructurallyNotSosError",
    "sos_matrix_to_psd",
    "solve_sdp",
    "verify_sos",
    "export_sdpa",
]


class StructurallyNotSosError(ValueError):
    """The expression cannot be a sum of squares for structural reasons."""


@dataclass
class SolverOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    accept_margin: float = 1e-6  # post-hoc relative coefficient mismatch allowed
    solver: str = "CLARABEL"
    verbose: bool = False
    max_iters: int = 200_000


@dataclass
class SdpSolution:
    status: str  # optimal | feasible | infeasible | numerical-failure
    objective: float | None
    raw_status: str
    solver: str
    residuals: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "feasible")


@dataclass
class GramRecord:
    name: str
    expr: PolyMatrix  # the constrained expression (affine in decision vars)
    basis: list[Monomial]
    G: cp.Variable  # PSD Gram matrix of size expr.rows * len(basis)

    def reconstruct(self) -> PolyMatrix:
        """Numeric polynomial matrix implied by the solved Gram matrix."""
        Gv = np.asarray(self.G.value)
        m = self.expr.rows
        L = len(self.basis)
        out = PolyMatrix.zeros(m, m, self.expr.n_vars)
        for i in range(m):
            for j in range(m):
                terms: dict[Monomial, float] = {}
                for a in range(L):
                    for b in range(L):
                        mono = self.basis[a] * self.basis[b]
                        terms[mono] = terms.get(mono, 0.0) + Gv[i * L + a, j * L + b]
                out.entries[i][j] = Polynomial(self.expr.n_vars, terms)
        return out


class SosProgram:
    """Decision variables plus SOS / PSD / equality constraints."""

    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self.constraints: list = []
        self.grams: list[GramRecord] = []
        self.psd_constraints: list[tuple[str, object]] = []
        self.eq_constraints: list = []
        self.variables: dict[str, object] = {}
        self.objective: cp.problems.objective.Objective | None = None

    # -- variables -----------------------------------------------------------

    def _register(self, name, obj):
        if name in self.variables:
            raise ValueError(f"duplicate variable name {name!r}")
        self.variables[name] = obj
        return obj

    def sym_matrix_var(self, name: str, n: int) -> cp.Variable:
        return self._register(name, cp.Variable((n, n), symmetric=True, name=name))

    def scalar_var(self, name: str, nonneg: bool = False) -> cp.Variable:
        return self._register(name, cp.Variable(nonneg=nonneg, name=name))

    def poly_var(self, name: str, degree: int, monomials: list[Monomial] | None = None) -> Polynomial:
        """Polynomial with one free coefficient per monomial up to `degree`."""
        mons = monomials if monomials is not None else enumerate_monomials(self.n_vars, 0, degree)
        coeffs = cp.Variable(len(mons), name=name)
        self._register(name, coeffs)
        return Polynomial(self.n_vars, {m: coeffs[i] for i, m in enumerate(mons)})

    def poly_matrix_var(self, name: str, rows: int, cols: int, degree: int) -> PolyMatrix:
        mons = enumerate_monomials(self.n_vars, 0, degree)
        coeffs = cp.Variable((rows * cols, len(mons)), name=name)
        self._register(name, coeffs)
        ents = [
            [
                Polynomial(self.n_vars, {m: coeffs[i * cols + j, a] for a, m in enumerate(mons)})
                for j in range(cols)
            ]
            for i in range(rows)
        ]
        return PolyMatrix(ents, n_vars=self.n_vars)

    def sos_matrix_var(self, name: str, size: int, half_degree: int, variables: tuple[int, ...] | None = None) -> PolyMatrix:
        """A polynomial matrix that is SOS by construction (built from a PSD Gram)."""
        mons = enumerate_monomials(self.n_vars, 0, half_degree)
        if variables is not None:
            allowed = set(variables)
            mons = [m for m in mons if all(e == 0 or i in allowed for i, e in enumerate(m.exps))]
        L = len(mons)
        G = cp.Variable((size * L, size * L), symmetric=True, name=name)
        self._register(name, G)
        self.constraints.append(G >> 0)
        self.psd_constraints.append((name, G))
        ents = [[None] * size for _ in range(size)]
        for i in range(size):
            for j in range(size):
                terms: dict[Monomial, object] = {}
                for a in range(L):
                    for b in range(L):
                        mono = mons[a] * mons[b]
                        t = G[i * L + a, j * L + b]
                        terms[mono] = terms[mono] + t if mono in terms else t
                ents[i][j] = Polynomial(self.n_vars, terms)
        return PolyMatrix(ents, n_vars=self.n_vars)

    # -- constraints -----------------------------------------------------------

    def add_psd(self, expr, name: str = "psd"):
        """expr >> 0 for a cvxpy matrix expression."""
        self.constraints.append(expr >> 0)
        self.psd_constraints.append((name, expr))

    def add_eq(self, lhs, rhs=0.0):
        con = lhs == rhs
        self.constraints.append(con)
        self.eq_constraints.append(con)

    def add_sos(self, expr: Polynomial | PolyMatrix, name: str, basis: list[Monomial] | None = None) -> GramRecord:
        """Constrain a polynomial (matrix) expression to be a sum of squares."""
        if isinstance(expr, Polynomial):
            expr = PolyMatrix([[expr]])
        rec = sos_matrix_to_psd(self, expr, basis, name)
        return rec

    def set_objective(self, sense: str, expr):
        self.objective = cp.Minimize(expr) if sense == "min" else cp.Maximize(expr)

    # -- solving ------------------------------------------------------------------

    def build_problem(self) -> cp.Problem:
        obj = self.objective if self.objective is not None else cp.Minimize(0)
        return cp.Problem(obj, self.constraints)


def _default_basis(expr: PolyMatrix) -> list[Monomial]:
    """Monomials up to half the expression degree in the occurring variables."""
    occurring = set()
    for row in expr.entries:
        for p in row:
            for m in p.terms:
                occurring.update(i for i, e in enumerate(m.exps) if e > 0)
    half = (expr.degree() + 1) // 2
    mons = enumerate_monomials(expr.n_vars, 0, half)
    if len(occurring) < expr.n_vars:
        mons = [m for m in mons if all(e == 0 or i in occurring for i, e in enumerate(m.exps))]
    return mons


def _covered(mono: Monomial, basis_set: set[tuple[int, ...]], basis: list[Monomial]) -> bool:
    for b in basis:
        rem = tuple(m - e for m, e in zip(mono.exps, b.exps))
        if all(r >= 0 for r in rem) and rem in basis_set:
            return True
    return False


def sos_matrix_to_psd(
    prog: SosProgram,
    expr: PolyMatrix,
    basis: list[Monomial] | None = None,
    name: str = "sos",
) -> GramRecord:
    """Gram-parametrize an SOS matrix constraint and emit coefficient matching.

    The expression must be symmetric (entry (i,j) equal to entry (j,i) up to
    shared decision coefficients); diagonal entries of odd degree are
    rejected since no square can produce them.
    """
    if expr.rows != expr.cols:
        raise DimensionError("SOS matrix constraint needs a square expression")
    m = expr.rows
    for i in range(m):
        p = expr.entries[i][i]
        if p.is_numeric() and p.degree % 2 == 1:
            raise StructurallyNotSosError(
                f"diagonal entry ({i},{i}) has odd degree {p.degree}; it cannot be a sum of squares"
            )
        lead = [mo for mo in p.terms if mo.degree == p.degree]
        if p.is_numeric() and p.degree > 0 and all(any(e % 2 for e in mo.exps) for mo in lead):
            # highest-degree part has no even monomial to dominate it
            raise StructurallyNotSosError(f"diagonal entry ({i},{i}) has no even leading term")

    if basis is None:
        basis = _default_basis(expr)
    else:
        basis = list(basis)
        basis_set = {b.exps for b in basis}
        need = {mo for row in expr.entries for p in row for mo in p.terms}
        if not all(_covered(mo, basis_set, basis) for mo in need):
            basis = sorted(set(basis) | set(_default_basis(expr)), key=Monomial.grlex_key)

    L = len(basis)
    G = cp.Variable((m * L, m * L), symmetric=True, name=f"{name}_gram")
    prog._register(f"{name}_gram", G)
    prog.constraints.append(G >> 0)
    prog.psd_constraints.append((f"{name}_gram", G))

    # product map: monomial -> list of (a, b) basis index pairs
    prod: dict[tuple[int, ...], list[tuple[int, int]]] = {}
    for a in range(L):
        for b in range(L):
            mono = (basis[a] * basis[b]).exps
            prod.setdefault(mono, []).append((a, b))

    for i in range(m):
        for j in range(i, m):
            p = expr.entries[i][j]
            monos = set(p.terms.keys()) | {Monomial(e) for e in prod}
            for mo in monos:
                pairs = prod.get(mo.exps)
                coeff = p.terms.get(mo, 0.0)
                if pairs is None:
                    # monomial outside the Gram span: its coefficient must vanish
                    if isinstance(coeff, float):
                        if coeff != 0.0:
                            raise StructurallyNotSosError(
                                f"entry ({i},{j}) contains {mo!r}, not representable over the basis"
                            )
                    else:
                        prog.add_eq(coeff, 0.0)
                    continue
                gram_sum = cp.sum(cp.hstack([G[i * L + a, j * L + b] for a, b in pairs]))
                prog.add_eq(gram_sum, coeff)

    rec = GramRecord(name=name, expr=expr, basis=basis, G=G)
    prog.grams.append(rec)
    return rec


_STATUS_MAP = {
    cp.OPTIMAL: "optimal",
    cp.OPTIMAL_INACCURATE: "feasible",
    cp.INFEASIBLE: "infeasible",
    cp.INFEASIBLE_INACCURATE: "infeasible",
    cp.UNBOUNDED: "numerical-failure",
    cp.UNBOUNDED_INACCURATE: "numerical-failure",
}


def solve_sdp(prog: SosProgram, opts: SolverOptions | None = None) -> SdpSolution:
    """Solve the assembled program through the conic backend.

    Backend failures are reported as status "numerical-failure" with the raw
    solver status attached; they are never conflated with infeasibility.
    """
    opts = opts or SolverOptions()
    problem = prog.build_problem()
    solver_kwargs = _solver_kwargs(opts)
    raw = None
    try:
        problem.solve(solver=opts.solver, verbose=opts.verbose, **solver_kwargs.get(opts.solver, {}))
        raw = problem.status
    except (cp.error.SolverError, ValueError) as e:
        if opts.solver == "SCS":
            return SdpSolution("numerical-failure", None, f"exception: {e}", opts.solver)
        try:
            problem.solve(solver="SCS", verbose=opts.verbose, **solver_kwargs["SCS"])
            raw = problem.status
        except (cp.error.SolverError, ValueError) as e2:
            return SdpSolution("numerical-failure", None, f"exception: {e2}", "SCS")
    status = _STATUS_MAP.get(raw, "numerical-failure")
    residuals = {}
    if status in ("optimal", "feasible"):
        residuals = _residuals(prog)
        if residuals["max_psd_violation"] > 100 * max(opts.feas_tol, 1e-9):
            status = "feasible" if residuals["max_psd_violation"] < 1e-5 else "numerical-failure"
    return SdpSolution(
        status=status,
        objective=problem.value if status in ("optimal", "feasible") else None,
        raw_status=str(raw),
        solver=opts.solver,
        residuals=residuals,
    )


def _solver_kwargs(opts: SolverOptions) -> dict:
    return {
        "CLARABEL": {
            "tol_feas": opts.feas_tol,
            "tol_gap_abs": opts.gap_tol,
            "tol_gap_rel": opts.gap_tol,
        },
        "SCS": {"eps": max(opts.feas_tol, 1e-9), "max_iters": opts.max_iters},
    }


def _residuals(prog: SosProgram) -> dict:
    worst_psd = 0.0
    for _, expr in prog.psd_constraints:
        v = expr.value
        if v is None:
            continue
        v = np.atleast_2d(np.asarray(v, dtype=float))
        worst_psd = min(worst_psd, float(np.linalg.eigvalsh(0.5 * (v + v.T))[0]))
    worst_eq = 0.0
    for con in prog.eq_constraints:
        r = con.violation()
        worst_eq = max(worst_eq, float(np.max(np.abs(r))))
    return {"max_psd_violation": -worst_psd, "max_eq_residual": worst_eq}


def verify_sos(prog: SosProgram, samples: int = 200, rng=None, radius: float = 2.0) -> dict:
    """Independent certificate check after solving.

    For every SOS constraint: (a) rebuild the polynomial matrix from the
    solved Gram matrix and report the largest coefficient mismatch relative
    to the coefficient scale; (b) evaluate the solved expression at random
    points and report the smallest eigenvalue seen.
    """
    rng = rng or np.random.default_rng(0)
    report = {}
    for rec in prog.grams:
        solved = rec.expr.value()
        rebuilt = rec.reconstruct()
        scale = max(
            (abs(c) for row in solved.entries for p in row for c in p.terms.values()),
            default=1.0,
        )
        mismatch = 0.0
        for i in range(solved.rows):
            for j in range(solved.cols):
                a, b = solved.entries[i][j], rebuilt.entries[i][j]
                for mo in set(a.terms) | set(b.terms):
                    mismatch = max(mismatch, abs(float(a.terms.get(mo, 0.0)) - float(b.terms.get(mo, 0.0))))
        min_eig = np.inf
        fn = solved.compiled()
        for _ in range(samples):
            x = rng.uniform(-radius, radius, size=solved.n_vars)
            M = fn(x)
            min_eig = min(min_eig, float(np.linalg.eigvalsh(0.5 * (M + M.T))[0]))
        report[rec.name] = {"coeff_mismatch": mismatch / max(scale, 1e-30), "min_sample_eig": min_eig}
    report["worst_mismatch"] = max((v["coeff_mismatch"] for k, v in report.items() if isinstance(v, dict)), default=0.0)
    report["worst_min_eig"] = min((v["min_sample_eig"] for k, v in report.items() if isinstance(v, dict)), default=0.0)
    return report


def export_sdpa(prog: SosProgram, path: str) -> None:
    """Write the assembled program in sparse SDPA format for external checks.

    The affine structure is recovered by probing the constraint expressions
    at unit values of each scalar decision variable, so this is intended for
    small programs.  Equalities become paired rows of a diagonal LP block.
    """
    scalars: list[tuple[object, int]] = []
    for var in _all_cvxpy_vars(prog):
        scalars.extend((var, k) for k in range(var.size))

    def set_y(y):
        idx = 0
        by_var: dict = {}
        for var, k in scalars:
            by_var.setdefault(var, np.zeros(var.size))
            by_var[var][k] = y[idx]
            idx += 1
        for var, vals in by_var.items():
            if var.ndim == 2:
                M = vals.reshape(var.shape)
                var.value = 0.5 * (M + M.T) if var.is_symmetric() else M
            elif var.ndim == 1:
                var.value = vals
            else:
                var.value = float(vals[0])

    n_y = len(scalars)
    blocks = []  # (size, [F0, F1, ..., Fn]) with F dense
    exprs = [e for _, e in prog.psd_constraints]
    eqs = [c.args[0] - c.args[1] for c in prog.eq_constraints]
    zero = np.zeros(n_y)
    for expr in exprs:
        set_y(zero)
        F0 = np.atleast_2d(np.asarray(expr.value, dtype=float)).copy()
        mats = [F0]
        for i in range(n_y):
            y = zero.copy()
            y[i] = 1.0
            set_y(y)
            mats.append(np.atleast_2d(np.asarray(expr.value, dtype=float)) - F0)
        blocks.append((F0.shape[0], mats))
    if eqs:
        d = len(eqs)
        mats = []
        set_y(zero)
        base = np.array([float(np.asarray(e.value).reshape(())) for e in eqs])
        F0 = np.diag(np.concatenate([base, -base]))
        mats.append(F0)
        for i in range(n_y):
            y = zero.copy()
            y[i] = 1.0
            set_y(y)
            vals = np.array([float(np.asarray(e.value).reshape(())) for e in eqs]) - base
            mats.append(np.diag(np.concatenate([vals, -vals])))
        blocks.append((-2 * d, mats))  # negative size marks a diagonal block

    with open(path, "w") as fh:
        fh.write(f"{n_y} = mDIM\n{len(blocks)} = nBLOCK\n")
        fh.write("{" + ",".join(str(s) for s, _ in blocks) + "} = bLOCKsTRUCT\n")
        fh.write(" ".join("0" for _ in range(n_y)) + "\n")  # objective c
        for bi, (size, mats) in enumerate(blocks, start=1):
            for mi, F in enumerate(mats):
                sign = -1.0 if mi == 0 else 1.0  # SDPA: sum y_i F_i - F_0 >= 0
                n = abs(size) if size < 0 else size
                for r in range(F.shape[0]):
                    for c in range(r, F.shape[1]):
                        v = float(sign * F[r, c] if mi == 0 else F[r, c])
                        if abs(v) > 1e-14:
                            fh.write(f"{mi} {bi} {r + 1} {c + 1} {v!r}\n")
    # restore: leave variables unset
    set_y(zero)


def _all_cvxpy_vars(prog: SosProgram) -> list:
    seen = []
    ids = set()
    for con in prog.constraints:
        for v in con.variables():
            if v.id not in ids:
                ids.add(v.id)
                seen.append(v)
    if prog.objective is not None:
        for v in prog.objective.variables():
            if v.id not in ids:
                ids.add(v.id)
                seen.append(v)
    return seen
