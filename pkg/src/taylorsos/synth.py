"""Controller synthesis: one SOS feasibility problem per design.

The closed-loop condition is assembled in its dualized, decision-linear
form: a symmetric polynomial matrix Psi(x), affine in the Lyapunov matrix P,
the feedback coefficients K, and the scalar multipliers tau, must be an SOS
matrix.  Uncertainty enters through per-row channels, each carrying a
quadratic set-membership for the coefficients that drive that row; the
remainder of the series representation occupies its own channel weighted by
the diagonal bound matrix.

A quadratic-performance block can be appended (L2-gain as the special
case), and locality multipliers restrict the performance certificate to a
semialgebraic region while stability stays global.

The solved certificate is re-verified coefficient-wise and the primal
(nonconvex) form of the condition can be sampled as an independent
cross-check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from taylorsos.inference import SetMembership, _finalize_set
from taylorsos.poly import DimensionError, Monomial, Polynomial, PolyMatrix, jacobian
from taylorsos.plant import Dataset
from taylorsos.sos import SdpSolution, SolverOptions, SosProgram, solve_sdp, verify_sos
from taylorsos.structure import AdditivePrior, RowSpec, TaylorStructure, build_taylor_structure

__all__ = [
    "SynthesisProblem",
    "PerformanceSpec",
    "Controller",
    "Channel",
    "SynthesisInfeasible",
    "CertificateRejected",
    "assemble_global",
    "assemble_performance",
    "localize",
    "synthesize",
    "apply_prior",
    "control_input",
    "check_primal_dual",
    "minimize_gain",
]

EPS_PSI = 1e-4
EPS_TAU = 1e-4
EPS_P = 1e-4
PRIOR_RADIUS = 1e-6


class SynthesisInfeasible(RuntimeError):
    def __init__(self, report: dict):
        super().__init__(report.get("message", "synthesis program infeasible"))
        self.report = report


class CertificateRejected(RuntimeError):
    def __init__(self, report: dict):
        super().__init__(
            "solver claimed feasibility but the certificate failed verification: "
            f"coefficient mismatch {report.get('worst_mismatch'):.2e}, "
            f"min sampled eigenvalue {report.get('worst_min_eig'):.2e}"
        )
        self.report = report


@dataclass(frozen=True)
class PerformanceSpec:
    """Quadratic performance channel w_p -> z_p.

    The inverse performance matrix blocks (Qt, St, Rt) enter the synthesis;
    Qt must be negative semidefinite.  `l2` builds the L2-gain special case
    Qt = -I/gamma, St = 0, Rt = gamma I.
    """

    W_p: PolyMatrix
    C: PolyMatrix
    D_u: PolyMatrix
    D_w: PolyMatrix
    Qt: np.ndarray
    St: np.ndarray
    Rt: np.ndarray
    gamma: float | None = None

    def __post_init__(self):
        if np.linalg.eigvalsh(0.5 * (self.Qt + self.Qt.T))[-1] > 1e-12:
            raise ValueError("Qt must be negative semidefinite")

    @property
    def n_wp(self) -> int:
        return self.W_p.cols

    @property
    def n_zp(self) -> int:
        return self.C.rows

    @staticmethod
    def l2(W_p: PolyMatrix, C: PolyMatrix, D_u: PolyMatrix, D_w: PolyMatrix, gamma: float) -> "PerformanceSpec":
        n_wp, n_zp = W_p.cols, C.rows
        return PerformanceSpec(
            W_p=W_p,
            C=C,
            D_u=D_u,
            D_w=D_w,
            Qt=-np.eye(n_wp) / gamma,
            St=np.zeros((n_wp, n_zp)),
            Rt=gamma * np.eye(n_zp),
            gamma=gamma,
        )

    def with_gamma(self, gamma: float) -> "PerformanceSpec":
        if self.gamma is None:
            raise ValueError("performance spec is not an L2-gain parametrization")
        return PerformanceSpec.l2(self.W_p, self.C, self.D_u, self.D_w, gamma)


@dataclass(frozen=True)
class Channel:
    """One uncertainty channel: a row's coefficients and their feasible set."""

    row: int
    F: np.ndarray  # (m_z, n_z) selector of the channel's z-part
    G: PolyMatrix  # (m_g, n_u) input-map block
    S: np.ndarray  # (m_z + m_g, w) map from channel coefficients to the basis
    sm: SetMembership

    @property
    def width(self) -> int:
        return self.S.shape[1]


@dataclass
class SynthesisProblem:
    ts: TaylorStructure
    sets: SetMembership | list[SetMembership]
    K_degree: int
    mode: str = "global"  # global | performance | local-performance
    perf: PerformanceSpec | None = None
    locality: list[Polynomial] = field(default_factory=list)
    T_degree: int = 0
    tau_degree: int = 0
    eps_psi: float = EPS_PSI
    eps_tau: float = EPS_TAU
    eps_P: float = EPS_P
    solver: SolverOptions = field(default_factory=SolverOptions)

    def channels(self) -> list[Channel]:
        ts = self.ts
        chans: list[Channel] = []
        widths = ts.theta_widths
        if isinstance(self.sets, SetMembership):
            if self.sets.n_theta != ts.n_theta:
                raise DimensionError(
                    f"set-membership has dimension {self.sets.n_theta}, structure has {ts.n_theta}"
                )
            for i in range(ts.n_x):
                if widths[i] == 0:
                    continue
                chans.append(Channel(row=i, F=ts.F[i], G=ts.G[i], S=ts.S[i], sm=self.sets))
        else:
            if len(self.sets) != ts.n_x:
                raise DimensionError("per-row sets must give one entry per state")
            for i, sm in enumerate(self.sets):
                if widths[i] == 0:
                    continue
                if sm is None or sm.n_theta != widths[i]:
                    raise DimensionError(f"row {i} set has wrong dimension")
                chans.append(Channel(row=i, F=ts.F[i], G=ts.G[i], S=np.eye(widths[i]), sm=sm))
        if ts.prior is not None:
            chans.extend(_prior_channels(ts))
        return chans


def _prior_channels(ts: TaylorStructure) -> list[Channel]:
    """Known additive parts enter as channels with tiny balls around the known value."""
    chans = []
    for i in range(ts.n_x):
        a = ts.prior.a[i]
        G = ts.prior.G[i]
        b = ts.prior.b[i]
        support = np.flatnonzero(np.abs(a) > 0)
        m_g = G.rows
        if support.size == 0 and m_g == 0:
            continue
        F = np.zeros((support.size, ts.n_z))
        for r, jz in enumerate(support):
            F[r, jz] = 1.0
        theta_p = np.concatenate([a[support], b])
        w = theta_p.size
        r2 = (PRIOR_RADIUS * max(1.0, float(np.linalg.norm(theta_p)))) ** 2
        sm = _finalize_set(
            np.eye(w),
            -theta_p,
            float(theta_p @ theta_p) - r2,
            "prior",
            1.0,
            {"row": i, "radius2": r2},
        )
        chans.append(Channel(row=i, F=F, G=G, S=np.eye(w), sm=sm))
    return chans


@dataclass
class AssembledSynthesis:
    """A compiled synthesis program plus handles for extraction."""

    prog: SosProgram
    prob: SynthesisProblem
    channels: list[Channel]
    P: object  # cvxpy symmetric variable
    K: PolyMatrix
    tau0: Polynomial | None
    taus: list[Polynomial]
    T_blocks: list[PolyMatrix]
    psi_dim: int


def _cvx_pm(M, n_vars: int) -> PolyMatrix:
    """Lift a cvxpy matrix variable to a PolyMatrix of constant polynomials."""
    rows, cols = M.shape
    return PolyMatrix(
        [[Polynomial.constant(n_vars, M[i, j]) for j in range(cols)] for i in range(rows)],
        n_vars=n_vars,
    )


def _add_block(Psi: PolyMatrix, r0: int, c0: int, B: PolyMatrix):
    for i in range(B.rows):
        for j in range(B.cols):
            Psi.entries[r0 + i][c0 + j] = Psi.entries[r0 + i][c0 + j] + B.entries[i][j]


def _assemble(prob: SynthesisProblem) -> AssembledSynthesis:
    ts = prob.ts
    nv = ts.n_x
    n_z, n_om = ts.n_z, ts.n_omega
    chans = prob.channels()
    widths = [c.width for c in chans]
    W = sum(widths)
    n_zp = prob.perf.n_zp if prob.mode in ("performance", "local-performance") else 0
    N = n_z + n_om + W + n_zp

    prog = SosProgram(nv)
    P = prog.sym_matrix_var("P", n_z)
    prog.add_psd(P - prob.eps_P * np.eye(n_z), "P_floor")
    P_pm = _cvx_pm(P, nv)
    K = prog.poly_matrix_var("K", ts.n_u, n_z, prob.K_degree)

    z_vec = ts.z_vector()
    Jz = jacobian(z_vec)  # (n_z, n_x)

    Psi = PolyMatrix.zeros(N, N, nv)

    # uncertain-coefficient coupling blocks (the first factor pair)
    col0 = n_z + n_om
    taus: list[Polynomial] = []
    hs_blocks: list[PolyMatrix] = []
    for c, ch in enumerate(chans):
        tau = prog.poly_var(f"tau{c + 1}", prob.tau_degree)
        prog.add_sos(tau - prob.eps_tau, f"tau{c + 1}_pos")
        taus.append(tau)
        FP = PolyMatrix.from_array(ch.F, nv) @ P_pm if ch.F.shape[0] else PolyMatrix.zeros(0, n_z, nv)
        GK = ch.G @ K if ch.G.rows else PolyMatrix.zeros(0, n_z, nv)
        H = PolyMatrix.vstack([FP, GK])  # (m_z + m_g, n_z)
        HS = H.T @ PolyMatrix.from_array(ch.S, nv)  # (n_z, w)
        hs_blocks.append(HS)
        _add_block(Psi, 0, col0, HS * -1.0)
        _add_block(Psi, col0, 0, HS.T * -1.0)
        # set-membership quadratic, weighted by this channel's multiplier
        jcol = PolyMatrix([[Jz.entries[i][ch.row]] for i in range(n_z)], n_vars=nv)  # (n_z, 1)
        d3 = float(ch.sm.Delta3)
        _add_block(Psi, 0, 0, (jcol @ jcol.T) * (tau * d3))
        d2 = PolyMatrix.from_array(ch.sm.Delta2[None, :], nv)  # (1, w)
        _add_block(Psi, 0, col0, (jcol @ d2) * tau)
        _add_block(Psi, col0, 0, (jcol @ d2).T * tau)
        _add_block(Psi, col0, col0, PolyMatrix.from_array(ch.sm.Delta1, nv) * tau)
        col0 += ch.width

    # remainder channel
    tau0 = None
    if n_om > 0:
        tau0 = prog.poly_var("tau0", prob.tau_degree)
        prog.add_sos(tau0 - prob.eps_tau, "tau0_pos")
        _add_block(Psi, 0, 0, (Jz @ Jz.T) * (tau0 * -1.0))
        Dinv = PolyMatrix.from_array(np.diag(1.0 / ts.D), nv)
        _add_block(Psi, n_z, n_z, Dinv * tau0)

    # Lyapunov coupling to the remainder basis
    if n_om > 0:
        Om_T = PolyMatrix.from_array(ts.Omega.T, nv)  # (n_z, n_om)
        POm = P_pm @ Om_T
        _add_block(Psi, 0, n_z, POm * -1.0)
        _add_block(Psi, n_z, 0, POm.T * -1.0)

    # performance extension
    T_blocks: list[PolyMatrix] = []
    if n_zp > 0:
        perf = prob.perf
        pcol = n_z + n_om + W
        JW = Jz @ perf.W_p  # (n_z, n_wp)
        Qt_pm = PolyMatrix.from_array(perf.Qt, nv)
        St_pm = PolyMatrix.from_array(perf.St, nv)
        Rt_pm = PolyMatrix.from_array(perf.Rt, nv)
        _add_block(Psi, 0, 0, JW @ Qt_pm @ JW.T)
        cross = St_pm - Qt_pm @ perf.D_w.T  # (n_wp, n_zp)
        psi12 = (perf.C @ P_pm + perf.D_u @ K).T * -1.0 - JW @ cross
        _add_block(Psi, 0, pcol, psi12)
        _add_block(Psi, pcol, 0, psi12.T)
        DwS = perf.D_w @ St_pm
        psi22 = perf.D_w @ Qt_pm @ perf.D_w.T - DwS - DwS.T + Rt_pm
        _add_block(Psi, pcol, pcol, psi22)
        if prob.mode == "local-performance":
            if not prob.locality:
                raise ValueError("local-performance mode needs at least one region polynomial")
            for idx, w_poly in enumerate(prob.locality):
                w0 = w_poly.evaluate(np.zeros(nv))
                if not w0 < 0:
                    raise ValueError(f"region polynomial {idx} must be negative at the origin, got {w0}")
                Ti = prog.sos_matrix_var(f"T{idx + 1}", n_zp, (prob.T_degree + 1) // 2)
                T_blocks.append(Ti)
                _add_block(Psi, pcol, pcol, Ti * w_poly)

    eps_eye = PolyMatrix.from_array(np.eye(N) * prob.eps_psi, nv)
    prog.add_sos(Psi - eps_eye, "psi")
    return AssembledSynthesis(
        prog=prog,
        prob=prob,
        channels=chans,
        P=P,
        K=K,
        tau0=tau0,
        taus=taus,
        T_blocks=T_blocks,
        psi_dim=N,
    )


def assemble_global(prob: SynthesisProblem) -> AssembledSynthesis:
    """Stability-only synthesis program."""
    prob = replace(prob, mode="global")
    return _assemble(prob)


def assemble_performance(prob: SynthesisProblem) -> AssembledSynthesis:
    """Synthesis with the quadratic-performance extension."""
    if prob.perf is None:
        raise ValueError("performance mode requires a PerformanceSpec")
    if prob.mode not in ("performance", "local-performance"):
        prob = replace(prob, mode="performance")
    return _assemble(prob)


def localize(prob: SynthesisProblem, w: list[Polynomial], T_degree: int | None = None) -> AssembledSynthesis:
    """Restrict the performance certificate to {x : w_i(x) <= 0}.

    Stability remains global; only the performance rows receive the region
    multipliers.
    """
    if not w:
        raise ValueError("locality requires at least one region polynomial")
    if prob.perf is None:
        raise ValueError("locality applies to performance mode")
    prob = replace(
        prob,
        mode="local-performance",
        locality=list(w),
        T_degree=prob.T_degree if T_degree is None else T_degree,
    )
    return _assemble(prob)


@dataclass
class Controller:
    """State feedback u(x) = K(x) P^{-1} z(x) with its certificate."""

    P: np.ndarray
    K: PolyMatrix
    z: tuple[Monomial, ...]
    certificate: dict
    gamma: float | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.linalg.eigvalsh(self.P)
        if w[0] <= 0:
            raise ValueError("Lyapunov matrix must be positive definite")
        self._P_inv = np.linalg.inv(self.P)
        self._K_fn = self.K.compiled()

    @property
    def n_u(self) -> int:
        return self.K.rows

    def u(self, x) -> np.ndarray:
        zx = np.array([m.evaluate(x) for m in self.z])
        return self._K_fn(x) @ (self._P_inv @ zx)

    def lyapunov(self, x) -> float:
        zx = np.array([m.evaluate(x) for m in self.z])
        return float(zx @ self._P_inv @ zx)

    def to_json(self) -> str:
        def poly_terms(p: Polynomial):
            return [{"exps": list(m.exps), "coef": c} for m, c in sorted(p.terms.items(), key=lambda kv: kv[0].grlex_key())]

        doc = {
            "P": self.P.tolist(),
            "K": [[poly_terms(self.K.entries[i][j]) for j in range(self.K.cols)] for i in range(self.K.rows)],
            "z": [list(m.exps) for m in self.z],
            "gamma": self.gamma,
            "certificate": self.certificate,
            "provenance": self.provenance,
        }
        return json.dumps(doc, indent=1)

    @staticmethod
    def from_json(text: str) -> "Controller":
        doc = json.loads(text)
        z = tuple(Monomial(tuple(e)) for e in doc["z"])
        nv = len(z[0].exps)
        K = PolyMatrix(
            [
                [Polynomial(nv, {Monomial(tuple(t["exps"])): t["coef"] for t in cell}) for cell in row]
                for row in doc["K"]
            ],
            n_vars=nv,
        )
        return Controller(
            P=np.array(doc["P"]),
            K=K,
            z=z,
            certificate=doc["certificate"],
            gamma=doc["gamma"],
            provenance=doc.get("provenance", {}),
        )


def control_input(ctrl: Controller, x) -> np.ndarray:
    """Evaluate the state feedback at x."""
    return ctrl.u(np.asarray(x, dtype=float))


def synthesize(prob: SynthesisProblem) -> Controller:
    """Assemble, solve, verify, extract.

    Raises SynthesisInfeasible with a structured report when the program has
    no solution, and CertificateRejected when the solver's answer does not
    withstand independent verification.
    """
    if prob.mode == "global":
        asm = assemble_global(prob)
    elif prob.mode == "performance":
        asm = assemble_performance(prob)
    elif prob.mode == "local-performance":
        if not prob.locality:
            raise ValueError("local-performance mode needs region polynomials")
        asm = localize(prob, prob.locality, prob.T_degree)
    else:
        raise ValueError(f"unknown mode {prob.mode!r}")
    sol = solve_sdp(asm.prog, prob.solver)
    if sol.status == "infeasible":
        raise SynthesisInfeasible(
            {
                "message": f"synthesis program infeasible (mode {prob.mode}, K degree {prob.K_degree})",
                "mode": prob.mode,
                "raw_status": sol.raw_status,
                "psi_dim": asm.psi_dim,
                "constraint_families": ["psi_sos", "tau_pos", "P_floor"],
            }
        )
    if sol.status == "numerical-failure":
        raise SynthesisInfeasible(
            {
                "message": f"solver failed on the synthesis program ({sol.raw_status})",
                "mode": prob.mode,
                "raw_status": sol.raw_status,
                "numerical_failure": True,
            }
        )
    report = verify_sos(asm.prog, samples=200)
    if report["worst_mismatch"] > prob.solver.accept_margin or report["worst_min_eig"] < -1e-7:
        raise CertificateRejected(report)
    return _extract(asm, sol, report)


def _extract(asm: AssembledSynthesis, sol: SdpSolution, report: dict) -> Controller:
    prob = asm.prob
    P = np.asarray(asm.P.value)
    P = 0.5 * (P + P.T)
    K = asm.K.value()
    cert = {
        "taus": [_poly_terms(t.value()) for t in asm.taus],
        "tau0": _poly_terms(asm.tau0.value()) if asm.tau0 is not None else None,
        "T_blocks": [
            [[_poly_terms(T.entries[i][j].value()) for j in range(T.cols)] for i in range(T.rows)]
            for T in asm.T_blocks
        ],
        "verify": {"worst_mismatch": report["worst_mismatch"], "worst_min_eig": report["worst_min_eig"]},
        "solver": {"status": sol.status, "raw": sol.raw_status, "residuals": sol.residuals},
        "eps": {"psi": prob.eps_psi, "tau": prob.eps_tau, "P": prob.eps_P},
        "mode": prob.mode,
    }
    sets = prob.sets if isinstance(prob.sets, list) else [prob.sets]
    prov = {
        "set_provenance": [s.provenance for s in sets if s is not None],
        "set_delta": [s.delta for s in sets if s is not None],
        "K_degree": prob.K_degree,
    }
    gamma = prob.perf.gamma if prob.perf is not None else None
    return Controller(P=P, K=K, z=prob.ts.z, certificate=cert, gamma=gamma, provenance=prov)


def _poly_terms(p: Polynomial):
    return [{"exps": list(m.exps), "coef": c} for m, c in sorted(p.terms.items(), key=lambda kv: kv[0].grlex_key())]


def minimize_gain(
    prob: SynthesisProblem,
    lo: float = 1e-2,
    hi: float = 1e9,
    iters: int = 12,
) -> tuple[float, Controller]:
    """Smallest certifiable L2 gain by log-scale bisection of feasibility programs.

    Raises SynthesisInfeasible when even the upper bracket fails.
    """
    if prob.perf is None or prob.perf.gamma is None:
        raise ValueError("gain minimization needs an L2 performance spec")

    def attempt(gamma: float) -> Controller | None:
        try:
            return synthesize(replace(prob, perf=prob.perf.with_gamma(gamma)))
        except SynthesisInfeasible:
            return None

    best = attempt(hi)
    if best is None:
        raise SynthesisInfeasible({"message": f"performance program infeasible even at gamma = {hi:g}"})
    ctrl_lo = attempt(lo)
    if ctrl_lo is not None:
        return lo, ctrl_lo
    llo, lhi = np.log(lo), np.log(hi)
    for _ in range(iters):
        mid = float(np.exp(0.5 * (llo + lhi)))
        ctrl = attempt(mid)
        if ctrl is None:
            llo = np.log(mid)
        else:
            lhi = np.log(mid)
            best = ctrl
    gamma = float(np.exp(lhi))
    return gamma, best


def apply_prior(
    ts: TaylorStructure,
    ds: Dataset,
    known: dict[int, "RowPrior"],
) -> tuple[TaylorStructure, Dataset]:
    """Subtract known additive row dynamics and shrink the coefficient vector.

    For each row with a prior the known value a^T z(x) + b^T G(x) u is
    removed from the derivative records, the row's remaining unknown basis is
    replaced by `remaining` (empty by default), and the prior rides along on
    the returned structure so synthesis can honor the known dynamics.
    """
    if not known:
        return ts, ds
    for i, rp in known.items():
        if not 0 <= i < ts.n_x:
            raise DimensionError(f"row index {i} out of range")
        rp.validate(ts)
    new_rows = list(ts.rows)
    for i, rp in known.items():
        new_rows[i] = rp.remaining if rp.remaining is not None else RowSpec(state_vars=(), max_deg=0, has_input=False)
    # keep prior monomials representable in the rebuilt z
    extra = []
    for i, rp in known.items():
        for j in np.flatnonzero(np.abs(rp.a) > 0):
            extra.append(ts.z[j].exps)
    m_bounds = {i: dict(mb) for i, mb in enumerate(ts.m_bounds) if mb}
    ts2 = build_taylor_structure(ts.n_x, ts.n_u, ts.k, new_rows, m_bounds=m_bounds, extra_z=extra)
    # re-express each prior over the new z ordering
    index2 = {m.exps: j for j, m in enumerate(ts2.z)}
    a_list, G_list, b_list = [], [], []
    for i in range(ts.n_x):
        if i in known:
            rp = known[i]
            a2 = np.zeros(ts2.n_z)
            for j in np.flatnonzero(np.abs(rp.a) > 0):
                a2[index2[ts.z[j].exps]] = rp.a[j]
            a_list.append(a2)
            G_list.append(rp.G if rp.G is not None else PolyMatrix.zeros(0, ts.n_u, ts.n_x))
            b_list.append(rp.b if rp.b is not None else np.zeros(0))
        else:
            a_list.append(np.zeros(ts2.n_z))
            G_list.append(PolyMatrix.zeros(0, ts.n_u, ts.n_x))
            b_list.append(np.zeros(0))
    prior = AdditivePrior(a=tuple(a_list), G=tuple(G_list), b=tuple(b_list))
    ts2 = replace(ts2, prior=prior)

    XDOT = ds.XDOT.copy()
    for s in range(ds.S):
        for i in known:
            XDOT[s, i] -= prior.row_value(ts2, i, ds.X[s], ds.U[s])
    ds2 = Dataset(
        X=ds.X,
        U=ds.U,
        XDOT=XDOT,
        traj_id=ds.traj_id,
        t=ds.t,
        sigma=ds.sigma,
        seed=ds.seed,
        protocol=ds.protocol,
        meta={**ds.meta, "prior_rows": sorted(known)},
    )
    return ts2, ds2


@dataclass
class RowPrior:
    """Known additive part of one row: a over the structure's z, plus b^T G(x) u."""

    a: np.ndarray
    G: PolyMatrix | None = None
    b: np.ndarray | None = None
    remaining: RowSpec | None = None

    def validate(self, ts: TaylorStructure):
        if self.a.shape != (ts.n_z,):
            raise DimensionError(f"prior coefficients must match n_z = {ts.n_z}")
        if (self.G is None) != (self.b is None):
            raise DimensionError("input prior needs both G and b")
        if self.G is not None and self.G.rows != self.b.shape[0]:
            raise DimensionError("input prior dimensions disagree")


def check_primal_dual(ctrl: Controller, prob: SynthesisProblem, samples: int = 100, radius: float = 5.0, rng=None) -> float:
    """Evaluate the primal (inverse-multiplier) form of the stability condition.

    Builds the dualized middle matrix from the stored multipliers and the
    inverted set blocks and returns the largest eigenvalue over sampled
    states; a valid certificate keeps it strictly negative.
    """
    rng = rng or np.random.default_rng(0)
    ts = prob.ts
    chans = prob.channels()
    n_z, n_om, n_x = ts.n_z, ts.n_omega, ts.n_x
    n_c = len(chans)
    taus = [
        Polynomial(ts.n_x, {Monomial(tuple(t["exps"])): t["coef"] for t in terms})
        for terms in ctrl.certificate["taus"]
    ]
    tau0 = None
    if ctrl.certificate["tau0"] is not None:
        tau0 = Polynomial(ts.n_x, {Monomial(tuple(t["exps"])): t["coef"] for t in ctrl.certificate["tau0"]})
    # inverse set blocks per channel
    tilde = []
    for ch in chans:
        big = np.block(
            [[ch.sm.Delta1, ch.sm.Delta2[:, None]], [ch.sm.Delta2[None, :], np.atleast_2d(ch.sm.Delta3)]]
        )
        inv = np.linalg.inv(big)
        tilde.append((inv[:-1, :-1], inv[:-1, -1], inv[-1, -1]))

    z_vec = ts.z_vector()
    Jz_fn = jacobian(z_vec).compiled()
    K_fn = ctrl.K.compiled()
    Om = ts.Omega
    P = ctrl.P
    worst = -np.inf
    for _ in range(samples):
        x = rng.uniform(-radius, radius, size=n_x)
        Jx = Jz_fn(x)
        Kx = K_fn(x)
        tau_v = [t.evaluate(x) for t in taus]
        if any(tv <= 0 for tv in tau_v):
            raise ValueError("multiplier nonpositive at a sample; certificate invalid")
        # stacked channel coupling, evaluated numerically
        HS = np.zeros((n_z, sum(c.width for c in chans)))
        off = 0
        for ch in chans:
            FP = ch.F @ P
            GK = ch.G.evaluate(x) @ Kx if ch.G.rows else np.zeros((0, n_z))
            HS[:, off : off + ch.width] = np.vstack([FP, GK]).T @ ch.S
            off += ch.width
        E = np.zeros((n_x, n_c))
        for c, ch in enumerate(chans):
            E[ch.row, c] = 1.0
        W = HS.shape[1]
        # primal coordinates: Lyapunov direction, remainder realization (only
        # when the remainder channel exists), channel values
        n_r = n_x if n_om > 0 else 0
        rows = [
            np.hstack([np.eye(n_z), np.zeros((n_z, n_r + n_c))]),
            np.hstack([np.zeros((n_z, n_z + n_r - n_x)), Jx, Jx @ E])
            if n_om > 0
            else np.hstack([np.zeros((n_z, n_z)), Jx @ E]),
        ]
        mids = [np.block([[np.zeros((n_z, n_z)), np.eye(n_z)], [np.eye(n_z), np.zeros((n_z, n_z))]])]
        if n_om > 0:
            t0 = tau0.evaluate(x)
            if t0 <= 0:
                raise ValueError("remainder multiplier nonpositive at a sample")
            rows.append(np.hstack([np.zeros((n_x, n_z)), np.eye(n_x), np.zeros((n_x, n_c))]))
            rows.append(np.hstack([Om @ P, np.zeros((n_om, n_x)), np.zeros((n_om, n_c))]))
            mids.append(
                np.block(
                    [
                        [-np.eye(n_x) / t0, np.zeros((n_x, n_om))],
                        [np.zeros((n_om, n_x)), np.diag(ts.D) / t0],
                    ]
                )
            )
        rows.append(np.hstack([np.zeros((n_c, n_z)), np.zeros((n_c, n_r)), np.eye(n_c)]))
        rows.append(np.hstack([HS.T, np.zeros((W, n_r)), np.zeros((W, n_c))]))
        D3t = np.diag([tilde[c][2] / tau_v[c] for c in range(n_c)])
        D2t = np.zeros((W, n_c))
        D1t = np.zeros((W, W))
        off = 0
        for c, ch in enumerate(chans):
            D2t[off : off + ch.width, c] = tilde[c][1] / tau_v[c]
            D1t[off : off + ch.width, off : off + ch.width] = tilde[c][0] / tau_v[c]
            off += ch.width
        mids.append(np.block([[D3t, -D2t.T], [-D2t, D1t]]))
        factor = np.vstack(rows)
        middle = _block_diag(mids)
        M = factor.T @ middle @ factor
        worst = max(worst, float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1]))
    return worst


def _block_diag(mats: list[np.ndarray]) -> np.ndarray:
    n = sum(m.shape[0] for m in mats)
    out = np.zeros((n, n))
    off = 0
    for m in mats:
        k = m.shape[0]
        out[off : off + k, off : off + k] = m
        off += k
    return out
