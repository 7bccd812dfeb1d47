"""Set-membership inference for the unknown series coefficients.

Two treatments of Gaussian derivative noise:

- frequentist: each sample's noise ball (chi-squared radius) plus a
  remainder-radius inflation gives one quadratic constraint on Theta; the
  constraints are summed with unit multipliers into a single ellipsoid that
  contains the true coefficients with probability delta^S over repeated
  experiments.  A cumulative variant bounds the stacked residual instead.

- bayesian: under a uniform prior the posterior is Gaussian; its credibility
  ellipsoid is translated by the data mean and fattened by a hyperrectangle
  that accounts for the unknown remainder contribution to the mean.  The
  Minkowski sum is outer-approximated by a single ellipsoid via a
  semidefinite program whose multipliers certify the containment.

Both produce the same quadratic-form set description, stored in a primal
(Delta1, Delta2, Delta3) block form and a dual matrix form, normalized so
the largest eigenvalue of Delta1 is one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy.special import gammaincinv

from taylorsos.plant import Dataset
from taylorsos.poly import DimensionError
from taylorsos.structure import TaylorStructure

__all__ = [
    "SetMembership",
    "Posterior",
    "PersistenceOfExcitationError",
    "EmptySetError",
    "SolverFailure",
    "chi2_quantile",
    "frequentist_set",
    "bayes_posterior",
    "bayes_posterior_rows",
    "outer_ellipsoid",
    "membership_test",
    "sample_credible_sum",
]

EPS_ELL_DEFAULT = 1e-6  # replacement for degenerate hyperrectangle edges
MEMBERSHIP_TOL = 1e-9  # on the normalized primal quadratic form
LMI_MARGIN = 1e-7  # slack enforced on the outer-approximation LMI


class PersistenceOfExcitationError(RuntimeError):
    """The data information matrix is singular; the feasible set is unbounded."""


class EmptySetError(RuntimeError):
    """The summed quadratic form has no solution (noise realization excluded)."""


class SolverFailure(RuntimeError):
    """Conic solver did not return a usable solution."""

    def __init__(self, msg, status=None):
        super().__init__(msg)
        self.status = status


def chi2_quantile(dof: int, delta: float) -> float:
    """Quantile of the chi-squared distribution with `dof` degrees of freedom.

    Computed by inverting the regularized incomplete gamma CDF.
    """
    if dof < 1 or int(dof) != dof:
        raise ValueError("degrees of freedom must be a positive integer")
    if not 0 <= delta < 1:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    if delta == 0:
        return 0.0
    return float(2.0 * gammaincinv(dof / 2.0, delta))


@dataclass(frozen=True)
class SetMembership:
    """Quadratic-form description of the feasible coefficient set.

    Primal: {Theta : Theta^T Delta1 Theta + 2 Delta2^T Theta + Delta3 <= 0}
    with Delta1 positive definite.  Dual: the (n+1)x(n+1) matrix Delta with
    {Theta : [I; Theta^T]^T Delta [I; Theta^T] <= 0}, equal to the inverse of
    [[-Delta1, Delta2], [Delta2^T, -Delta3]].
    """

    Delta1: np.ndarray
    Delta2: np.ndarray
    Delta3: float
    dual: np.ndarray | None
    provenance: str
    delta: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.Delta1.shape[0]
        if self.Delta1.shape != (n, n) or self.Delta2.shape != (n,):
            raise DimensionError("inconsistent set-membership blocks")

    @property
    def n_theta(self) -> int:
        return self.Delta1.shape[0]

    def center(self) -> np.ndarray:
        return -np.linalg.solve(self.Delta1, self.Delta2)

    def primal_value(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(theta @ self.Delta1 @ theta + 2 * self.Delta2 @ theta + self.Delta3)

    def dual_value(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        n = self.n_theta
        basis = np.vstack([np.eye(n), theta[None, :]])
        return basis.T @ self.dual @ basis

    def shape_matrix(self) -> np.ndarray:
        """A with the set written as {(Theta-c)^T A (Theta-c) <= 1}."""
        c = self.center()
        r2 = float(c @ self.Delta1 @ c - self.Delta3)
        if r2 <= 0:
            raise EmptySetError("set has empty interior")
        return self.Delta1 / r2

    def to_json(self) -> str:
        return json.dumps(
            {
                "Delta1": self.Delta1.tolist(),
                "Delta2": self.Delta2.tolist(),
                "Delta3": self.Delta3,
                "dual": self.dual.tolist() if self.dual is not None else None,
                "provenance": self.provenance,
                "delta": self.delta,
                "meta": {k: v for k, v in self.meta.items() if _json_safe(v)},
            },
            indent=1,
        )

    @staticmethod
    def from_json(text: str) -> "SetMembership":
        d = json.loads(text)
        return SetMembership(
            Delta1=np.array(d["Delta1"]),
            Delta2=np.array(d["Delta2"]),
            Delta3=d["Delta3"],
            dual=np.array(d["dual"]) if d["dual"] is not None else None,
            provenance=d["provenance"],
            delta=d["delta"],
            meta=d.get("meta", {}),
        )


def _json_safe(v) -> bool:
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


def _finalize_set(D1, D2, D3, provenance, delta, meta) -> SetMembership:
    """Normalize, check interior, and attach the dual matrix."""
    scale = float(np.linalg.norm(D1, 2))
    if scale <= 0:
        raise PersistenceOfExcitationError("zero information matrix")
    D1, D2, D3 = D1 / scale, D2 / scale, D3 / scale
    w = np.linalg.eigvalsh(D1)
    if w[0] <= 1e-14:
        raise PersistenceOfExcitationError(
            f"information matrix is singular (min eigenvalue {w[0]:.3g}); more or richer data required"
        )
    interior = float(D2 @ np.linalg.solve(D1, D2)) - D3
    if interior <= 0:
        raise EmptySetError(
            "no coefficient vector satisfies the summed constraints; "
            "the noise description excluded the observed residuals"
        )
    big = np.block([[-D1, D2[:, None]], [D2[None, :], -np.atleast_2d(D3)]])
    dual = np.linalg.inv(big)
    dual = 0.5 * (dual + dual.T)
    return SetMembership(D1, D2, float(D3), dual, provenance, delta, meta)


def frequentist_set(
    ds: Dataset,
    ts: TaylorStructure,
    delta: float,
    mode: str = "per-sample",
    sample_indices=None,
) -> SetMembership:
    """Confidence set from per-sample noise balls.

    mode "per-sample": each record satisfies |xdot - Z Theta|_2 <= sigma
    sqrt(Q_{n_x}(delta)) + r with r the remainder radius at the sampled
    state; the S constraints hold jointly with probability delta^S and are
    combined by unit-multiplier summation (an over-approximation of their
    intersection).  mode "cumulative": one ball on the stacked residual at
    level Q_{n_x S}(delta), holding with probability delta.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if ds.n_x != ts.n_x or ds.n_u != ts.n_u:
        raise DimensionError("dataset does not match structure dimensions")
    r_abs, _ = ts.remainder_bounds_many(ds.X)
    r = np.sqrt(r_abs.sum(axis=1))
    Zs = [ts.regressor(ds.X[s], ds.U[s]) for s in range(ds.S)]
    D1 = sum(Z.T @ Z for Z in Zs)
    D2 = -sum(Z.T @ ds.XDOT[s] for s, Z in enumerate(Zs))
    xdot_sq = float(np.sum(ds.XDOT**2))
    if mode == "per-sample":
        c = ds.sigma * np.sqrt(chi2_quantile(ds.n_x, delta)) + r
        D3 = xdot_sq - float(np.sum(c**2))
        prob = delta**ds.S
    elif mode == "cumulative":
        c = ds.sigma * np.sqrt(chi2_quantile(ds.n_x * ds.S, delta)) + float(np.sqrt(r_abs.sum()))
        D3 = xdot_sq - c**2
        prob = delta
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return _finalize_set(
        D1, D2, D3, "frequentist", delta, {"mode": mode, "joint_probability": prob, "seed": ds.seed}
    )


@dataclass(frozen=True)
class Posterior:
    """Gaussian posterior data and the remainder hyperrectangle edge lengths.

    mu1 is the data part of the mean (the unknown remainder shifts the true
    mean somewhere inside the centred box with edge lengths ell).
    """

    mu1: np.ndarray
    Sigma_inv: np.ndarray
    sigma: float
    ell: np.ndarray
    row: int | None = None  # set when this is a single-row marginal

    @property
    def n_theta(self) -> int:
        return self.mu1.shape[0]

    def to_json(self) -> str:
        return json.dumps(
            {
                "mu1": self.mu1.tolist(),
                "Sigma_inv": self.Sigma_inv.tolist(),
                "sigma": self.sigma,
                "ell": self.ell.tolist(),
                "row": self.row,
            },
            indent=1,
        )

    @staticmethod
    def from_json(text: str) -> "Posterior":
        d = json.loads(text)
        return Posterior(
            mu1=np.array(d["mu1"]),
            Sigma_inv=np.array(d["Sigma_inv"]),
            sigma=d["sigma"],
            ell=np.array(d["ell"]),
            row=d.get("row"),
        )


def bayes_posterior(ds: Dataset, ts: TaylorStructure, sample_indices=None) -> Posterior:
    """Posterior over the full coefficient vector under a uniform prior."""
    if ds.sigma <= 0:
        raise ValueError("Bayesian update requires a positive noise level")
    idx = range(ds.S) if sample_indices is None else sample_indices
    Zs = {s: ts.regressor(ds.X[s], ds.U[s]) for s in idx}
    info = sum(Z.T @ Z for Z in Zs.values())
    w = np.linalg.eigvalsh(info)
    if w[0] <= 1e-12 * max(w[-1], 1.0):
        raise PersistenceOfExcitationError("sum of Z^T Z is singular")
    rhs = sum(Z.T @ ds.XDOT[s] for s, Z in Zs.items())
    mu1 = np.linalg.solve(info, rhs)
    r_abs, _ = ts.remainder_bounds_many(ds.X)
    sqrt_r = np.sqrt(r_abs)  # (S, n_x)
    info_inv = np.linalg.inv(info)
    ell = np.zeros(ts.n_theta)
    for s, Z in Zs.items():
        ell += 2.0 * np.abs(info_inv @ Z.T) @ sqrt_r[s]
    return Posterior(mu1=mu1, Sigma_inv=info / ds.sigma**2, sigma=ds.sigma, ell=ell)


def bayes_posterior_rows(ds: Dataset, ts: TaylorStructure, reduce_box: bool = False) -> list[Posterior]:
    """Independent per-row posteriors.

    Valid because rows share no coefficients here: the joint information
    matrix is block diagonal, so the marginals factorize exactly; each row's
    hyperrectangle only sees that row's remainder bound.

    With reduce_box, each row uses the greedy sample subset that minimizes
    its maximal box edge (samples far from the origin carry remainder bounds
    that can dominate everything else).
    """
    if ds.sigma <= 0:
        raise ValueError("Bayesian update requires a positive noise level")
    r_abs, _ = ts.remainder_bounds_many(ds.X)
    out = []
    for i in range(ts.n_x):
        phis = np.array([ts.row_regressor(i, ds.X[s], ds.U[s]) for s in range(ds.S)])
        if phis.shape[1] == 0:
            out.append(Posterior(np.zeros(0), np.zeros((0, 0)), ds.sigma, np.zeros(0), row=i))
            continue
        sqrt_r = np.sqrt(r_abs[:, i])
        idx = greedy_box_subset(phis, sqrt_r) if reduce_box else np.arange(ds.S)
        info = phis[idx].T @ phis[idx]
        w = np.linalg.eigvalsh(info)
        if w[0] <= 1e-12 * max(w[-1], 1.0):
            raise PersistenceOfExcitationError(f"row {i}: regressor information matrix is singular")
        mu1 = np.linalg.solve(info, phis[idx].T @ ds.XDOT[idx, i])
        info_inv = np.linalg.inv(info)
        ell = 2.0 * np.abs(info_inv @ phis[idx].T) @ sqrt_r[idx]
        out.append(Posterior(mu1=mu1, Sigma_inv=info / ds.sigma**2, sigma=ds.sigma, ell=ell, row=i))
    return out


def greedy_box_subset(phis: np.ndarray, sqrt_r: np.ndarray) -> np.ndarray:
    """Sample subset that greedily minimizes the maximal box edge length.

    Seeds with the lowest-remainder samples until the information matrix is
    invertible, then keeps adding whichever sample shrinks the worst edge,
    stopping when no single addition improves it.
    """
    S, p = phis.shape

    def max_edge(sel: list[int]) -> float:
        info = phis[sel].T @ phis[sel]
        w = np.linalg.eigvalsh(info)
        if w[0] <= 1e-10 * max(w[-1], 1.0):
            return np.inf
        ell = 2.0 * np.abs(np.linalg.inv(info) @ phis[sel].T) @ sqrt_r[sel]
        return float(np.max(ell)) if ell.size else 0.0

    order = np.argsort(sqrt_r, kind="stable")
    sel: list[int] = []
    for s in order:
        sel.append(int(s))
        if len(sel) >= p and max_edge(sel) < np.inf:
            break
    current = max_edge(sel)
    remaining = [int(s) for s in order if int(s) not in set(sel)]
    improved = True
    while improved and remaining:
        improved = False
        scores = [(max_edge(sel + [s]), s) for s in remaining]
        best, s_best = min(scores, key=lambda t: t[0])
        if best < current - 1e-15:
            sel.append(s_best)
            remaining.remove(s_best)
            current = best
            improved = True
    return np.array(sorted(sel))


def outer_ellipsoid(
    post: Posterior,
    delta: float,
    objective: str = "volume",
    eps_ell: float = EPS_ELL_DEFAULT,
    margin: float = LMI_MARGIN,
    solver: str = "CLARABEL",
) -> SetMembership:
    """Smallest ellipsoid certified to contain the credibility sum.

    Solves the containment LMI with multipliers eta_0..eta_n over the
    credibility ellipsoid and the hyperrectangle faces, the offset block
    coupled through a Schur complement; afterwards the offset is tightened
    to Delta2^T Delta1^{-1} Delta2 - 1, which only relaxes the LMI.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    n = post.n_theta
    if n == 0:
        raise ValueError("empty posterior")
    Q = chi2_quantile(n, delta)
    # solve in centred, size-normalized coordinates Theta = mu1 + m0 * Theta''
    # (the construction is translation-equivariant, so centring is exact) and
    # map the ellipsoid back afterwards; raw data can span many decades and
    # breaks the solvers otherwise
    center = np.asarray(post.mu1, dtype=float)
    r_cred = float(np.sqrt(Q / max(np.linalg.eigvalsh(post.Sigma_inv)[0], 1e-300)))
    m0 = max(float(np.max(post.ell, initial=0.0)) / 2.0, r_cred, 1e-12)
    ell = np.maximum(np.asarray(post.ell, dtype=float), eps_ell) / m0
    Sinv = np.asarray(post.Sigma_inv, dtype=float) * m0**2
    mu1 = np.zeros(n)
    s0 = float(np.linalg.norm(Sinv, 2))
    Sinv_n = Sinv / s0

    D1 = cp.Variable((n, n), symmetric=True)
    D2 = cp.Variable(n)
    D3 = cp.Variable()
    eta0 = cp.Variable(nonneg=True)
    # parametrize by the face-multiplier matrix diagonal w_i = 4 eta_i / ell_i^2
    # instead of eta_i itself; degenerate edges otherwise put a 1/eps^2 scale
    # disparity into the LMI and break the solvers
    w_diag = cp.Variable(n, nonneg=True)
    eta_sum = w_diag @ (ell**2 / 4.0)
    Zn = np.zeros((n, n))
    zc = np.zeros((n, 1))
    lhs = cp.bmat(
        [
            [-D1, Zn, -cp.reshape(D2, (n, 1), order="F")],
            [Zn, cp.diag(w_diag), -cp.reshape(cp.multiply(w_diag, mu1), (n, 1), order="F")],
            [
                -cp.reshape(D2, (1, n), order="F"),
                -cp.reshape(cp.multiply(w_diag, mu1), (1, n), order="F"),
                cp.reshape(w_diag @ mu1**2 - eta_sum - D3, (1, 1), order="F"),
            ],
        ]
    ) + eta0 * np.block([[Sinv_n, -Sinv_n, zc], [-Sinv_n, Sinv_n, zc], [zc.T, zc.T, -np.atleast_2d(Q / s0)]])
    schur = cp.bmat([[D1, cp.reshape(D2, (n, 1), order="F")], [cp.reshape(D2, (1, n), order="F"), cp.reshape(D3 + 1, (1, 1), order="F")]])
    constraints = [lhs >> margin * np.eye(2 * n + 1), schur >> 0, D1 >> margin * np.eye(n)]
    if objective == "volume":
        obj = cp.Maximize(cp.log_det(D1))
    elif objective == "trace":
        obj = cp.Maximize(cp.trace(D1))
    else:
        raise ValueError(f"unknown objective {objective!r}")
    prob = cp.Problem(obj, constraints)

    def check(D1v, D2v, D3v, eta0v, wv) -> float:
        M = np.zeros((2 * n + 1, 2 * n + 1))
        M[:n, :n] = -D1v
        M[:n, -1] = -D2v
        M[-1, :n] = -D2v
        M[n : 2 * n, n : 2 * n] = np.diag(wv)
        M[n : 2 * n, -1] = -wv * mu1
        M[-1, n : 2 * n] = -wv * mu1
        M[-1, -1] = wv @ mu1**2 - wv @ (ell**2 / 4.0) - D3v
        M[:n, :n] += eta0v * Sinv_n
        M[:n, n : 2 * n] += -eta0v * Sinv_n
        M[n : 2 * n, :n] += -eta0v * Sinv_n
        M[n : 2 * n, n : 2 * n] += eta0v * Sinv_n
        M[-1, -1] += -eta0v * Q / s0
        return float(np.linalg.eigvalsh(M)[0])

    attempts = [(solver, {})]
    if solver != "SCS":
        attempts.append(("SCS", {"eps": 1e-9, "max_iters": 100_000}))
    last_err = None
    for name, opts in attempts:
        try:
            prob.solve(solver=name, **opts)
        except cp.error.SolverError as e:
            last_err = SolverFailure(f"outer-approximation SDP failed under {name}: {e}")
            continue
        if prob.status in ("infeasible", "unbounded") or D1.value is None:
            last_err = SolverFailure(f"outer-approximation SDP is {prob.status} under {name}", status=prob.status)
            continue
        D1v = 0.5 * (D1.value + D1.value.T)
        D2v = D2.value
        D3v = float(D2v @ np.linalg.solve(D1v, D2v)) - 1.0  # tighten the offset
        eta0v = float(eta0.value)
        wv = np.maximum(np.asarray(w_diag.value), 0.0)
        residual = check(D1v, D2v, D3v, eta0v, wv)
        scale = max(1.0, float(np.linalg.norm(D1v, 2)), eta0v)
        if residual < -1e-8 * scale:
            last_err = SolverFailure(
                f"containment certificate violated by {residual:.3e} under {name}", status=prob.status
            )
            continue
        meta = {
            "objective": objective,
            "eta": [eta0v] + (wv * ell**2 / 4.0).tolist(),
            "Q": Q,
            "eps_ell": eps_ell,
            "coordinate_scale": m0,
            "solver": name,
            "solver_status": prob.status,
            "lmi_residual": residual,
            "row": post.row,
        }
        # map back: Theta'' = (Theta - center) / m0
        A = D1v / m0**2
        b = -A @ center + D2v / m0
        c = float(center @ A @ center) - 2.0 * float(D2v @ center) / m0 + D3v
        return _finalize_set(A, b, c, "bayesian", delta, meta)
    raise last_err


def membership_test(sm: SetMembership, theta, tol: float = MEMBERSHIP_TOL) -> bool:
    """True iff theta satisfies the primal quadratic form up to tol.

    When the dual matrix is stored the dual verdict is computed as well and
    both must agree outside a small indeterminate band around the boundary.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (sm.n_theta,):
        raise DimensionError("membership_test: dimension mismatch")
    v = sm.primal_value(theta)
    verdict = v <= tol
    if sm.dual is not None and abs(v) > 1e-6:
        dual_eigs = np.linalg.eigvalsh(sm.dual_value(theta))
        dual_verdict = dual_eigs[-1] <= tol
        if dual_verdict != verdict:
            raise AssertionError(
                f"primal/dual membership verdicts disagree (primal value {v:.3e}, "
                f"max dual eigenvalue {dual_eigs[-1]:.3e})"
            )
    return bool(verdict)


def sample_credible_sum(
    post: Posterior,
    delta: float,
    n_samples: int,
    rng: np.random.Generator,
    eps_ell: float = EPS_ELL_DEFAULT,
) -> np.ndarray:
    """Rejection-free samples from the credibility-sum set.

    Each point is mean-part + (uniform point of the credibility ellipsoid)
    + (hyperrectangle point); half the box draws are corners so the extreme
    set is exercised.
    """
    n = post.n_theta
    Q = chi2_quantile(n, delta)
    ell = np.maximum(post.ell, eps_ell)
    cov = np.linalg.inv(post.Sigma_inv)
    L = np.linalg.cholesky(0.5 * (cov + cov.T))
    y = rng.normal(size=(n_samples, n))
    y /= np.linalg.norm(y, axis=1, keepdims=True)
    radii = rng.uniform(size=n_samples) ** (1.0 / n)
    ball = y * radii[:, None]
    e = np.sqrt(Q) * ball @ L.T
    box = rng.uniform(-0.5, 0.5, size=(n_samples, n)) * ell
    corners = 0.5 * rng.choice([-1.0, 1.0], size=(n_samples, n)) * ell
    pick = rng.uniform(size=n_samples) < 0.5
    rect = np.where(pick[:, None], corners, box)
    return post.mu1[None, :] + e + rect
