"""Ground-truth plants, fixed-step simulation, and noisy dataset generation.

Derivative records are computed exactly from the vector field at the sampled
states and then corrupted with synthetic Gaussian noise; no finite
differencing of trajectories is involved, so the noise entering the
inference stage is exactly the assumed model.

Randomness uses numpy's counter-based Philox generator so that every
artifact is reproducible from its recorded seed.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from taylorsos.poly import DimensionError, Monomial, Polynomial, PolyMatrix
from taylorsos.structure import TaylorStructure

__all__ = [
    "TruthModel",
    "Dataset",
    "DataProtocol",
    "DivergenceError",
    "simulate",
    "generate_dataset",
    "pendulum",
    "polynomial_model",
]


class DivergenceError(RuntimeError):
    """Simulation produced a non-finite state."""

    def __init__(self, t_last: float, times=None, states=None):
        super().__init__(f"state became non-finite after t = {t_last:.6g}")
        self.t_last = t_last
        self.times = times
        self.states = states


@dataclass(frozen=True)
class TruthModel:
    """Input-affine plant xdot = f(x) + B(x) u with polynomial input matrix.

    ``drift_series(i, alpha)`` returns the alpha-th partial derivative of f_i
    at the origin and is used to read off the true series coefficients for
    coverage experiments; it is derived automatically for polynomial drifts.
    """

    name: str
    n_x: int
    n_u: int
    f: Callable[[np.ndarray], np.ndarray]
    B_poly: PolyMatrix
    f_poly: PolyMatrix | None = None
    drift_series: Callable[[int, tuple[int, ...]], float] | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.B_poly.shape != (self.n_x, self.n_u):
            raise DimensionError("input matrix shape mismatch")
        f0 = np.asarray(self.f(np.zeros(self.n_x)), dtype=float)
        if not np.all(np.abs(f0) < 1e-9):
            raise ValueError(f"drift must vanish at the origin, got f(0) = {f0}")
        if self.B_poly.degree() == 0:
            const = self.B_poly.evaluate(np.zeros(self.n_x))
            object.__setattr__(self, "_B_fn", lambda x: const)
        else:
            object.__setattr__(self, "_B_fn", self.B_poly.compiled())

    def B(self, x) -> np.ndarray:
        return self._B_fn(x)

    def xdot(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return np.asarray(self.f(x), dtype=float) + self.B(x) @ u

    def theta_star(self, ts: TaylorStructure) -> np.ndarray:
        """True coefficient vector for the given structure."""
        series = self.drift_series
        if series is None:
            if self.f_poly is None:
                raise ValueError(f"model {self.name!r} cannot report series coefficients")
            series = _poly_series(self.f_poly)
        theta = np.zeros(ts.n_theta)
        off = 0
        for i in range(ts.n_x):
            for m in ts.z_mons[i]:
                theta[off] = series(i, m.exps)
                off += 1
            # input-map block: coefficient of each G_i monomial in B[i, j]
            gi = ts.G[i]
            for r in range(gi.rows):
                j, mono = _g_row_layout(gi, r)
                theta[off] = float(self.B_poly[i, j].coefficient(mono))
                off += 1
        return theta


def _g_row_layout(gi: PolyMatrix, r: int) -> tuple[int, Monomial]:
    """Which (input column, monomial) the r-th coefficient of a G_i block multiplies."""
    for j in range(gi.cols):
        p = gi[r, j]
        if not p.is_zero():
            (mono, c), = p.terms.items()
            return j, mono
    raise ValueError("empty input-map row")


def _poly_series(f_poly: PolyMatrix):
    def series(i: int, exps: tuple[int, ...]) -> float:
        m = Monomial(exps)
        return float(f_poly[i, 0].coefficient(m)) * m.factorial()

    return series


def pendulum(g: float = 9.81, length: float = 0.5, mass: float = 0.2) -> TruthModel:
    """Inverted pendulum about its upright equilibrium.

    x1 is the angle, x2 the angular velocity; the input is a torque scaled
    by 1/(m l^2).  Every x1-derivative of the gravity term is bounded by g/l.
    """
    a = g / length
    b = 1.0 / (mass * length**2)

    def f(x):
        return np.array([x[1], a * math.sin(x[0])])

    def series(i, exps):
        if i == 0:
            return 1.0 if exps == (0, 1) else 0.0
        if exps[1] != 0:
            return 0.0
        return a * [0.0, 1.0, 0.0, -1.0][exps[0] % 4]  # derivatives of sin at 0

    B = PolyMatrix.from_array(np.array([[0.0], [b]]), n_vars=2)
    return TruthModel(
        name="pendulum",
        n_x=2,
        n_u=1,
        f=f,
        B_poly=B,
        drift_series=series,
        params={"g": g, "length": length, "mass": mass},
    )


def polynomial_model(name: str, f_poly: PolyMatrix, B_poly: PolyMatrix) -> TruthModel:
    """Exact polynomial plant from a drift column vector and input matrix."""
    if f_poly.cols != 1:
        raise DimensionError("drift must be a column vector")
    f_fn = f_poly.compiled()
    return TruthModel(
        name=name,
        n_x=f_poly.rows,
        n_u=B_poly.cols,
        f=lambda x: f_fn(x).ravel(),
        B_poly=B_poly,
        f_poly=f_poly,
    )


def simulate(
    model: TruthModel,
    x0: Sequence[float],
    u_fn: Callable[[float], np.ndarray],
    T: float,
    h: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-step classical Runge-Kutta integration of the controlled plant.

    Returns (times, states) with floor(T/h)+1 rows.  Raises DivergenceError
    carrying the partial trajectory when the state leaves the finite range.
    """
    if h <= 0 or T < h:
        raise ValueError("need h > 0 and T >= h")
    n = int(math.floor(T / h + 1e-12))
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (model.n_x,):
        raise DimensionError("initial state dimension mismatch")
    times = np.linspace(0.0, n * h, n + 1)
    states = np.empty((n + 1, model.n_x))
    states[0] = x
    for s in range(n):
        t = times[s]
        k1 = model.xdot(x, u_fn(t))
        k2 = model.xdot(x + 0.5 * h * k1, u_fn(t + 0.5 * h))
        k3 = model.xdot(x + 0.5 * h * k2, u_fn(t + 0.5 * h))
        k4 = model.xdot(x + h * k3, u_fn(t + h))
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e12:
            raise DivergenceError(t, times[: s + 1], states[: s + 1])
        states[s + 1] = x
    return times, states


@dataclass(frozen=True)
class DataProtocol:
    """How experiments are run: trajectory count, sampling grid, excitation boxes."""

    n_traj: int = 10
    samples_per_traj: int = 6
    sample_dt: float = 0.1
    x0_box: tuple = ((-0.1, 0.1), (-0.1, 0.1))
    u_box: tuple = ((-1.0, 1.0),)
    sigma: float = 0.05
    integration_h: float = 1e-3
    sample_start: float = 0.0  # first sampling instant; samples at start + j*dt
    max_retries: int = 10

    def __post_init__(self):
        if self.n_traj < 1 or self.samples_per_traj < 1 or self.sample_dt <= 0:
            raise ValueError("protocol fields must be positive")
        if self.sigma < 0:
            raise ValueError("noise level must be non-negative")
        if any(lo > hi for lo, hi in self.x0_box) or any(lo > hi for lo, hi in self.u_box):
            raise ValueError("boxes must be nonempty")


@dataclass(frozen=True)
class Dataset:
    """S derivative records (xdot_i, x_i, u_i) plus noise metadata."""

    X: np.ndarray  # (S, n_x) sampled states
    U: np.ndarray  # (S, n_u) applied inputs
    XDOT: np.ndarray  # (S, n_x) noisy derivative measurements
    traj_id: np.ndarray  # (S,)
    t: np.ndarray  # (S,)
    sigma: float
    seed: int
    protocol: DataProtocol | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.X.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if not (self.X.shape[0] == self.U.shape[0] == self.XDOT.shape[0]):
            raise DimensionError("inconsistent sample counts")
        if self.X.shape != self.XDOT.shape:
            raise DimensionError("state and derivative dimensions differ")

    @property
    def S(self) -> int:
        return self.X.shape[0]

    @property
    def n_x(self) -> int:
        return self.X.shape[1]

    @property
    def n_u(self) -> int:
        return self.U.shape[1]

    # -- serialization: CSV of records plus a JSON sidecar --------------------

    def to_csv(self) -> str:
        cols = (
            ["traj_id", "t"]
            + [f"x{i + 1}" for i in range(self.n_x)]
            + [f"u{i + 1}" for i in range(self.n_u)]
            + [f"xdot{i + 1}" for i in range(self.n_x)]
        )
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for s in range(self.S):
            row = [str(int(self.traj_id[s])), f"{self.t[s]:.17g}"]
            row += [f"{v:.17g}" for v in self.X[s]]
            row += [f"{v:.17g}" for v in self.U[s]]
            row += [f"{v:.17g}" for v in self.XDOT[s]]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def sidecar(self) -> str:
        doc = {"sigma": self.sigma, "seed": self.seed, "meta": self.meta}
        if self.protocol is not None:
            doc["protocol"] = {
                "n_traj": self.protocol.n_traj,
                "samples_per_traj": self.protocol.samples_per_traj,
                "sample_dt": self.protocol.sample_dt,
                "x0_box": [list(b) for b in self.protocol.x0_box],
                "u_box": [list(b) for b in self.protocol.u_box],
                "sigma": self.protocol.sigma,
                "integration_h": self.protocol.integration_h,
                "sample_start": self.protocol.sample_start,
                "max_retries": self.protocol.max_retries,
            }
        return json.dumps(doc, indent=1)

    @staticmethod
    def from_csv(csv_text: str, sidecar_text: str) -> "Dataset":
        lines = [ln for ln in csv_text.strip().splitlines() if ln]
        header = lines[0].split(",")
        n_x = sum(1 for c in header if c.startswith("x") and not c.startswith("xdot"))
        n_u = sum(1 for c in header if c.startswith("u"))
        rows = [ln.split(",") for ln in lines[1:]]
        arr = np.array([[float(v) for v in r] for r in rows])
        side = json.loads(sidecar_text)
        proto = None
        if "protocol" in side:
            p = side["protocol"]
            proto = DataProtocol(
                n_traj=p["n_traj"],
                samples_per_traj=p["samples_per_traj"],
                sample_dt=p["sample_dt"],
                x0_box=tuple(tuple(b) for b in p["x0_box"]),
                u_box=tuple(tuple(b) for b in p["u_box"]),
                sigma=p["sigma"],
                integration_h=p["integration_h"],
                sample_start=p["sample_start"],
                max_retries=p["max_retries"],
            )
        return Dataset(
            X=arr[:, 2 : 2 + n_x],
            U=arr[:, 2 + n_x : 2 + n_x + n_u],
            XDOT=arr[:, 2 + n_x + n_u :],
            traj_id=arr[:, 0].astype(int),
            t=arr[:, 1],
            sigma=side["sigma"],
            seed=side["seed"],
            protocol=proto,
            meta=side.get("meta", {}),
        )


def generate_dataset(model: TruthModel, protocol: DataProtocol, seed: int) -> Dataset:
    """Draw trajectories under constant random inputs and record noisy derivatives.

    Each trajectory starts uniformly in the x0 box, holds a constant input
    uniform in the u box, and is sampled at sample_start + j*sample_dt.
    Derivative records are f(x)+B(x)u at the sampled state plus N(0, sigma^2 I)
    noise.  Diverging trajectories are redrawn (bounded retries, recorded).
    """
    if len(protocol.x0_box) != model.n_x or len(protocol.u_box) != model.n_u:
        raise DimensionError("protocol boxes do not match model dimensions")
    rng = np.random.Generator(np.random.Philox(seed))
    m = protocol.samples_per_traj
    T = protocol.sample_start + (m - 1) * protocol.sample_dt
    # integration step that divides the sampling interval exactly
    n_sub = max(1, round(protocol.sample_dt / protocol.integration_h))
    h = protocol.sample_dt / n_sub
    stride = n_sub

    X, U, XDOT, tid, tt = [], [], [], [], []
    retries = 0
    for traj in range(protocol.n_traj):
        for attempt in range(protocol.max_retries + 1):
            x0 = np.array([rng.uniform(lo, hi) for lo, hi in protocol.x0_box])
            u = np.array([rng.uniform(lo, hi) for lo, hi in protocol.u_box])
            try:
                if T > 0:
                    times, states = simulate(model, x0, lambda _t: u, T, h)
                else:
                    times, states = np.array([0.0]), x0[None, :]
                break
            except DivergenceError:
                retries += 1
        else:
            raise DivergenceError(T) from None
        start_idx = round(protocol.sample_start / h) if T > 0 else 0
        for j in range(m):
            idx = min(start_idx + j * stride, len(times) - 1)
            xs = states[idx]
            noise = rng.normal(0.0, protocol.sigma, size=model.n_x) if protocol.sigma > 0 else np.zeros(model.n_x)
            X.append(xs)
            U.append(u)
            XDOT.append(model.xdot(xs, u) + noise)
            tid.append(traj)
            tt.append(times[idx])
    return Dataset(
        X=np.array(X),
        U=np.array(U),
        XDOT=np.array(XDOT),
        traj_id=np.array(tid),
        t=np.array(tt),
        sigma=protocol.sigma,
        seed=seed,
        protocol=protocol,
        meta={"retries": retries},
    )
