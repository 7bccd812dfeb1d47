import numpy as np
import pytest
from scipy.special import gammainc

from taylorsos.inference import (
    EmptySetError,
    PersistenceOfExcitationError,
    Posterior,
    SetMembership,
    bayes_posterior,
    bayes_posterior_rows,
    chi2_quantile,
    frequentist_set,
    membership_test,
    outer_ellipsoid,
    sample_credible_sum,
)
from taylorsos.plant import DataProtocol, Dataset, generate_dataset, pendulum, polynomial_model
from taylorsos.poly import Polynomial, PolyMatrix
from taylorsos.structure import RowSpec, build_taylor_structure


def chi2_cdf(x, dof):
    return gammainc(dof / 2, x / 2)


def bisect_quantile(dof, delta, lo=0.0, hi=400.0, iters=200):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, dof) < delta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def scalar_structure(has_input=False):
    return build_taylor_structure(1, 1, 1, [RowSpec(has_input=has_input)])


def scalar_dataset(X, XDOT, sigma, seed=0):
    X = np.asarray(X, dtype=float)[:, None]
    XDOT = np.asarray(XDOT, dtype=float)[:, None]
    return Dataset(
        X=X,
        U=np.zeros_like(X),
        XDOT=XDOT,
        traj_id=np.zeros(len(X), dtype=int),
        t=np.zeros(len(X)),
        sigma=sigma,
        seed=seed,
    )


class TestChi2:
    def test_dof2_closed_form(self):
        # for 2 dof the quantile is -2 ln(1 - delta)
        assert chi2_quantile(2, 0.9) == pytest.approx(4.605170186, abs=1e-8)
        assert chi2_quantile(2, 0.5) == pytest.approx(-2 * np.log(0.5), abs=1e-10)

    def test_zero_delta(self):
        assert chi2_quantile(7, 0.0) == 0.0

    def test_dof1(self):
        assert chi2_quantile(1, 0.95) == pytest.approx(3.841459, abs=1e-6)

    def test_against_bisection_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            dof = int(rng.integers(1, 40))
            delta = float(rng.uniform(0.05, 0.99))
            assert chi2_quantile(dof, delta) == pytest.approx(bisect_quantile(dof, delta), abs=1e-8)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            chi2_quantile(2, 1.0)
        with pytest.raises(ValueError):
            chi2_quantile(2, -0.1)
        with pytest.raises(ValueError):
            chi2_quantile(0, 0.5)


class TestFrequentist:
    def test_exact_data_contains_truth(self):
        # polynomial truth, zero noise, zero remainder: the true vector
        # satisfies every per-sample ball with radius sigma*sqrt(Q) > 0
        x1, x2 = Polynomial.variable(2, 0), Polynomial.variable(2, 1)
        f = PolyMatrix([[x2], [0.5 * x1 - x2]])
        B = PolyMatrix.from_array([[0.0], [1.0]], n_vars=2)
        model = polynomial_model("lin", f, B)
        ts = build_taylor_structure(2, 1, 1)
        ds = generate_dataset(model, DataProtocol(sigma=0.0), seed=5)
        ds = Dataset(**{**ds.__dict__, "sigma": 0.1})  # noise description, data exact
        sm = frequentist_set(ds, ts, delta=0.9)
        theta = model.theta_star(ts)
        assert sm.primal_value(theta) <= 0
        assert membership_test(sm, theta)

    def test_single_sample_interval(self):
        # xdot = theta* x with one record at x=1: the set is the interval
        # |theta - (theta* + d)| <= sigma sqrt(Q_1(delta))
        theta_star, sigma, delta = 1.7, 0.4, 0.9
        radius = sigma * np.sqrt(chi2_quantile(1, delta))
        ts = scalar_structure()
        for d in (0.9 * radius, -0.9 * radius):
            sm = frequentist_set(scalar_dataset([1.0], [theta_star + d], sigma), ts, delta)
            assert membership_test(sm, np.array([theta_star]))
        sm = frequentist_set(scalar_dataset([1.0], [theta_star + 1.2 * radius], sigma), ts, delta)
        assert not membership_test(sm, np.array([theta_star]))

    def test_pendulum_membership_coverage(self):
        # remainder inflation makes the guarantee very conservative, so the
        # empirical rate sits far above delta^S
        model = pendulum()
        rows = [
            RowSpec(state_vars=(0, 1), max_deg=1, has_input=False),
            RowSpec(state_vars=(0,), has_input=True),
        ]
        ts = build_taylor_structure(2, 1, 1, rows, m_bounds={1: {(2, 0): 2 * 9.81 / 0.5}})
        theta = model.theta_star(ts)
        proto = DataProtocol(sigma=0.2)
        hits = 0
        runs = 60
        for seed in range(runs):
            ds = generate_dataset(model, proto, seed=seed)
            try:
                hits += membership_test(frequentist_set(ds, ts, 0.9), theta)
            except EmptySetError:
                pass
        assert hits / runs >= 0.9**60

    def test_cumulative_mode_contains_truth(self):
        ts = scalar_structure()
        rng = np.random.default_rng(8)
        X = rng.uniform(0.5, 2, size=12)
        XDOT = 1.3 * X + rng.normal(0, 0.1, size=12)
        sm = frequentist_set(scalar_dataset(X, XDOT, 0.1), ts, 0.9, mode="cumulative")
        assert sm.meta["mode"] == "cumulative"
        assert membership_test(sm, np.array([1.3]))

    def test_rank_deficiency(self):
        ts = build_taylor_structure(2, 1, 1)
        ds = Dataset(
            X=np.array([[1.0, 0.0]]),
            U=np.array([[0.0]]),
            XDOT=np.array([[0.0, 0.0]]),
            traj_id=np.array([0]),
            t=np.array([0.0]),
            sigma=0.1,
            seed=0,
        )
        with pytest.raises(PersistenceOfExcitationError):
            frequentist_set(ds, ts, 0.9)

    def test_empty_set_reported(self):
        # huge residual with a tiny noise budget excludes every theta
        ts = scalar_structure()
        ds = scalar_dataset([1.0, 1.0], [100.0, -100.0], sigma=0.01)
        with pytest.raises(EmptySetError):
            frequentist_set(ds, ts, 0.5)


class TestPosterior:
    def test_hand_example(self):
        # records (x=1, xdot=2), (x=2, xdot=4), sigma=1: info = 5, mean = 2
        ts = scalar_structure()
        post = bayes_posterior(scalar_dataset([1.0, 2.0], [2.0, 4.0], 1.0), ts)
        assert post.Sigma_inv[0, 0] == pytest.approx(5.0, abs=1e-12)
        assert post.mu1[0] == pytest.approx(2.0, abs=1e-12)
        assert np.all(post.ell == 0)

    def test_sigma_scaling(self):
        ts = scalar_structure()
        d1 = bayes_posterior(scalar_dataset([1.0, 2.0], [2.0, 4.0], 1.0), ts)
        d2 = bayes_posterior(scalar_dataset([1.0, 2.0], [2.0, 4.0], 2.0), ts)
        assert d2.Sigma_inv[0, 0] == pytest.approx(d1.Sigma_inv[0, 0] / 4)
        assert d2.mu1[0] == pytest.approx(d1.mu1[0])
        assert np.allclose(d2.ell, d1.ell)

    def test_zero_remainder_zero_box(self):
        model = pendulum()
        rows = [
            RowSpec(state_vars=(0, 1), max_deg=1, has_input=False),
            RowSpec(state_vars=(0,), has_input=True),
        ]
        ts = build_taylor_structure(2, 1, 1, rows)  # no bounds -> no remainder channel
        ds = generate_dataset(model, DataProtocol(sigma=0.1), seed=2)
        post = bayes_posterior(ds, ts)
        assert np.all(post.ell == 0)

    def test_per_row_matches_joint_blocks(self):
        model = pendulum()
        rows = [
            RowSpec(state_vars=(0, 1), max_deg=1, has_input=False),
            RowSpec(state_vars=(0,), has_input=True),
        ]
        ts = build_taylor_structure(2, 1, 1, rows, m_bounds={1: {(2, 0): 39.24}})
        ds = generate_dataset(model, DataProtocol(sigma=0.1), seed=6)
        joint = bayes_posterior(ds, ts)
        parts = bayes_posterior_rows(ds, ts)
        # rows share no coefficients: the joint information matrix is block
        # diagonal and the marginal means coincide with the joint mean blocks
        sl0, sl1 = ts.theta_slice(0), ts.theta_slice(1)
        assert np.allclose(parts[0].mu1, joint.mu1[sl0])
        assert np.allclose(parts[1].mu1, joint.mu1[sl1])
        assert np.allclose(parts[1].Sigma_inv, joint.Sigma_inv[sl1, sl1])

    def test_credibility_coverage(self):
        # draws from the exact posterior land in the credibility ellipsoid
        # with probability delta
        rng = np.random.default_rng(12)
        Sinv = np.array([[4.0, 1.0], [1.0, 2.0]])
        mu = np.array([1.0, -2.0])
        cov = np.linalg.inv(Sinv)
        L = np.linalg.cholesky(cov)
        draws = mu + rng.normal(size=(10_000, 2)) @ L.T
        q = chi2_quantile(2, 0.9)
        d = draws - mu
        frac = np.mean(np.einsum("ni,ij,nj->n", d, Sinv, d) <= q)
        assert abs(frac - 0.9) < 0.02


class TestOuterEllipsoid:
    def test_degenerate_box_recovers_credibility_ellipsoid(self):
        post = Posterior(mu1=np.zeros(2), Sigma_inv=np.eye(2), sigma=1.0, ell=np.zeros(2))
        sm = outer_ellipsoid(post, 0.9)
        q = chi2_quantile(2, 0.9)
        # Hausdorff distance via support functions over sampled directions
        A = sm.shape_matrix()
        c = sm.center()
        rng = np.random.default_rng(3)
        dirs = rng.normal(size=(500, 2))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        h_out = dirs @ c + np.sqrt(np.einsum("ni,ij,nj->n", dirs, np.linalg.inv(A), dirs))
        h_true = np.sqrt(q * np.einsum("ni,ni->n", dirs, dirs))
        assert np.max(np.abs(h_out - h_true)) <= 1e-2

    def test_minkowski_containment(self):
        rng = np.random.default_rng(4)
        Sinv = np.array([[3.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 0.8]])
        post = Posterior(
            mu1=np.array([0.5, -1.0, 2.0]),
            Sigma_inv=Sinv,
            sigma=0.3,
            ell=np.array([0.4, 0.0, 1.1]),
        )
        sm = outer_ellipsoid(post, 0.85)
        pts = sample_credible_sum(post, 0.85, 10_000, rng)
        vals = np.array([sm.primal_value(p) for p in pts])
        assert np.all(vals <= 1e-9)

    def test_translation_equivariance(self):
        Sinv = np.array([[2.0, 0.3], [0.3, 1.5]])
        ell = np.array([0.2, 0.7])
        v = np.array([3.0, -1.0])
        a = outer_ellipsoid(Posterior(np.zeros(2), Sinv, 1.0, ell), 0.9)
        b = outer_ellipsoid(Posterior(v, Sinv, 1.0, ell), 0.9)
        assert np.allclose(b.center(), a.center() + v, atol=1e-5)
        assert np.allclose(b.shape_matrix(), a.shape_matrix(), atol=1e-5)

    def test_monotone_in_delta(self):
        rng = np.random.default_rng(5)
        post = Posterior(np.array([1.0, 0.5]), np.array([[2.0, 0.1], [0.1, 0.9]]), 1.0, np.array([0.3, 0.3]))
        small = outer_ellipsoid(post, 0.8)
        large = outer_ellipsoid(post, 0.97)
        pts = sample_credible_sum(post, 0.8, 2000, rng)
        assert all(membership_test(large, p, tol=1e-7) for p in pts)

    def test_trace_objective_also_contains(self):
        rng = np.random.default_rng(6)
        post = Posterior(np.array([0.3, -0.2]), np.eye(2) * 2.0, 1.0, np.array([0.5, 0.1]))
        sm = outer_ellipsoid(post, 0.9, objective="trace")
        pts = sample_credible_sum(post, 0.9, 3000, rng)
        assert all(sm.primal_value(p) <= 1e-9 for p in pts)


class TestMembership:
    def make_set(self):
        D1 = np.array([[2.0, 0.2], [0.2, 1.0]])
        c = np.array([1.0, -2.0])
        D2 = -D1 @ c
        D3 = float(c @ D1 @ c) - 1.0
        big = np.block([[-D1, D2[:, None]], [D2[None, :], -np.atleast_2d(D3)]])
        return SetMembership(D1, D2, D3, np.linalg.inv(big), "bayesian", 0.9)

    def test_center_inside(self):
        sm = self.make_set()
        assert membership_test(sm, sm.center())

    def test_far_outside(self):
        sm = self.make_set()
        assert not membership_test(sm, sm.center() + np.array([1e6, 1e6]))

    def test_boundary_scaling(self):
        sm = self.make_set()
        A = sm.shape_matrix()
        w, V = np.linalg.eigh(A)
        c = sm.center()
        for j in range(2):
            b = V[:, j] / np.sqrt(w[j])  # boundary point direction
            assert membership_test(sm, c + (1 - 1e-3) * b)
            assert not membership_test(sm, c + (1 + 1e-3) * b)

    def test_primal_dual_agree_on_random_points(self):
        sm = self.make_set()
        rng = np.random.default_rng(9)
        for _ in range(100):
            theta = sm.center() + rng.normal(scale=2.0, size=2)
            v = sm.primal_value(theta)
            eig = np.linalg.eigvalsh(sm.dual_value(theta))[-1]
            if abs(v) > 1e-9:
                assert (v <= 0) == (eig <= 0)

    def test_round_trip_json(self):
        sm = self.make_set()
        back = SetMembership.from_json(sm.to_json())
        assert np.allclose(back.Delta1, sm.Delta1)
        assert np.allclose(back.dual, sm.dual)
        assert back.provenance == sm.provenance
