import math

import numpy as np
import pytest

from taylorsos.poly import DimensionError, Monomial, Polynomial
from taylorsos.structure import RowSpec, TaylorStructure, build_taylor_structure, remainder_bounds

G_GRAV, LEN, MASS = 9.81, 0.5, 0.2
M2 = 2 * G_GRAV / LEN  # 39.24, bound on all higher x1-derivatives of the pendulum row


def pendulum_structure(k=1):
    # row 1 is known linear regardless of k; row 2 depends on x1 with constant input map
    rows = [
        RowSpec(state_vars=(0, 1), max_deg=1, has_input=False),
        RowSpec(state_vars=(0,), has_input=True, input_deg=0),
    ]
    return build_taylor_structure(2, 1, k, rows, m_bounds={1: {(k + 1, 0): M2}})


class TestBuild:
    def test_pendulum_k1(self):
        ts = pendulum_structure(1)
        assert [m.exps for m in ts.z_mons[0]] == [(1, 0), (0, 1)]
        assert [m.exps for m in ts.z_mons[1]] == [(1, 0)]
        assert ts.G[1].shape == (1, 1)
        assert ts.G[1][0, 0].allclose(Polynomial.constant(2, 1.0))
        assert ts.G[0].shape == (0, 1)
        assert ts.n_theta == 4
        assert [m.exps for m in ts.omega_mons] == [(2, 0)]
        assert ts.omega_scales == (0.5,)
        # single nonzero bound in row 2: D = kappa_2 * M^2
        assert ts.kappa == (0, 1)
        assert np.allclose(ts.D, [M2**2])
        # z = x first, then the remainder monomial
        assert [m.exps for m in ts.z] == [(1, 0), (0, 1), (2, 0)]

    def test_scalar_k2(self):
        ts = build_taylor_structure(1, 1, 2, [RowSpec()], m_bounds={0: {(3,): 1.0}})
        assert [m.exps for m in ts.z_mons[0]] == [(1,), (2,)]
        assert ts.z_scales[0] == (1.0, 0.5)
        assert [m.exps for m in ts.omega_mons] == [(3,)]
        assert ts.omega_scales[0] == pytest.approx(1 / 6)

    def test_zero_bounds_prune_everything(self):
        ts = build_taylor_structure(2, 1, 1, m_bounds={})
        assert ts.n_omega == 0
        assert ts.D.size == 0
        r_abs, r_poly = remainder_bounds(ts, [1.0, 2.0])
        assert np.all(r_abs == 0) and np.all(r_poly == 0)

    def test_partial_prune_keeps_positive_D(self):
        # bounds only on the pure-x1 exponent; the mixed and pure-x2 rows drop
        ts = build_taylor_structure(2, 1, 1, m_bounds={0: {(2, 0): 3.0}, 1: {(2, 0): 4.0}})
        assert [m.exps for m in ts.omega_mons] == [(2, 0)]
        assert np.all(ts.D > 0)
        assert np.allclose(ts.D, [1 * 9.0 + 1 * 16.0])

    def test_x_leading_entries_of_z(self):
        ts = build_taylor_structure(3, 2, 2, m_bounds={0: {(0, 0, 3): 1.0}})
        for i in range(3):
            assert ts.z[i].exps == tuple(1 if j == i else 0 for j in range(3))

    def test_inconsistent_row_count(self):
        with pytest.raises(DimensionError):
            build_taylor_structure(2, 1, 1, [RowSpec()])

    def test_bad_bound_degree(self):
        with pytest.raises(DimensionError):
            build_taylor_structure(2, 1, 1, m_bounds={0: {(1, 0): 1.0}})

    def test_negative_bound(self):
        with pytest.raises(ValueError):
            build_taylor_structure(2, 1, 1, m_bounds={0: {(2, 0): -1.0}})

    def test_extra_z_knob(self):
        ts = build_taylor_structure(2, 1, 1, m_bounds={1: {(2, 0): M2}}, extra_z=[(0, 2)])
        assert ts.z[-1].exps == (0, 2)


class TestSelectors:
    def test_Fi_reproduces_zi(self):
        ts = pendulum_structure(3)
        rng = np.random.default_rng(3)
        for x in rng.uniform(-2, 2, size=(20, 2)):
            zg = ts.z_eval(x)
            for i in range(2):
                zi = np.array([s * m.evaluate(x) for m, s in zip(ts.z_mons[i], ts.z_scales[i])])
                assert np.allclose(ts.F[i] @ zg, zi)
            assert np.allclose(ts.Omega @ zg, ts.omega_eval(x))

    def test_reconstruction_from_selectors(self):
        # stacking [z_i; G_i u]^T S_i Theta equals the regressor product
        ts = pendulum_structure(1)
        rng = np.random.default_rng(4)
        theta = rng.normal(size=ts.n_theta)
        for _ in range(20):
            x = rng.uniform(-2, 2, size=2)
            u = rng.uniform(-1, 1, size=1)
            stacked = np.array(
                [ts.row_regressor(i, x, u) @ ts.S[i] @ theta for i in range(2)]
            )
            assert np.allclose(stacked, ts.regressor(x, u) @ theta)


class TestRemainderBounds:
    def test_pendulum_row2_values(self):
        ts = pendulum_structure(1)
        x = np.array([np.pi / 2, 0.3])
        r_abs, r_poly = remainder_bounds(ts, x)
        expect = (M2 / 2 * (np.pi / 2) ** 2) ** 2
        assert r_abs[1] == pytest.approx(expect)  # ~2343.6
        # true squared truncation error of the sine term is far below the bound
        true_rem = (G_GRAV / LEN) * (math.sin(x[0]) - x[0])
        assert true_rem**2 == pytest.approx(125.43, rel=1e-2)
        assert true_rem**2 <= r_abs[1] <= r_poly[1]

    def test_zero_bounds(self):
        ts = build_taylor_structure(2, 1, 1)
        r_abs, r_poly = remainder_bounds(ts, [0.7, -0.3])
        assert np.all(r_abs == 0) and np.all(r_poly == 0)

    def test_single_term_collapse(self):
        # kappa = 1 makes both bounds coincide
        ts = pendulum_structure(1)
        rng = np.random.default_rng(5)
        X = rng.uniform(-3, 3, size=(100, 2))
        r_abs, r_poly = ts.remainder_bounds_many(X)
        assert np.allclose(r_abs[:, 1], r_poly[:, 1])

    def test_multi_term_chain(self):
        # two nonzero bounds in one row: strict inequality generically
        ts = build_taylor_structure(2, 1, 1, m_bounds={0: {(2, 0): 1.0, (1, 1): 2.0}})
        r_abs, r_poly = remainder_bounds(ts, [1.0, 1.0])
        # R_abs = (1/2*1 + 2*1)^2 = 6.25 ; R_poly = 2*(1/4 + 4) = 8.5
        assert r_abs[0] == pytest.approx(6.25)
        assert r_poly[0] == pytest.approx(8.5)
        assert r_abs[0] <= r_poly[0]


class TestLemmaChain:
    """Truth model with exactly known derivative bounds: full bound chain."""

    def test_chain_on_sine_model(self):
        # f1 = x2 (linear, zero bounds), f2 = (g/l) sin(x1): every higher
        # x1-derivative is bounded by g/l exactly.
        for k in (1, 2, 3):
            rows = [RowSpec(state_vars=(0, 1), has_input=False), RowSpec(state_vars=(0,), has_input=True)]
            ts = build_taylor_structure(2, 1, k, rows, m_bounds={1: {(k + 1, 0): G_GRAV / LEN}})
            rng = np.random.default_rng(17 + k)
            X = rng.uniform(-3, 3, size=(10_000, 2))
            r_abs, r_poly = ts.remainder_bounds_many(X)
            # true remainder of row 2 after subtracting the degree-k series
            x1 = X[:, 0]
            series = np.zeros_like(x1)
            for j in range(1, k + 1):
                dj = [0, 1, 0, -1][j % 4]  # j-th derivative of sin at 0
                series += dj * x1**j / math.factorial(j)
            rem = (G_GRAV / LEN) * (np.sin(x1) - series)
            assert np.all(rem**2 <= r_abs[:, 1] + 1e-9)
            # kappa = 1 makes the two bounds mathematically equal; allow roundoff
            assert np.all(r_abs[:, 1] <= r_poly[:, 1] * (1 + 1e-12) + 1e-12)
            # stacked square against the remainder basis quadratic form
            omega = np.array([[s * m.evaluate(x) for m, s in zip(ts.omega_mons, ts.omega_scales)] for x in X])
            quad = np.einsum("nj,j,nj->n", omega, ts.D, omega)
            assert np.all(rem**2 <= quad + 1e-9)


class TestSerialization:
    def test_bit_exact_round_trip(self):
        ts = pendulum_structure(3)
        text = ts.to_json()
        ts2 = TaylorStructure.from_json(text)
        assert ts2.to_json() == text
        assert ts2.z == ts.z
        assert all(np.array_equal(a, b) for a, b in zip(ts2.S, ts.S))
        assert all(np.array_equal(a, b) for a, b in zip(ts2.F, ts.F))
        assert np.array_equal(ts2.Omega, ts.Omega)
        assert np.array_equal(ts2.D, ts.D)
        x, u = [0.37, -1.2], [0.8]
        assert np.allclose(ts2.regressor(x, u), ts.regressor(x, u))
