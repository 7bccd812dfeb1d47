import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taylorsos.poly import DimensionError, Monomial, Polynomial, PolyMatrix, enumerate_monomials, jacobian


def P(n):
    return [Polynomial.variable(n, i) for i in range(n)]


class TestEnumerate:
    def test_two_vars_deg_1_to_2(self):
        # hand enumeration: x1, x2, x1^2, x1x2, x2^2
        mons = enumerate_monomials(2, 1, 2)
        assert [m.exps for m in mons] == [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        assert len(mons) == 5

    def test_constant_only(self):
        mons = enumerate_monomials(4, 0, 0)
        assert len(mons) == 1 and mons[0].exps == (0, 0, 0, 0)

    def test_count_stars_and_bars(self):
        # C(5,2) = 10 multi-indices with |alpha| = 3 in 3 vars
        assert len(enumerate_monomials(3, 3, 3)) == 10

    def test_no_duplicates_and_sorted(self):
        mons = enumerate_monomials(3, 0, 4)
        keys = [m.grlex_key() for m in mons]
        assert keys == sorted(keys)
        assert len(set(m.exps for m in mons)) == len(mons)

    def test_bad_range(self):
        with pytest.raises(ValueError):
            enumerate_monomials(2, 3, 1)


class TestMonomial:
    def test_degree_and_factorial(self):
        m = Monomial((2, 1, 0))
        assert m.degree == 3
        assert m.factorial() == 2

    def test_negative_exponent_rejected(self):
        with pytest.raises(ValueError):
            Monomial((1, -1))

    def test_product(self):
        assert (Monomial((1, 0)) * Monomial((1, 2))).exps == (2, 2)


class TestEvaluate:
    def test_product_monomial(self):
        x1, x2 = P(2)
        assert (x1 * x2).evaluate([2.0, 3.0]) == 6.0

    def test_zero_polynomial(self):
        assert Polynomial.zero(3).evaluate([1.0, 2.0, 3.0]) == 0.0

    def test_scaled_square_plus_linear(self):
        x1, x2 = P(2)
        p = x1 * x1 * 0.5 + x2
        assert p.evaluate([2.0, 1.0]) == pytest.approx(3.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            Polynomial.variable(2, 0).evaluate([1.0])

    def test_compiled_matches_evaluate(self):
        rng = np.random.default_rng(0)
        x1, x2, x3 = P(3)
        p = 2.5 * x1**3 - x2 * x3 + 0.5 * x3**2 - 4.0
        f = p.compiled()
        X = rng.normal(size=(50, 3))
        direct = np.array([p.evaluate(row) for row in X])
        assert np.allclose(f(X), direct)
        assert f(X[0]) == pytest.approx(direct[0])


class TestJacobian:
    def test_mixed_vector(self):
        x1, x2 = P(2)
        J = jacobian([x1, x2, 0.5 * x1 * x1])
        expect = [["1", "0"], ["0", "1"], ["x1", "0"]]
        assert np.allclose(J.evaluate([3.0, -1.0]), [[1, 0], [0, 1], [3.0, 0]])
        assert J[2, 0].allclose(x1)

    def test_constant_vector(self):
        c = Polynomial.constant(2, 7.0)
        J = jacobian([c, c])
        assert np.allclose(J.evaluate([0.3, 0.4]), np.zeros((2, 2)))

    def test_bilinear(self):
        x1, x2 = P(2)
        J = jacobian([x1 * x2])
        assert J[0, 0].allclose(x2) and J[0, 1].allclose(x1)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.data())
def test_arithmetic_homomorphism(n, data):
    """(p+q)(x) = p(x)+q(x) and (p*q)(x) = p(x)q(x) on random samples."""
    mons = enumerate_monomials(n, 0, 3)
    coef = st.floats(-5, 5, allow_nan=False)
    pick = st.lists(st.tuples(st.sampled_from(mons), coef), max_size=6)
    p = Polynomial(n, dict(data.draw(pick)))
    q = Polynomial(n, dict(data.draw(pick)))
    x = [data.draw(st.floats(-2, 2, allow_nan=False)) for _ in range(n)]
    assert (p + q).evaluate(x) == pytest.approx(p.evaluate(x) + q.evaluate(x), abs=1e-9)
    assert (p * q).evaluate(x) == pytest.approx(p.evaluate(x) * q.evaluate(x), rel=1e-9, abs=1e-9)


class TestPolyMatrix:
    def test_matmul_matches_numeric(self):
        rng = np.random.default_rng(1)
        x1, x2 = P(2)
        A = PolyMatrix([[x1, x2], [x1 * x2, Polynomial.constant(2, 2.0)]])
        B = PolyMatrix([[x2, Polynomial.zero(2)], [x1, x1 + x2]])
        pt = rng.normal(size=2)
        assert np.allclose((A @ B).evaluate(pt), A.evaluate(pt) @ B.evaluate(pt))

    def test_transpose_add(self):
        x1, x2 = P(2)
        A = PolyMatrix([[x1, x2]])
        S = A.T @ A
        pt = [1.5, -2.0]
        v = A.evaluate(pt)
        assert np.allclose(S.evaluate(pt), v.T @ v)
        assert np.allclose((S + S).evaluate(pt), 2 * v.T @ v)

    def test_empty_blocks(self):
        E = PolyMatrix.zeros(0, 3, 2)
        assert E.shape == (0, 3)
        F = PolyMatrix.zeros(2, 0, 2)
        G = F @ PolyMatrix.zeros(0, 4, 2)
        assert G.shape == (2, 4)
        assert np.allclose(G.evaluate([0.0, 0.0]), np.zeros((2, 4)))

    def test_stacking(self):
        I2 = PolyMatrix.identity(2, 2)
        Z = PolyMatrix.zeros(2, 1, 2)
        H = PolyMatrix.hstack([I2, Z])
        assert H.shape == (2, 3)
        V = PolyMatrix.vstack([H, H])
        assert V.shape == (4, 3)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            PolyMatrix.identity(2, 2) @ PolyMatrix.identity(3, 2)
