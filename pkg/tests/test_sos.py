import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taylorsos.poly import Monomial, Polynomial, PolyMatrix, enumerate_monomials
from taylorsos.sos import (
    SolverOptions,
    SosProgram,
    StructurallyNotSosError,
    export_sdpa,
    solve_sdp,
    verify_sos,
)

X = Polynomial.variable(1, 0)


class TestGram:
    def test_pure_square_with_given_basis(self):
        prog = SosProgram(1)
        rec = prog.add_sos(X * X, "sq", basis=[Monomial((1,))])
        sol = solve_sdp(prog)
        assert sol.ok
        # single Gram entry equals the coefficient of x^2
        assert rec.G.value.shape == (1, 1)
        assert rec.G.value[0, 0] == pytest.approx(1.0, abs=1e-6)

    def test_complete_the_square(self):
        # x^2 + 2x + 2 = (x+1)^2 + 1 is SOS over basis [1, x]
        prog = SosProgram(1)
        rec = prog.add_sos(X * X + 2.0 * X + 2.0, "cts")
        sol = solve_sdp(prog)
        assert sol.ok
        G = rec.G.value
        assert np.linalg.eigvalsh(G)[0] >= -1e-8
        rebuilt = rec.reconstruct().entries[0][0]
        assert rebuilt.allclose(X * X + 2.0 * X + 2.0, atol=1e-6)

    def test_odd_polynomial_rejected(self):
        prog = SosProgram(1)
        with pytest.raises(StructurallyNotSosError):
            prog.add_sos(X, "odd")

    def test_odd_diagonal_in_matrix_rejected(self):
        prog = SosProgram(1)
        M = PolyMatrix([[X**3, Polynomial.zero(1)], [Polynomial.zero(1), X**2]])
        with pytest.raises(StructurallyNotSosError):
            prog.add_sos(M, "oddmat")

    def test_off_diagonal_odd_degree_allowed(self):
        # [[x^2, x^3], [x^3, x^4]] = [x; x^2] [x, x^2]
        prog = SosProgram(1)
        M = PolyMatrix([[X**2, X**3], [X**3, X**4]])
        prog.add_sos(M, "hankel")
        sol = solve_sdp(prog)
        assert sol.ok

    def test_basis_auto_extension(self):
        # declared basis misses the constant; must extend instead of failing
        prog = SosProgram(1)
        rec = prog.add_sos(X * X + 1.0, "ext", basis=[Monomial((1,))])
        assert any(m.degree == 0 for m in rec.basis)
        assert solve_sdp(prog).ok

    def test_negative_constant_infeasible(self):
        prog = SosProgram(1)
        prog.add_sos(X * X - 1.0, "neg")
        sol = solve_sdp(prog)
        assert sol.status == "infeasible"


class TestSolve:
    def test_min_t_eigenvalue(self):
        # min t s.t. [[t, 1], [1, t]] >= 0  => t = 1
        prog = SosProgram(1)
        t = prog.scalar_var("t")
        M = cp_bmat_tt(t)
        prog.add_psd(M, "eig")
        prog.set_objective("min", t)
        sol = solve_sdp(prog)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(1.0, abs=1e-6)

    def test_trace_conflict_infeasible(self):
        import cvxpy as cp

        prog = SosProgram(1)
        G = prog.sym_matrix_var("G", 2)
        prog.add_psd(G, "G")
        prog.add_eq(cp.trace(G), -1.0)
        sol = solve_sdp(prog)
        assert sol.status == "infeasible"

    def test_max_lambda_shift(self):
        # largest lambda with x^2 + 2x + 2 - lambda SOS is the minimum value 1
        prog = SosProgram(1)
        lam = prog.scalar_var("lam")
        expr = X * X + 2.0 * X + Polynomial.constant(1, 1.0) * (2.0 - lam)
        prog.add_sos(expr, "shift")
        prog.set_objective("max", lam)
        sol = solve_sdp(prog)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(1.0, abs=1e-6)

    def test_residuals_reported(self):
        prog = SosProgram(1)
        prog.add_sos(X * X + 1.0, "r")
        sol = solve_sdp(prog)
        assert sol.ok
        assert sol.residuals["max_psd_violation"] <= 1e-6
        assert sol.residuals["max_eq_residual"] <= 1e-6


class TestVerify:
    def test_exact_certificate(self):
        prog = SosProgram(1)
        prog.add_sos(X * X + 2.0 * X + 2.0, "v")
        assert solve_sdp(prog).ok
        rep = verify_sos(prog, samples=300)
        assert rep["worst_mismatch"] <= 1e-6
        assert rep["worst_min_eig"] >= -1e-7

    def test_perturbed_gram_detected(self):
        prog = SosProgram(1)
        rec = prog.add_sos(X * X + 2.0 * X + 2.0, "p")
        assert solve_sdp(prog).ok
        # corrupt the solved Gram: reconstruction no longer matches and the
        # implied polynomial goes negative somewhere
        G = rec.G.value.copy()
        G[0, 0] -= 1.5
        rec.G.value = G
        rebuilt = rec.reconstruct().entries[0][0]
        assert not rebuilt.allclose(X * X + 2.0 * X + 2.0, atol=1e-6)
        xs = np.linspace(-3, 3, 200)
        assert min(rebuilt.evaluate([x]) for x in xs) < 0

    def test_decision_coefficients_resolved(self):
        prog = SosProgram(2)
        p = prog.poly_var("c", 2)
        x1 = Polynomial.variable(2, 0)
        prog.add_sos(p, "psos")
        prog.add_eq(p.coefficient(Monomial((2, 0))), 3.0)
        assert solve_sdp(prog).ok
        assert p.value().coefficient(Monomial((2, 0))) == pytest.approx(3.0, abs=1e-7)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=2, max_size=4))
def test_univariate_squares_always_sos(coeffs):
    """q(x)^2 is SOS for any univariate q."""
    # coefficients tiny enough to underflow when squared break the premise
    coeffs = [0.0 if abs(c) < 1e-6 else c for c in coeffs]
    q = Polynomial(1, {Monomial((i,)): c for i, c in enumerate(coeffs)})
    if q.is_zero():
        return
    prog = SosProgram(1)
    prog.add_sos(q * q, "sq")
    sol = solve_sdp(prog)
    assert sol.ok


class TestExport:
    def test_sdpa_round_structure(self, tmp_path):
        prog = SosProgram(1)
        t = prog.scalar_var("t")
        M = cp_bmat_tt(t)
        prog.add_psd(M, "eig")
        path = tmp_path / "prog.dat-s"
        export_sdpa(prog, str(path))
        text = path.read_text().splitlines()
        assert text[0].endswith("= mDIM")
        assert int(text[0].split()[0]) == 1
        assert text[1].startswith("1 ")  # one block
        # data lines parse as: matno block i j value
        for line in text[4:]:
            parts = line.split()
            assert len(parts) == 5
            int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4])


def cp_bmat_tt(t):
    import cvxpy as cp

    one = np.ones((1, 1))
    tt = cp.reshape(t, (1, 1), order="F")
    return cp.bmat([[tt, one], [one, tt]])
