"""Data-driven polynomial state-feedback synthesis.

Pipeline: represent an unknown input-affine system by a truncated power
series plus a bounded remainder, infer a set guaranteed to contain the
unknown series coefficients from noisy derivative samples (frequentist or
Bayesian), and synthesize a stabilizing polynomial state feedback by
sum-of-squares programming.  Validation runs closed-loop simulations and
sampled certificate checks.
"""

from taylorsos.poly import Monomial, Polynomial, PolyMatrix, enumerate_monomials, jacobian

__version__ = "0.1.0"
