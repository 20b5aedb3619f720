"""Weighted Tikhonov problems: diagonal solves under exact quadrature, LSQR otherwise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, lsqr

from .core import FourierOperator, ValidationError, frequency_weights, spatial_weights

LSQR_ITERATIONS = 20
LSQR_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class TikhonovProblem:
    """min_c ||F c - f||_W^2 + lam ||c||_What^2 without the parameter lam."""

    operator: FourierOperator
    weights: np.ndarray
    freq_weights: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        m, n = self.operator.shape
        object.__setattr__(self, "weights", spatial_weights(self.weights, m))
        object.__setattr__(self, "freq_weights", frequency_weights(self.freq_weights, n))
        data = np.asarray(self.data, dtype=complex).ravel()
        if len(data) != m:
            raise ValidationError(f"{len(data)} data values for {m} nodes")
        object.__setattr__(self, "data", data)

    def rhs(self) -> np.ndarray:
        """F^H W f."""
        return self.operator.adjoint(self.weights * self.data)


@dataclass(frozen=True)
class SolverReport:
    path: str  # "diagonal" or "lsqr"
    iterations: int
    residual: float  # ||F^H W (F c - f) + lam What c|| / ||F^H W f||
    converged: bool = True
    breakdown: bool = False


def _check_lambda(lam):
    if not np.isfinite(lam) or lam <= 0:
        raise ValidationError("regularization parameter must be positive and finite")
    return float(lam)


def functional(problem: TikhonovProblem, coeffs, lam) -> float:
    r = problem.operator.apply(coeffs) - problem.data
    c = np.asarray(coeffs)
    return float(np.sum(problem.weights * np.abs(r) ** 2)
                 + lam * np.sum(problem.freq_weights * np.abs(c) ** 2))


def gradient_residual(problem: TikhonovProblem, coeffs, lam, rhs=None) -> float:
    """Relative norm of the normal-equation residual at ``coeffs``."""
    op = problem.operator
    rhs = problem.rhs() if rhs is None else rhs
    g = op.adjoint(problem.weights * op.apply(coeffs)) - rhs + lam * problem.freq_weights * coeffs
    scale = np.linalg.norm(rhs)
    return float(np.linalg.norm(g) / scale) if scale > 0 else float(np.linalg.norm(g))


def solve_diagonal(problem: TikhonovProblem, lam, gram_diag, *, check: bool = True):
    """Exact minimizer when F^H W F equals the diagonal ``gram_diag``.

    ``gram_diag`` must come from a certified quadrature rule; passing None is
    an error rather than a silent fallback.
    """
    lam = _check_lambda(lam)
    if gram_diag is None:
        raise ValidationError("diagonal solve requires a certified Gram diagonal")
    gram_diag = np.broadcast_to(np.asarray(gram_diag, float), problem.freq_weights.shape)
    rhs = problem.rhs()
    coeffs = rhs / (gram_diag + lam * problem.freq_weights)
    res = gradient_residual(problem, coeffs, lam, rhs) if check else 0.0
    return coeffs, SolverReport("diagonal", 0, res)


def solve_lsqr(problem: TikhonovProblem, lam, maxiter: int = LSQR_ITERATIONS,
               tol: float = LSQR_TOL, x0=None, *, precondition: bool = True):
    """LSQR on the stacked system [W^1/2 F; sqrt(lam) What^1/2] c = [W^1/2 f; 0].

    With ``precondition`` the columns are scaled by (g_n + lam w_n)^-1/2,
    g the basis Gram diagonal, which the system matrix approaches when W is
    close to a quadrature rule. The minimizer is unchanged; only the
    iteration count needed to reach it drops.
    """
    lam = _check_lambda(lam)
    op = problem.operator
    m, n = op.shape
    sw = np.sqrt(problem.weights)
    sr = np.sqrt(lam * problem.freq_weights)
    if precondition:
        scale = 1.0 / np.sqrt(op.gram_diagonal() + lam * problem.freq_weights)
    else:
        scale = np.ones(n)

    def matvec(y):
        x = scale * np.ravel(y)
        return np.concatenate([sw * op.apply(x), sr * x])

    def rmatvec(v):
        v = np.ravel(v)
        return scale * (op.adjoint(sw * v[:m]) + sr * v[m:])

    stacked = LinearOperator((m + n, n), matvec=matvec, rmatvec=rmatvec, dtype=complex)
    b = np.concatenate([sw * problem.data, np.zeros(n, dtype=complex)])
    y0 = None if x0 is None else np.asarray(x0, dtype=complex) / scale
    out = lsqr(stacked, b, atol=tol, btol=tol, iter_lim=int(maxiter), x0=y0)
    coeffs, istop, itn = scale * np.asarray(out[0], dtype=complex), out[1], out[2]
    res = gradient_residual(problem, coeffs, lam)
    # istop 0: b is zero, so the zero vector is exact
    breakdown = istop == 0 and np.any(b != 0)
    return coeffs, SolverReport("lsqr", int(itn), res, converged=res <= tol or istop == 0,
                                breakdown=bool(breakdown))


def solve_dense(problem: TikhonovProblem, lam) -> np.ndarray:
    """Normal equations by a dense linear solve; reference for small problems."""
    lam = _check_lambda(lam)
    F = problem.operator.dense()
    A = (F.conj().T * problem.weights) @ F + lam * np.diag(problem.freq_weights)
    return np.linalg.solve(A, F.conj().T @ (problem.weights * problem.data))
