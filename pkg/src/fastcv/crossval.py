"""Hat-matrix diagonals, cross-validation scores and the search for lambda.

For a regularization parameter lam the hat matrix is
H = F (F^H W F + lam What)^-1 F^H W. Its diagonal turns one Tikhonov solve
into all leave-one-out residuals:

    P(lam) = sum_x |[Hf - f]_x|^2 / (1 - h_xx)^2,
    V(lam) = sum_x |[Hf - f]_x|^2 / (1 - mean h)^2.

Closed forms for h_xx exist when the nodes carry an exact quadrature rule; the
same formulas fed with Voronoi weights give the approximated diagonals and the
scores P~ and V~ (``Pt``/``Vt`` below).
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .core import (
    ChebyshevDegrees,
    FourierOperator,
    Interval,
    SphericalDegrees,
    Sphere2,
    Torus,
    ValidationError,
)
from .tikhonov import (
    LSQR_ITERATIONS,
    LSQR_TOL,
    TikhonovProblem,
    solve_diagonal,
    solve_lsqr,
)
from .transforms import ChebyshevDCT, dct, is_chebyshev_grid

GUARD = 1e-12
BRUTEFORCE_LIMIT = 4096
SCORE_KINDS = ("P", "V", "Pt", "Vt")


@dataclass(frozen=True, eq=False)
class HatDiagonals:
    values: np.ndarray
    kind: str = "exact"  # "exact" or "approximated"

    @property
    def mean(self) -> float:
        # shifted so that equal entries return that entry exactly
        h0 = self.values[0]
        return float(h0 + np.mean(self.values - h0))

    def guarded(self, guard: float = GUARD) -> bool:
        """True if some 1 - h_xx <= guard, i.e. the P-type score diverges."""
        return bool(np.any(1.0 - self.values <= guard))


# --------------------------------------------------------------------------
# Closed-form diagonals
# --------------------------------------------------------------------------

def hat_diagonals_exact_torus(weights, freq_weights, lam, *, kind="exact") -> HatDiagonals:
    """h_xx = w_x sum_n 1 / (1 + lam w_n), valid when the rule is exact on D(I)."""
    s = np.sum(1.0 / (1.0 + lam * np.asarray(freq_weights, float)))
    return HatDiagonals(np.asarray(weights, float) * s, kind)


def _interval_denominators(freq_weights, lam):
    fw = np.asarray(freq_weights, float)
    den = np.pi / 2 + lam * fw
    den[0] = np.pi + lam * fw[0]
    return den


def interval_diagonals_cosine(x, weights, freq_weights, lam) -> np.ndarray:
    """Direct cosine-sum form, O(N |X|).

    h_xx = w_x / 2 * (sum_{n>=1} cos(2n arccos x) / (pi/2 + lam w_n)
                      + sum_{n>=1} 1 / (pi/2 + lam w_n) + 2 / (pi + lam w_0)).
    """
    den = _interval_denominators(freq_weights, lam)
    y = np.arccos(np.asarray(x, float))
    n = np.arange(1, len(den))
    cos_sum = np.cos(2 * np.outer(y, n)) @ (1.0 / den[1:]) if len(n) else np.zeros(len(y))
    const = np.sum(1.0 / den[1:]) + 2.0 / den[0]
    return 0.5 * np.asarray(weights, float) * (cos_sum + const)


def interval_diagonals_dct(weights, freq_weights, lam) -> np.ndarray:
    """Cosine sums at the M first-kind Chebyshev nodes through one DCT-I of length 2M+1.

    With b_0 = 2 sqrt2 / (pi + lam w_0) and b_2n = 1 / (pi/2 + lam w_n) the odd
    outputs give sqrt(M) [C^I b]_{2m+1} = 2/(pi + lam w_0) + sum_n cos(n (2m+1) pi / M) / (pi/2 + lam w_n).
    """
    w = np.asarray(weights, float)
    M = len(w)
    den = _interval_denominators(freq_weights, lam)
    N = len(den)
    if N > M:
        raise ValidationError("more degrees than Chebyshev nodes")
    b = np.zeros(2 * M + 1)
    b[0] = 2 * np.sqrt(2) / den[0]
    b[2:2 * N:2] = 1.0 / den[1:]
    odd = dct("I", b)[1:2 * M:2]
    return 0.5 * w * (np.sqrt(M) * odd + np.sum(1.0 / den[1:]))


def hat_diagonals_exact_interval(x, weights, freq_weights, lam, *, method="auto",
                                 kind="exact") -> HatDiagonals:
    """Diagonals for a rule exact to degree 2N-2 in the Chebyshev measure.

    ``method``: "dct" (first-kind Chebyshev nodes, O(N log N)), "cosine"
    (any rule) or "auto".
    """
    x = np.asarray(x, float)
    cheb = len(x) >= len(freq_weights) and np.allclose(
        x, np.cos((2 * np.arange(len(x)) + 1) * np.pi / (2 * len(x))), rtol=0, atol=1e-14)
    if method == "auto":
        method = "dct" if cheb else "cosine"
    if method == "dct":
        if not cheb:
            raise ValidationError("DCT route requires first-kind Chebyshev nodes")
        return HatDiagonals(interval_diagonals_dct(weights, freq_weights, lam), kind)
    return HatDiagonals(interval_diagonals_cosine(x, weights, freq_weights, lam), kind)


def isotropic_degree_weights(freq_weights, N) -> np.ndarray:
    """Collapse (n, k) frequency weights to per-degree weights, checking isotropy."""
    fw = np.asarray(freq_weights, float)
    if len(fw) == N + 1:
        return fw
    if len(fw) != (N + 1) ** 2:
        raise ValidationError("frequency weights do not match the spherical index set")
    deg = SphericalDegrees(N).degrees()
    n = np.arange(N + 1)
    per_degree = fw[n ** 2 + n]  # k = 0 entry of each degree
    if not np.array_equal(fw, per_degree[deg]):
        raise ValidationError("spherical frequency weights must depend on the degree only")
    return per_degree


def hat_diagonals_exact_sphere(weights, degree_weights, lam, *, kind="exact") -> HatDiagonals:
    """h_xx = w_x / (4 pi) sum_n (2n + 1) / (1 + lam w_n)."""
    dw = np.asarray(degree_weights, float)
    n = np.arange(len(dw))
    s = np.sum((2 * n + 1) / (1.0 + lam * dw)) / (4 * np.pi)
    return HatDiagonals(np.asarray(weights, float) * s, kind)


def closed_form_diagonals(operator: FourierOperator, weights, freq_weights, lam,
                          kind="exact") -> HatDiagonals:
    """Dispatch the closed form matching the operator's domain."""
    dom = operator.nodes.domain
    if isinstance(dom, Torus):
        return hat_diagonals_exact_torus(weights, freq_weights, lam, kind=kind)
    if isinstance(dom, Interval):
        method = "dct" if isinstance(operator, ChebyshevDCT) or is_chebyshev_grid(operator.nodes) \
            else "cosine"
        if method == "dct" and len(freq_weights) > len(operator.nodes):
            method = "cosine"
        return hat_diagonals_exact_interval(operator.nodes.x, weights, freq_weights, lam,
                                            method=method, kind=kind)
    if isinstance(dom, Sphere2):
        dw = isotropic_degree_weights(freq_weights, operator.index_set.N)
        return hat_diagonals_exact_sphere(weights, dw, lam, kind=kind)
    raise ValidationError("unsupported domain")


def hat_diagonals_approximated(operator: FourierOperator, voronoi_weights, freq_weights,
                               lam) -> HatDiagonals:
    """Closed forms evaluated with approximate (Voronoi) weights.

    Values may reach or exceed one; the score code guards the division.
    """
    return closed_form_diagonals(operator, voronoi_weights, freq_weights, lam,
                                 kind="approximated")


# --------------------------------------------------------------------------
# Dense references
# --------------------------------------------------------------------------

def _dense_system(operator_or_matrix, weights, freq_weights, lam):
    is_op = isinstance(operator_or_matrix, FourierOperator)
    shape = operator_or_matrix.shape if is_op else np.shape(operator_or_matrix)
    if max(shape) > BRUTEFORCE_LIMIT:
        raise MemoryError(f"dense assembly of a {shape} system exceeds the brute-force limit "
                          f"of {BRUTEFORCE_LIMIT}")
    F = operator_or_matrix.dense() if is_op else np.asarray(operator_or_matrix, dtype=complex)
    w = np.asarray(weights, float)
    A = (F.conj().T * w) @ F + lam * np.diag(np.asarray(freq_weights, float))
    return F, w, A


def hat_diagonals_bruteforce(operator, weights, freq_weights, lam, *,
                             method="cholesky") -> HatDiagonals:
    """h_xx = w_x F_x A^-1 F_x^H by dense factorization.

    ``method`` "cholesky" uses ||L^-1 F_x^H||^2, "inverse" forms A^-1.
    """
    F, w, A = _dense_system(operator, weights, freq_weights, lam)
    if method == "cholesky":
        L = np.linalg.cholesky(A)
        Z = sla.solve_triangular(L, F.conj().T, lower=True)
        quad = np.sum(np.abs(Z) ** 2, axis=0)
    elif method == "inverse":
        Ainv = np.linalg.inv(A)
        quad = np.real(np.einsum("xi,ij,xj->x", F, Ainv, F.conj()))
    else:
        raise ValidationError(f"unknown method {method!r}")
    return HatDiagonals(w * quad, "exact")


def sherman_morrison_inverse(Ainv, w_x, row) -> np.ndarray:
    """(A - w_x F_x^H F_x)^-1 from A^-1 by the rank-one update."""
    row = np.asarray(row, dtype=complex).reshape(1, -1)
    u = Ainv @ row.conj().T            # A^-1 F_x^H
    v = row @ Ainv                     # F_x A^-1
    h = w_x * (row @ u).item()
    return Ainv + w_x * (u @ v) / (1.0 - h)


def score_loocv_direct(problem: TikhonovProblem, lam, *, method="solve", nodes=None):
    """Leave-one-out score by refitting without each node.

    ``method`` "solve" factorizes A_(x) per node, "sherman-morrison" updates
    A^-1. ``nodes`` restricts the sum to a subset of node indices. Returns
    (P, per-node squared errors).
    """
    F, w, A = _dense_system(problem.operator, problem.weights, problem.freq_weights, lam)
    f = problem.data
    b = F.conj().T @ (w * f)
    idx = range(len(f)) if nodes is None else nodes
    if method == "sherman-morrison":
        Ainv = np.linalg.inv(A)
    terms = []
    for x in idx:
        row = F[x]
        rhs = b - row.conj() * w[x] * f[x]
        if method == "solve":
            Ax = A - w[x] * np.outer(row.conj(), row)
            try:
                c = sla.cho_solve(sla.cho_factor(Ax), rhs)
            except np.linalg.LinAlgError as exc:
                raise ArithmeticError(f"singular leave-one-out system at node {x}") from exc
        elif method == "sherman-morrison":
            u = Ainv @ row.conj()
            h = w[x] * (row @ u)
            if abs(1.0 - h) <= GUARD:
                raise ArithmeticError(f"singular leave-one-out system at node {x}")
            c = Ainv @ rhs + w[x] * u * (row @ (Ainv @ rhs)) / (1.0 - h)
        else:
            raise ValidationError(f"unknown method {method!r}")
        terms.append(abs(row @ c - f[x]) ** 2)
    terms = np.array(terms)
    return float(np.sum(terms)), terms


# --------------------------------------------------------------------------
# Scores
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Scores:
    P: float
    V: float
    kind: str
    residual_norm: float  # ||Hf - f||_W
    guarded: bool

    @property
    def names(self):
        return ("P", "V") if self.kind == "exact" else ("Pt", "Vt")


def scores(residual, diagonals: HatDiagonals, weights=None, guard: float = GUARD) -> Scores:
    """P-type and V-type scores from r = Hf - f and the hat diagonals.

    A P-type score with some 1 - h_xx <= guard is reported as inf instead of
    clamping the denominator.
    """
    r2 = np.abs(np.asarray(residual)) ** 2
    h = diagonals.values
    one_minus = 1.0 - h
    guarded = bool(np.any(one_minus <= guard))
    P = math.inf if guarded else float(np.sum(r2 / one_minus ** 2))
    hm = one_minus[0] - np.mean(h - h[0])
    V = math.inf if hm <= guard else float(np.sum(r2) / hm ** 2)
    w = np.ones_like(r2) if weights is None else np.asarray(weights, float)
    return Scores(P, V, diagonals.kind, float(np.sqrt(np.sum(w * r2))), guarded)


# --------------------------------------------------------------------------
# Algorithm driver
# --------------------------------------------------------------------------

@dataclass
class ScoreCurve:
    """Per-lambda score records; missing entries are None."""

    lambdas: list = field(default_factory=list)
    columns: dict = field(default_factory=lambda: {k: [] for k in CURVE_COLUMNS})
    seconds: list = field(default_factory=list)  # wall time per lambda, if measured

    def add(self, lam, record: dict):
        self.lambdas.append(float(lam))
        for k in CURVE_COLUMNS:
            self.columns[k].append(record.get(k))

    def column(self, name) -> np.ndarray:
        return np.array([np.nan if v is None else v for v in self.columns[name]], dtype=float)

    def sorted(self) -> "ScoreCurve":
        order = np.argsort(self.lambdas)
        out = ScoreCurve()
        for i in order:
            out.add(self.lambdas[i], {k: self.columns[k][i] for k in CURVE_COLUMNS})
        if self.seconds:
            out.seconds = [self.seconds[i] for i in order]
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lambda"] + [CSV_NAMES[k] for k in CURVE_COLUMNS])
            for i, lam in enumerate(self.lambdas):
                writer.writerow([repr(lam)] + [_fmt(self.columns[k][i]) for k in CURVE_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "ScoreCurve":
        out = cls()
        inv = {v: k for k, v in CSV_NAMES.items()}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                rec = {inv[c]: (None if row[c] == "" else float(row[c])) for c in inv if c in row}
                out.add(float(row["lambda"]), rec)
        return out


CURVE_COLUMNS = ("P", "V", "Pt", "Vt", "residual", "l2_error")
CSV_NAMES = {"P": "P", "V": "V", "Pt": "P_tilde", "Vt": "V_tilde",
             "residual": "residual", "l2_error": "l2_error"}


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if math.isinf(v):
        return "inf"
    return repr(float(v))


class CrossValidation:
    """One-solve evaluation of cross-validation scores for a fixed data set.

    ``certified`` states that (nodes, weights) form an exact rule for the
    index set, so F^H W F equals the basis Gram diagonal: the Tikhonov solve
    is then diagonal and the exact scores use the closed-form diagonals.
    Otherwise the solve runs LSQR and exact scores need the dense oracle
    (``oracle=True``). Approximated scores always use the closed forms with
    the given weights.
    """

    def __init__(self, operator: FourierOperator, weights, freq_weights, data, *,
                 certified: bool = False, oracle: bool = False,
                 lsqr_iterations: int = LSQR_ITERATIONS, lsqr_tol: float = LSQR_TOL,
                 truth=None, guard: float = GUARD):
        self.problem = TikhonovProblem(operator, weights, freq_weights, data)
        self.operator = operator
        self.certified = certified
        self.oracle = oracle
        self.lsqr_iterations = lsqr_iterations
        self.lsqr_tol = lsqr_tol
        self.truth = None if truth is None else np.asarray(truth, dtype=complex)
        self.guard = guard

    @property
    def weights(self):
        return self.problem.weights

    @property
    def freq_weights(self):
        return self.problem.freq_weights

    def solve(self, lam):
        if self.certified:
            return solve_diagonal(self.problem, lam, self.operator.gram_diagonal(), check=False)
        return solve_lsqr(self.problem, lam, self.lsqr_iterations, self.lsqr_tol)

    def diagonals(self, lam, kind="exact") -> HatDiagonals:
        if kind == "approximated":
            return hat_diagonals_approximated(self.operator, self.weights, self.freq_weights, lam)
        if self.certified:
            return closed_form_diagonals(self.operator, self.weights, self.freq_weights, lam)
        if self.oracle:
            return hat_diagonals_bruteforce(self.operator, self.weights, self.freq_weights, lam)
        raise ValidationError("exact scores on an uncertified rule need the dense oracle")

    def l2_error(self, coeffs) -> float | None:
        if self.truth is None:
            return None
        norms = self.operator.gram_diagonal()
        return float(np.sqrt(np.sum(norms * np.abs(coeffs - self.truth) ** 2)))

    def evaluate(self, lam, kinds=SCORE_KINDS) -> dict:
        """Scores, residual and L2 error at one lambda, keyed like ScoreCurve."""
        kinds = set(kinds)
        start = time.perf_counter()
        coeffs, report = self.solve(lam)
        residual = self.operator.apply(coeffs) - self.problem.data
        rec = {"coeffs": coeffs, "report": report}
        if kinds & {"P", "V"}:
            s = scores(residual, self.diagonals(lam, "exact"), self.weights, self.guard)
            rec["P"], rec["V"] = s.P, s.V
            rec["guarded"] = s.guarded
        if kinds & {"Pt", "Vt"}:
            s = scores(residual, self.diagonals(lam, "approximated"), self.weights, self.guard)
            rec["Pt"], rec["Vt"] = s.P, s.V
            rec["guarded_tilde"] = s.guarded
        for k in SCORE_KINDS:
            if k not in kinds:
                rec.pop(k, None)
        rec["residual"] = float(np.sqrt(np.sum(self.weights * np.abs(residual) ** 2)))
        rec["l2_error"] = self.l2_error(coeffs)
        rec["seconds"] = time.perf_counter() - start
        return rec

    def score(self, lam, kind) -> float:
        return self.evaluate(lam, (kind,))[kind]

    def curve(self, lambdas, kinds=SCORE_KINDS, workers: int | None = None) -> ScoreCurve:
        """Evaluate every lambda; independent evaluations run on a thread pool."""
        workers = sweep_workers() if workers is None else workers
        lambdas = [float(l) for l in lambdas]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                records = list(pool.map(lambda l: self.evaluate(l, kinds), lambdas))
        else:
            records = [self.evaluate(l, kinds) for l in lambdas]
        out = ScoreCurve()
        for lam, rec in zip(lambdas, records):
            out.add(lam, rec)
        out.seconds = [rec["seconds"] for rec in records]
        return out.sorted()


def sweep_workers() -> int:
    env = os.environ.get("FCV_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# --------------------------------------------------------------------------
# Lambda search
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Minimum:
    lam: float
    value: float
    grid: np.ndarray      # descending lambdas of the coarse scan
    values: np.ndarray    # scores on the coarse grid (inf where guarded)
    at_boundary: bool     # best coarse point sits at an end of the usable range
    guarded_below: float | None  # largest scanned lambda with a non-finite score


def log_grid(lam_lo, lam_hi, points) -> np.ndarray:
    """Log-equispaced lambdas, ascending."""
    if not (0 < lam_lo < lam_hi):
        raise ValidationError("need 0 < lambda_min < lambda_max")
    return np.logspace(np.log10(lam_lo), np.log10(lam_hi), int(points))


def minimize_lambda(score_fn, lam_lo, lam_hi, points: int = 32, *, tol: float = 1e-8,
                    maxiter: int = 200) -> Minimum:
    """Coarse scan from lam_hi downwards, then golden-section refinement in log lam.

    The scan stops being usable at the first non-finite score met from the
    large-lambda side; everything below it is excluded, so the result never
    lies in the region where a guarded score diverges.
    """
    grid = log_grid(lam_lo, lam_hi, points)[::-1]
    values = np.full(len(grid), np.inf)
    cut = len(grid)
    for i, lam in enumerate(grid):
        v = score_fn(lam)
        v = np.inf if v is None or not np.isfinite(v) else float(v)
        values[i] = v
        if not np.isfinite(v):
            cut = i
            break
    if cut == 0:
        raise ArithmeticError("no finite score on the lambda grid")
    best = int(np.argmin(values[:cut]))
    hi = grid[max(best - 1, 0)]
    lo = grid[min(best + 1, cut - 1)]
    lam, val = grid[best], values[best]
    if lo < hi:
        lam_g, val_g = _golden(score_fn, np.log(lo), np.log(hi), tol, maxiter)
        if val_g <= val:
            lam, val = lam_g, val_g
    at_boundary = best == 0 or best == cut - 1
    guarded_below = float(grid[cut]) if cut < len(grid) else None
    return Minimum(float(lam), float(val), grid, values, at_boundary, guarded_below)


def _golden(score_fn, a, b, tol, maxiter):
    def f(t):
        v = score_fn(float(np.exp(t)))
        return np.inf if v is None or not np.isfinite(v) else float(v)

    invphi = (np.sqrt(5) - 1) / 2
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if abs(b - a) <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    t = c if fc <= fd else d
    return float(np.exp(t)), min(fc, fd)
