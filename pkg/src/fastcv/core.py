"""Domain-independent data model: domains, index sets, node sets, operators.

Coefficient vectors and sample vectors are plain complex numpy arrays whose
order follows ``IndexSet.indices()`` and ``NodeSet.coords`` respectively.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ValidationError(ValueError):
    """Input violates a precondition (shapes, domains, certification)."""


class GeometryError(ValueError):
    """Degenerate node geometry; ``index`` names the offending node if known."""

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} (node {index})")
        self.index = index


# --------------------------------------------------------------------------
# Domains
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Torus:
    d: int = 1

    def __post_init__(self):
        if int(self.d) < 1:
            raise ValidationError("torus dimension must be >= 1")

    @property
    def measure(self) -> float:
        return 1.0

    @property
    def coord_dim(self) -> int:
        return self.d

    def to_json(self):
        return {"type": "torus", "d": self.d}


@dataclass(frozen=True)
class Interval:
    """[-1, 1] with the Chebyshev measure dx / sqrt(1 - x^2)."""

    @property
    def measure(self) -> float:
        return np.pi

    @property
    def coord_dim(self) -> int:
        return 1

    def to_json(self):
        return {"type": "interval"}


@dataclass(frozen=True)
class Sphere2:
    @property
    def measure(self) -> float:
        return 4 * np.pi

    @property
    def coord_dim(self) -> int:
        return 3

    def to_json(self):
        return {"type": "sphere"}


Domain = Torus | Interval | Sphere2


def domain_from_json(obj) -> Domain:
    kind = obj["type"]
    if kind == "torus":
        return Torus(int(obj["d"]))
    if kind == "interval":
        return Interval()
    if kind == "sphere":
        return Sphere2()
    raise ValidationError(f"unknown domain type {kind!r}")


def parse_domain(name: str) -> Domain:
    """Parse the CLI spelling ``torus<d>``, ``interval`` or ``sphere``."""
    if name.startswith("torus"):
        return Torus(int(name[5:] or 1))
    if name == "interval":
        return Interval()
    if name == "sphere":
        return Sphere2()
    raise ValidationError(f"unknown domain {name!r}")


# --------------------------------------------------------------------------
# Index sets
# --------------------------------------------------------------------------

class IndexSet:
    """Finite frequency index set with a fixed enumeration order."""

    domain: Domain

    def indices(self) -> np.ndarray:
        raise NotImplementedError

    def __len__(self) -> int:
        return len(self.indices())

    def basis_norms(self) -> np.ndarray:
        """Squared L2 norms of the basis functions, i.e. the ideal Gram diagonal."""
        return np.ones(len(self))

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=True)
class TensorGrid(IndexSet):
    """Torus indices Z^d ∩ prod [-N_t/2, N_t/2), lexicographic (last axis fastest)."""

    N: tuple

    def __init__(self, N, d=None):
        if np.isscalar(N):
            N = (int(N),) * (1 if d is None else int(d))
        N = tuple(int(n) for n in N)
        if d is not None and len(N) != d:
            raise ValidationError("grid sizes do not match dimension")
        if any(n < 1 for n in N):
            raise ValidationError("grid sizes must be positive")
        object.__setattr__(self, "N", N)

    @property
    def d(self) -> int:
        return len(self.N)

    @property
    def domain(self):
        return Torus(self.d)

    def axis_ranges(self):
        return [np.arange(-(n // 2), n - n // 2) for n in self.N]

    def indices(self):
        grids = np.meshgrid(*self.axis_ranges(), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def __len__(self):
        return int(np.prod(self.N))

    def to_json(self):
        return {"type": "tensor_grid", "N": list(self.N)}


@dataclass(frozen=True)
class HyperbolicCross(IndexSet):
    """{n in Z^d : prod max(1, |n_j|) <= N}, lexicographic order."""

    N: int
    d: int

    @property
    def domain(self):
        return Torus(self.d)

    def indices(self):
        cache = _HC_CACHE.get((self.N, self.d))
        if cache is None:
            cache = _hyperbolic_cross(self.N, self.d)
            _HC_CACHE[(self.N, self.d)] = cache
        return cache.copy()

    def to_json(self):
        return {"type": "hyperbolic_cross", "N": self.N, "d": self.d}


_HC_CACHE: dict = {}


def _hyperbolic_cross(N, d):
    # depth-first over axes, pruning on the running product
    out = []

    def rec(prefix, prod):
        if len(prefix) == d:
            out.append(prefix)
            return
        limit = N // prod
        for k in range(-limit, limit + 1):
            rec(prefix + (k,), prod * max(1, abs(k)))

    rec((), 1)
    return np.array(out, dtype=int).reshape(-1, d)


@dataclass(frozen=True)
class ChebyshevDegrees(IndexSet):
    """Degrees 0..N-1."""

    N: int

    @property
    def domain(self):
        return Interval()

    def indices(self):
        return np.arange(self.N).reshape(-1, 1)

    def __len__(self):
        return self.N

    def basis_norms(self):
        norms = np.full(self.N, np.pi / 2)
        norms[0] = np.pi
        return norms

    def to_json(self):
        return {"type": "chebyshev", "N": self.N}


@dataclass(frozen=True)
class SphericalDegrees(IndexSet):
    """All (n, k) with 0 <= n <= N, |k| <= n; degree-major, order ascending."""

    N: int

    @property
    def domain(self):
        return Sphere2()

    def indices(self):
        return np.array([(n, k) for n in range(self.N + 1) for k in range(-n, n + 1)],
                        dtype=int).reshape(-1, 2)

    def __len__(self):
        return (self.N + 1) ** 2

    def degrees(self):
        return self.indices()[:, 0]

    def to_json(self):
        return {"type": "spherical", "N": self.N}


def index_set_from_json(obj) -> IndexSet:
    kind = obj["type"]
    if kind == "tensor_grid":
        return TensorGrid(tuple(obj["N"]))
    if kind == "hyperbolic_cross":
        return HyperbolicCross(int(obj["N"]), int(obj["d"]))
    if kind == "chebyshev":
        return ChebyshevDegrees(int(obj["N"]))
    if kind == "spherical":
        return SphericalDegrees(int(obj["N"]))
    raise ValidationError(f"unknown index set type {kind!r}")


def enumerate_indices(index_set: IndexSet) -> list:
    """Ordered list of multi-indices as tuples."""
    return [tuple(int(v) for v in row) for row in index_set.indices()]


def difference_set(index_set) -> np.ndarray:
    """All pairwise differences n1 - n2, deduplicated and sorted lexicographically.

    Only defined for torus index sets; Chebyshev and spherical sets use degree
    doubling instead.
    """
    if isinstance(index_set, (ChebyshevDegrees, SphericalDegrees)):
        raise ValidationError("difference set is only defined for torus index sets")
    idx = index_set.indices() if isinstance(index_set, IndexSet) else np.asarray(index_set)
    idx = idx.reshape(len(idx), -1)
    diffs = (idx[:, None, :] - idx[None, :, :]).reshape(-1, idx.shape[1])
    return np.unique(diffs, axis=0)


# --------------------------------------------------------------------------
# Node sets
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NodeSet:
    """Sample locations in canonical coordinates.

    Torus points are reduced into [0, 1)^d, interval points live in [-1, 1] and
    sphere points are unit vectors in R^3. Exact duplicates are rejected.
    """

    domain: Domain
    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        dim = self.domain.coord_dim
        if c.ndim == 1 and dim == 1:
            c = c.reshape(-1, 1)
        if c.ndim != 2 or c.shape[1] != dim:
            raise ValidationError(f"expected coordinates of shape (M, {dim}), got {c.shape}")
        if len(c) == 0:
            raise ValidationError("empty node set")
        if not np.all(np.isfinite(c)):
            raise ValidationError("non-finite coordinates")
        if isinstance(self.domain, Torus):
            c = np.mod(c, 1.0)
            c[c >= 1.0] = 0.0
        elif isinstance(self.domain, Interval):
            if np.any(np.abs(c) > 1.0):
                raise ValidationError("interval nodes must lie in [-1, 1]")
        else:
            norms = np.linalg.norm(c, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-12):
                raise ValidationError("sphere nodes must be unit vectors")
        _, first, counts = np.unique(c, axis=0, return_index=True, return_counts=True)
        if np.any(counts > 1):
            dup = int(np.sort(first[counts > 1])[0])
            raise GeometryError("duplicate node", index=dup)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    def __len__(self):
        return len(self.coords)

    @property
    def x(self) -> np.ndarray:
        """Interval nodes as a flat array."""
        return self.coords[:, 0]

    def spherical_angles(self):
        """Colatitude theta in [0, pi] and longitude phi in [0, 2 pi)."""
        c = self.coords
        theta = np.arccos(np.clip(c[:, 2], -1.0, 1.0))
        phi = np.mod(np.arctan2(c[:, 1], c[:, 0]), 2 * np.pi)
        return theta, phi

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in self.coords:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, domain: Domain):
        return cls(domain, read_csv_matrix(path, domain.coord_dim))


def sphere_from_angles(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, float)
    phi = np.asarray(phi, float)
    st = np.sin(theta)
    xyz = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)
    return xyz / np.linalg.norm(xyz, axis=-1, keepdims=True)


def read_csv_matrix(path, ncols=None) -> np.ndarray:
    """Numeric CSV rows; a non-numeric first line is a header, '#' lines are comments.

    ``ncols`` None takes the column count from the first data row.
    """
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ValidationError(f"{path}:{lineno}: non-numeric entry")
            if ncols is None:
                ncols = len(vals)
            if len(vals) != ncols:
                raise ValidationError(f"{path}:{lineno}: expected {ncols} columns, got {len(vals)}")
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, ncols or 1)


def write_values_csv(path, values):
    values = np.asarray(values, dtype=complex)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for v in values:
            writer.writerow([repr(float(v.real)), repr(float(v.imag))])


def read_values_csv(path) -> np.ndarray:
    """Sample values: one column (real) or two (real, imaginary)."""
    m = read_csv_matrix(path)
    if m.shape[1] == 1:
        return m[:, 0].astype(complex)
    if m.shape[1] != 2:
        raise ValidationError(f"{path}: expected 1 or 2 value columns, got {m.shape[1]}")
    return m[:, 0] + 1j * m[:, 1]


# --------------------------------------------------------------------------
# Weights
# --------------------------------------------------------------------------

def spatial_weights(w, count=None) -> np.ndarray:
    w = np.asarray(w, dtype=float).ravel()
    if count is not None and len(w) != count:
        raise ValidationError(f"{len(w)} weights for {count} nodes")
    if not np.all(w > 0):
        raise ValidationError("spatial weights must be strictly positive")
    return w


def frequency_weights(w_hat, count=None) -> np.ndarray:
    """Validate frequency weights: non-negative, at most one zero entry."""
    w_hat = np.asarray(w_hat, dtype=float).ravel()
    if count is not None and len(w_hat) != count:
        raise ValidationError(f"{len(w_hat)} frequency weights for {count} indices")
    if np.any(w_hat < 0) or not np.all(np.isfinite(w_hat)):
        raise ValidationError("frequency weights must be finite and non-negative")
    if np.count_nonzero(w_hat == 0) > 1:
        raise ValidationError("only the zero-order frequency weight may vanish")
    return w_hat


# --------------------------------------------------------------------------
# Operators
# --------------------------------------------------------------------------

class FourierOperator:
    """Linear map F from coefficients over ``index_set`` to values at ``nodes``."""

    index_set: IndexSet
    nodes: NodeSet

    @property
    def shape(self):
        return (len(self.nodes), len(self.index_set))

    def apply(self, coeffs) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, values) -> np.ndarray:
        raise NotImplementedError

    def _check_coeffs(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape != (self.shape[1],):
            raise ValidationError(f"expected {self.shape[1]} coefficients, got {coeffs.shape}")
        return coeffs

    def _check_values(self, values):
        values = np.asarray(values, dtype=complex)
        if values.shape != (self.shape[0],):
            raise ValidationError(f"expected {self.shape[0]} values, got {values.shape}")
        return values

    def dense(self) -> np.ndarray:
        """Assemble F column by column through ``apply``."""
        eye = np.eye(self.shape[1], dtype=complex)
        return np.stack([self.apply(col) for col in eye], axis=1)

    def gram_diagonal(self) -> np.ndarray:
        return self.index_set.basis_norms()

    def as_linear_operator(self):
        from scipy.sparse.linalg import LinearOperator

        return LinearOperator(self.shape, matvec=self.apply, rmatvec=self.adjoint, dtype=complex)


def index_set_to_json_str(index_set) -> str:
    return json.dumps(index_set.to_json())


def lexicographic_grid(N, d) -> np.ndarray:
    """Equispaced torus grid m/N, m in [0, N)^d, last axis fastest."""
    grids = np.meshgrid(*([np.arange(N)] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1) / N


def save_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))
