"""Concrete Fourier operators for the torus, the interval and the sphere.

Fast paths: multidimensional FFT on equispaced grids, one length-M FFT on
rank-1 lattices, DCT-II/III at Chebyshev nodes, and nonuniform FFTs (finufft)
at scattered torus nodes in up to three dimensions. Everything else falls back
to direct sums evaluated in row blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import finufft
import numpy as np
from scipy import fft as sfft

from .core import (
    ChebyshevDegrees,
    FourierOperator,
    IndexSet,
    Interval,
    NodeSet,
    SphericalDegrees,
    Sphere2,
    TensorGrid,
    Torus,
    ValidationError,
    lexicographic_grid,
)

# dense blocks above this many entries are not cached
_CACHE_LIMIT = 4_000_000
_BLOCK_ENTRIES = 1_000_000


# --------------------------------------------------------------------------
# Direct sums
# --------------------------------------------------------------------------

class DirectSumOperator(FourierOperator):
    """Exact O(|I| |X|) evaluation from explicitly generated matrix rows."""

    def __init__(self, nodes: NodeSet, index_set: IndexSet):
        self.nodes = nodes
        self.index_set = index_set
        self._dense = None
        if len(nodes) * len(index_set) <= _CACHE_LIMIT:
            self._dense = self._rows(slice(0, len(nodes)))

    def _rows(self, sl) -> np.ndarray:
        raise NotImplementedError

    def _blocks(self):
        if self._dense is not None:
            yield slice(0, len(self.nodes)), self._dense
            return
        step = max(1, _BLOCK_ENTRIES // max(1, len(self.index_set)))
        for start in range(0, len(self.nodes), step):
            sl = slice(start, min(start + step, len(self.nodes)))
            yield sl, self._rows(sl)

    def apply(self, coeffs):
        coeffs = self._check_coeffs(coeffs)
        out = np.empty(self.shape[0], dtype=complex)
        for sl, rows in self._blocks():
            out[sl] = rows @ coeffs
        return out

    def adjoint(self, values):
        values = self._check_values(values)
        out = np.zeros(self.shape[1], dtype=complex)
        for sl, rows in self._blocks():
            out += rows.conj().T @ values[sl]
        return out

    def dense(self):
        if self._dense is not None:
            return self._dense.copy()
        return self._rows(slice(0, len(self.nodes)))


class TorusNDFT(DirectSumOperator):
    """F = exp(2 pi i n.x) at arbitrary torus nodes."""

    def __init__(self, nodes: NodeSet, index_set: IndexSet):
        if not isinstance(nodes.domain, Torus) or index_set.domain != nodes.domain:
            raise ValidationError("torus NDFT needs torus nodes and a matching index set")
        self._freqs = index_set.indices().astype(float)
        super().__init__(nodes, index_set)

    def _rows(self, sl):
        return np.exp(2j * np.pi * (self.nodes.coords[sl] @ self._freqs.T))


class TorusNUFFT(FourierOperator):
    """exp(2 pi i n.x) on a tensor index set at scattered nodes, d <= 3, via finufft."""

    _type2 = {1: finufft.nufft1d2, 2: finufft.nufft2d2, 3: finufft.nufft3d2}
    _type1 = {1: finufft.nufft1d1, 2: finufft.nufft2d1, 3: finufft.nufft3d1}

    def __init__(self, nodes: NodeSet, index_set: TensorGrid, eps: float = 1e-14):
        if not isinstance(nodes.domain, Torus) or index_set.domain != nodes.domain:
            raise ValidationError("torus NUFFT needs torus nodes and a matching index set")
        if not isinstance(index_set, TensorGrid) or index_set.d > 3:
            raise ValidationError("torus NUFFT needs a tensor index set in d <= 3")
        self.nodes = nodes
        self.index_set = index_set
        self.eps = eps
        # finufft wants angles in [-pi, pi); coordinates are already mod 1
        self._angles = [np.ascontiguousarray(2 * np.pi * c) for c in nodes.coords.T]

    def apply(self, coeffs):
        c = self._check_coeffs(coeffs).reshape(self.index_set.N)
        return self._type2[self.index_set.d](*self._angles, np.ascontiguousarray(c),
                                             eps=self.eps, isign=1)

    def adjoint(self, values):
        v = np.ascontiguousarray(self._check_values(values))
        out = self._type1[self.index_set.d](*self._angles, v, self.index_set.N,
                                            eps=self.eps, isign=-1)
        return np.asarray(out).ravel()


class ChebyshevDirect(DirectSumOperator):
    """F = T_n(x) = cos(n arccos x) at arbitrary interval nodes."""

    def __init__(self, nodes: NodeSet, index_set: ChebyshevDegrees):
        self._y = np.arccos(nodes.x)
        super().__init__(nodes, index_set)

    def _rows(self, sl):
        n = np.arange(len(self.index_set))
        return np.cos(np.outer(self._y[sl], n)).astype(complex)


class SphericalDirect(DirectSumOperator):
    """F = Y_{n,k}(x) with orthonormal, Condon-Shortley phased harmonics."""

    def __init__(self, nodes: NodeSet, index_set: SphericalDegrees):
        self._theta, self._phi = nodes.spherical_angles()
        super().__init__(nodes, index_set)

    def _rows(self, sl):
        return spherical_harmonics(self.index_set.N, self._theta[sl], self._phi[sl])


# --------------------------------------------------------------------------
# Spherical harmonics
# --------------------------------------------------------------------------

def normalized_legendre(N, t) -> np.ndarray:
    """Orthonormal associated Legendre values, shape (len(t), N+1, N+1) as [.., n, k].

    Entry [.., n, k] (k <= n) equals the theta-part of Y_{n,k}, so that
    Y_{n,k}(theta, phi) = P[n, k](cos theta) * exp(i k phi) with the
    Condon-Shortley phase. Seeded by the diagonal P_k^k and continued by the
    three-term recurrence in degree.
    """
    t = np.asarray(t, dtype=float)
    s = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    P = np.zeros(t.shape + (N + 1, N + 1))
    P[..., 0, 0] = 1.0 / np.sqrt(4 * np.pi)
    for k in range(1, N + 1):
        P[..., k, k] = -np.sqrt((2 * k + 1) / (2 * k)) * s * P[..., k - 1, k - 1]
    for k in range(0, N):
        P[..., k + 1, k] = np.sqrt(2 * k + 3) * t * P[..., k, k]
        for n in range(k + 2, N + 1):
            a = np.sqrt((4 * n * n - 1) / (n * n - k * k))
            b = np.sqrt(((n - 1) ** 2 - k * k) / (4 * (n - 1) ** 2 - 1))
            P[..., n, k] = a * (t * P[..., n - 1, k] - b * P[..., n - 2, k])
    return P


def spherical_harmonics(N, theta, phi) -> np.ndarray:
    """Matrix [Y_{n,k}(theta_j, phi_j)] with columns in SphericalDegrees order."""
    theta = np.atleast_1d(theta)
    phi = np.atleast_1d(phi)
    P = normalized_legendre(N, np.cos(theta))
    out = np.empty((len(theta), (N + 1) ** 2), dtype=complex)
    col = 0
    for n in range(N + 1):
        for k in range(-n, n + 1):
            if k >= 0:
                out[:, col] = P[:, n, k] * np.exp(1j * k * phi)
            else:
                out[:, col] = (-1) ** k * P[:, n, -k] * np.exp(1j * k * phi)
            col += 1
    return out


# --------------------------------------------------------------------------
# Equispaced torus
# --------------------------------------------------------------------------

class TorusFFT(FourierOperator):
    """Equispaced grid m/N with index set I_N, via d-dimensional FFTs."""

    def __init__(self, N: int, d: int = 1):
        self.N = int(N)
        self.d = int(d)
        self.index_set = TensorGrid(self.N, self.d)
        self.nodes = NodeSet(Torus(self.d), lexicographic_grid(self.N, self.d))

    def apply(self, coeffs):
        c = self._check_coeffs(coeffs).reshape((self.N,) * self.d)
        return sfft.ifftn(np.fft.ifftshift(c), norm="forward").ravel()

    def adjoint(self, values):
        v = self._check_values(values).reshape((self.N,) * self.d)
        return np.fft.fftshift(sfft.fftn(v)).ravel()


def torus_fft_operator(nodes: NodeSet, index_set: TensorGrid) -> TorusFFT:
    """FFT operator after checking that ``nodes`` is exactly the grid of ``index_set``."""
    if not isinstance(index_set, TensorGrid) or len(set(index_set.N)) != 1:
        raise ValidationError("FFT path needs a cubic tensor grid index set")
    op = TorusFFT(index_set.N[0], index_set.d)
    if nodes.coords.shape != op.nodes.coords.shape or not np.array_equal(nodes.coords, op.nodes.coords):
        raise ValidationError("nodes are not the equispaced grid matching the index set")
    return op


def is_equispaced_grid(nodes: NodeSet):
    """Return N if the nodes are the lexicographic grid m/N, else None."""
    if not isinstance(nodes.domain, Torus):
        return None
    d = nodes.domain.d
    N = int(round(len(nodes) ** (1.0 / d)))
    for cand in (N - 1, N, N + 1):
        if cand >= 1 and cand ** d == len(nodes):
            if np.allclose(nodes.coords, lexicographic_grid(cand, d), rtol=0, atol=1e-14):
                return cand
    return None


# --------------------------------------------------------------------------
# Rank-1 lattices
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Rank1Lattice:
    z: tuple
    M: int

    def __init__(self, z, M):
        z = tuple(int(v) for v in np.atleast_1d(z))
        if int(M) < 1:
            raise ValidationError("lattice size must be positive")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "M", int(M))

    @property
    def d(self):
        return len(self.z)

    def coords(self) -> np.ndarray:
        m = np.arange(self.M)[:, None]
        return np.mod(m * np.array(self.z)[None, :], self.M) / self.M

    def nodes(self) -> NodeSet:
        return NodeSet(Torus(self.d), self.coords())

    def to_json(self):
        return {"z": list(self.z), "M": self.M}


class Rank1LatticeOperator(FourierOperator):
    """Evaluation on a rank-1 lattice through one length-M FFT.

    Each frequency n lands on the residue class k = n.z mod M; the values are
    a 1-d inverse DFT of the accumulated class coefficients.
    """

    def __init__(self, lattice: Rank1Lattice, index_set: IndexSet):
        if index_set.domain != Torus(lattice.d):
            raise ValidationError("index set dimension does not match lattice")
        self.lattice = lattice
        self.index_set = index_set
        self.nodes = lattice.nodes()
        self._k = np.mod(index_set.indices() @ np.array(lattice.z), lattice.M)

    def apply(self, coeffs):
        c = self._check_coeffs(coeffs)
        g = np.zeros(self.lattice.M, dtype=complex)
        np.add.at(g, self._k, c)
        return sfft.ifft(g, norm="forward")

    def adjoint(self, values):
        v = self._check_values(values)
        return sfft.fft(v)[self._k]

    def residue_classes(self):
        return self._k.copy()


def rank1_lattice_operator(lattice, index_set) -> Rank1LatticeOperator:
    return Rank1LatticeOperator(lattice, index_set)


def torus_ndft_operator(nodes, index_set) -> TorusNDFT:
    return TorusNDFT(nodes, index_set)


# --------------------------------------------------------------------------
# Cosine transforms
# --------------------------------------------------------------------------

def gamma(n, N):
    """Scaling sqrt(2)/2 at n = 0 and n = N, one otherwise."""
    n = np.asarray(n)
    return np.where((n == 0) | (n == N), np.sqrt(0.5), 1.0)


def dct(kind: str, v) -> np.ndarray:
    """Orthonormal DCT of type I (length N+1), II or III (length N).

    Type I is sqrt(2/N) [g(n) g(m) cos(n m pi / N)], type II is
    sqrt(2/N) [g(n) cos(n (2m+1) pi / (2N))] and type III its transpose.
    """
    v = np.asarray(v)
    if v.ndim != 1 or len(v) < 1:
        raise ValidationError("dct expects a non-empty vector")
    if kind == "I":
        if len(v) < 2:
            raise ValidationError("DCT-I needs length N+1 >= 2")
        return sfft.dct(v, type=1, norm="ortho")
    if kind == "II":
        return sfft.dct(v, type=2, norm="ortho")
    if kind == "III":
        return sfft.dct(v, type=3, norm="ortho")
    raise ValidationError(f"unknown DCT kind {kind!r}")


def chebyshev_nodes(N) -> np.ndarray:
    """First-kind Chebyshev nodes cos((2m+1) pi / (2N)), m = 0..N-1."""
    m = np.arange(N)
    return np.cos((2 * m + 1) * np.pi / (2 * N))


def is_chebyshev_grid(nodes: NodeSet) -> bool:
    if not isinstance(nodes.domain, Interval):
        return False
    return np.allclose(nodes.x, chebyshev_nodes(len(nodes)), rtol=0, atol=1e-14)


class ChebyshevDCT(FourierOperator):
    """T_n at M first-kind Chebyshev nodes, N <= M degrees, via DCT-III / DCT-II."""

    def __init__(self, M: int, N: int | None = None):
        N = M if N is None else N
        if N > M:
            raise ValidationError("DCT path needs at most as many degrees as nodes")
        self.M = int(M)
        self.index_set = ChebyshevDegrees(int(N))
        self.nodes = NodeSet(Interval(), chebyshev_nodes(self.M))
        self._gamma = gamma(np.arange(int(N)), self.M)

    def apply(self, coeffs):
        # f_m = sum_n c_n cos(n (2m+1) pi / 2M) = sqrt(M/2) C^III (c / gamma)
        c = self._check_coeffs(coeffs)
        padded = np.zeros(self.M, dtype=complex)
        padded[: len(c)] = c / self._gamma
        return np.sqrt(self.M / 2) * sfft.dct(padded, type=3, norm="ortho")

    def adjoint(self, values):
        v = self._check_values(values)
        full = sfft.dct(v, type=2, norm="ortho")[: self.shape[1]]
        return np.sqrt(self.M / 2) / self._gamma * full


def chebyshev_operator(nodes: NodeSet, N: int, fast: bool | None = None) -> FourierOperator:
    """Chebyshev operator: DCT route at first-kind nodes, direct cosine sums otherwise."""
    if not isinstance(nodes.domain, Interval):
        raise ValidationError("chebyshev operator needs interval nodes")
    cheb = is_chebyshev_grid(nodes) and N <= len(nodes)
    if fast is None:
        fast = cheb
    if fast:
        if not cheb:
            raise ValidationError("DCT route requires first-kind Chebyshev nodes")
        return ChebyshevDCT(len(nodes), N)
    return ChebyshevDirect(nodes, ChebyshevDegrees(N))


def spherical_operator(nodes: NodeSet, N: int) -> SphericalDirect:
    if not isinstance(nodes.domain, Sphere2):
        raise ValidationError("spherical operator needs sphere nodes")
    return SphericalDirect(nodes, SphericalDegrees(N))


def make_operator(nodes: NodeSet, index_set: IndexSet, lattice: Rank1Lattice | None = None):
    """Pick the fastest available operator for a node/index combination."""
    if isinstance(index_set, ChebyshevDegrees):
        return chebyshev_operator(nodes, index_set.N)
    if isinstance(index_set, SphericalDegrees):
        return spherical_operator(nodes, index_set.N)
    if lattice is not None:
        return Rank1LatticeOperator(lattice, index_set)
    if isinstance(index_set, TensorGrid) and len(set(index_set.N)) == 1:
        N = is_equispaced_grid(nodes)
        if N == index_set.N[0]:
            return TorusFFT(N, index_set.d)
    if isinstance(index_set, TensorGrid) and index_set.d <= 3 \
            and len(nodes) * len(index_set) > _CACHE_LIMIT:
        return TorusNUFFT(nodes, index_set)
    return TorusNDFT(nodes, index_set)
