"""Quadrature rules, Voronoi weights and quadrature diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, Voronoi, cKDTree

from .core import (
    ChebyshevDegrees,
    GeometryError,
    IndexSet,
    Interval,
    NodeSet,
    SphericalDegrees,
    Sphere2,
    TensorGrid,
    Torus,
    ValidationError,
    domain_from_json,
    lexicographic_grid,
    parse_domain,
    read_csv_matrix,
    sphere_from_angles,
    spatial_weights,
)
from .transforms import (
    Rank1Lattice,
    Rank1LatticeOperator,
    chebyshev_nodes,
    is_chebyshev_grid,
    is_equispaced_grid,
    make_operator,
)

GRAM_CERTIFY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes with positive weights.

    ``exactness`` is the certified polynomial degree, or None for approximate
    (Voronoi) rules. ``gram_error`` holds the max-abs deviation of the weighted
    Gram matrix from its analytic diagonal when it was measured.
    """

    nodes: NodeSet
    weights: np.ndarray
    exactness: int | None = None
    index_set: IndexSet | None = None
    gram_error: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", spatial_weights(self.weights, len(self.nodes)))

    @property
    def approximate(self) -> bool:
        return self.exactness is None and self.gram_error is None

    @property
    def certified(self) -> bool:
        if self.gram_error is not None:
            return self.gram_error < GRAM_CERTIFY_TOL
        return self.exactness is not None

    def integrate(self, values) -> complex:
        return np.sum(self.weights * np.asarray(values))


# --------------------------------------------------------------------------
# Gram diagnostics
# --------------------------------------------------------------------------

def gram_deviation(operator, weights, *, probes: int = 6, seed: int = 0) -> float:
    """max |F^H W F - D| with D the analytic basis Gram diagonal.

    Dense for moderate sizes; large operators are probed with random vectors,
    which yields max_j |((F^H W F - D) v)_j| / max|v|, a lower bound that is
    sharp for the structured rules handled here.
    """
    weights = np.asarray(weights, dtype=float)
    target = operator.gram_diagonal()
    m, n = operator.shape
    if m * n <= 4_000_000 and n <= 3000:
        F = operator.dense()
        G = (F.conj().T * weights) @ F
        G[np.diag_indices(n)] -= target
        return float(np.abs(G).max())
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(probes):
        v = np.exp(2j * np.pi * rng.random(n))
        r = operator.adjoint(weights * operator.apply(v)) - target * v
        worst = max(worst, float(np.abs(r).max()))
    return worst


def certify(operator, weights, tol: float = GRAM_CERTIFY_TOL):
    """Return (passed, deviation) for the Gram diagnostic."""
    dev = gram_deviation(operator, weights)
    return dev < tol, dev


# --------------------------------------------------------------------------
# Exact rules
# --------------------------------------------------------------------------

def equispaced_torus_rule(d: int, N: int) -> QuadratureRule:
    """N^d grid points m/N with weights N^-d.

    Exact for every frequency with max |n_t| <= N - 1, which covers the
    difference set of I_N; ``exactness`` records that bound.
    """
    if N < 1:
        raise ValidationError("N must be >= 1")
    nodes = NodeSet(Torus(d), lexicographic_grid(N, d))
    return QuadratureRule(nodes, np.full(N ** d, float(N) ** -d), exactness=N - 1,
                          index_set=TensorGrid(N, d))


def lattice_collisions(lattice: Rank1Lattice, index_set: IndexSet) -> int:
    """Number of frequencies sharing a residue class n.z mod M with another."""
    k = np.mod(index_set.indices() @ np.array(lattice.z), lattice.M)
    _, counts = np.unique(k, return_counts=True)
    return int(np.sum(counts[counts > 1]))


def rank1_rule(lattice: Rank1Lattice, index_set: IndexSet) -> QuadratureRule:
    """Uniform 1/M weights on a lattice, with the Gram diagnostic attached.

    The rule is reconstructing for ``index_set`` iff ``rule.certified``.
    """
    op = Rank1LatticeOperator(lattice, index_set)
    w = np.full(lattice.M, 1.0 / lattice.M)
    if lattice.M * len(index_set) <= 4_000_000 and len(index_set) <= 3000:
        err = gram_deviation(op, w)
    else:
        # Gram entries are exactly 1 on residue collisions and 0 elsewhere
        err = 1.0 if lattice_collisions(lattice, index_set) else 0.0
    return QuadratureRule(op.nodes, w, exactness=None, index_set=index_set, gram_error=err)


def chebyshev_rule(N: int) -> QuadratureRule:
    """First-kind Chebyshev nodes with weights pi/N, exact to degree 2N-2."""
    if N < 1:
        raise ValidationError("N must be >= 1")
    nodes = NodeSet(Interval(), chebyshev_nodes(N))
    return QuadratureRule(nodes, np.full(N, np.pi / N), exactness=2 * N - 2,
                          index_set=ChebyshevDegrees(N))


def _legendre_pair(n, x):
    """(P_{n-1}(x), P_n(x)) by the three-term recurrence."""
    p0, p1 = np.ones_like(x), x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    return p0, p1


def gauss_legendre(n: int, tol: float = 1e-14, maxiter: int = 100):
    """Gauss-Legendre nodes (descending) and weights on [-1, 1] by Newton's method."""
    if n < 1:
        raise ValidationError("need at least one node")
    i = np.arange(1, n + 1)
    x = np.cos(np.pi * (i - 0.25) / (n + 0.5))
    for _ in range(maxiter):
        p0, p1 = _legendre_pair(n, x)
        step = p1 / (n * (x * p1 - p0) / (x * x - 1))
        x = x - step
        if np.max(np.abs(step)) < tol:
            break
    else:
        raise ArithmeticError("Gauss-Legendre Newton iteration did not converge")
    p0, p1 = _legendre_pair(n, x)
    dp = n * (x * p1 - p0) / (x * x - 1)
    return x, 2.0 / ((1 - x * x) * dp * dp)


def gauss_tensor_sphere_rule(N: int) -> QuadratureRule:
    """(N+1) Gauss-Legendre colatitudes x (2N+2) longitudes, exact to degree 2N+1."""
    if N < 0:
        raise ValidationError("N must be >= 0")
    t, wt = gauss_legendre(N + 1)
    nphi = 2 * N + 2
    phi = 2 * np.pi * np.arange(nphi) / nphi
    T, PHI = np.meshgrid(np.arccos(t), phi, indexing="ij")
    coords = sphere_from_angles(T.ravel(), PHI.ravel())
    weights = np.repeat(wt, nphi) * (2 * np.pi / nphi)
    return QuadratureRule(NodeSet(Sphere2(), coords), weights, exactness=2 * N + 1,
                          index_set=SphericalDegrees(N))


def _platonic(name):
    phi = (1 + np.sqrt(5)) / 2
    if name == "tetrahedron":
        pts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float)
        degree = 2
    elif name == "octahedron":
        pts = np.vstack([np.eye(3), -np.eye(3)])
        degree = 3
    elif name == "icosahedron":
        pts = []
        for a in (-1, 1):
            for b in (-phi, phi):
                pts += [[0, a, b], [a, b, 0], [b, 0, a]]
        pts = np.array(pts, float)
        degree = 5
    else:
        raise ValidationError(f"unknown design {name!r}")
    return pts / np.linalg.norm(pts, axis=1, keepdims=True), degree


def spherical_design(name: str) -> QuadratureRule:
    """Equal-weight platonic designs: tetrahedron (2), octahedron (3), icosahedron (5)."""
    pts, degree = _platonic(name)
    nodes = NodeSet(Sphere2(), pts)
    w = np.full(len(pts), 4 * np.pi / len(pts))
    index_set = SphericalDegrees(degree // 2)
    return QuadratureRule(nodes, w, exactness=degree, index_set=index_set,
                          gram_error=gram_deviation(make_operator(nodes, index_set), w))


# --------------------------------------------------------------------------
# Voronoi weights
# --------------------------------------------------------------------------

def voronoi_weights_torus(nodes: NodeSet) -> np.ndarray:
    """Areas of the periodic Voronoi cells on T^1 or T^2 (total 1)."""
    d = nodes.domain.d
    if d == 1:
        return _voronoi_circle(nodes.coords[:, 0], 1.0)
    if d == 2:
        return _voronoi_torus2(nodes.coords)[0]
    raise ValidationError("Voronoi weights are implemented for d = 1, 2")


def _voronoi_circle(t, period):
    order = np.argsort(t, kind="stable")
    ts = t[order]
    if len(ts) == 1:
        return np.array([period])
    gaps = np.diff(np.r_[ts, ts[0] + period])
    w_sorted = 0.5 * (gaps + np.roll(gaps, 1))
    w = np.empty_like(w_sorted)
    w[order] = w_sorted
    return w


def _tiled_voronoi(coords):
    M = len(coords)
    shifts = np.array([(a, b) for a in (0, -1, 1) for b in (0, -1, 1)], float)
    tiled = (coords[None, :, :] + shifts[:, None, :]).reshape(-1, 2)
    try:
        vor = Voronoi(tiled)
    except Exception as exc:  # qhull errors on degenerate input
        raise GeometryError(f"planar Voronoi failed: {exc}") from exc
    return vor, M


def _voronoi_torus2(coords):
    if len(coords) < 2:
        raise GeometryError("need at least two nodes on T^2", index=0)
    vor, M = _tiled_voronoi(coords)
    w = np.empty(M)
    radius = np.empty(M)
    for i in range(M):
        region = vor.regions[vor.point_region[i]]
        if not region or -1 in region:
            raise GeometryError("unbounded Voronoi cell", index=i)
        verts = vor.vertices[region]
        rel = verts - coords[i]
        ang = np.arctan2(rel[:, 1], rel[:, 0])
        rel = rel[np.argsort(ang)]
        x, y = rel[:, 0], rel[:, 1]
        w[i] = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        radius[i] = np.sqrt(np.max(x * x + y * y))
        # tiling covers every neighbor only while cells stay within half a period
        if radius[i] >= 0.5:
            raise GeometryError("Voronoi cell too large for 3x3 periodic tiling", index=i)
    return w, radius


def voronoi_weights_interval(nodes: NodeSet) -> np.ndarray:
    """Voronoi weights in y = arccos x on [0, pi] (total pi)."""
    y = np.arccos(nodes.x)
    order = np.argsort(y, kind="stable")
    ys = y[order]
    if len(ys) > 1 and np.any(np.diff(ys) <= 0):
        bad = int(order[1:][np.diff(ys) <= 0][0])
        raise GeometryError("duplicate arccos value", index=bad)
    M = len(ys)
    w_sorted = np.empty(M)
    if M == 1:
        w_sorted[0] = np.pi
    else:
        w_sorted[0] = 0.5 * (ys[0] + ys[1])
        w_sorted[1:-1] = 0.5 * (ys[2:] - ys[:-2])
        w_sorted[-1] = np.pi - 0.5 * (ys[-2] + ys[-1])
    w = np.empty(M)
    w[order] = w_sorted
    return w


def spherical_triangle_area(a, b, c) -> np.ndarray:
    """Spherical excess of triangles with unit-vector corners (L'Huilier)."""
    def arc(u, v):
        return np.arctan2(np.linalg.norm(np.cross(u, v), axis=-1), np.sum(u * v, axis=-1))

    la, lb, lc = arc(b, c), arc(c, a), arc(a, b)
    s = 0.5 * (la + lb + lc)
    prod = np.tan(s / 2) * np.tan((s - la) / 2) * np.tan((s - lb) / 2) * np.tan((s - lc) / 2)
    return 4 * np.arctan(np.sqrt(np.clip(prod, 0.0, None)))


def _sphere_delaunay(coords):
    if len(coords) < 4:
        raise GeometryError("need at least four nodes on the sphere")
    try:
        hull = ConvexHull(coords)
    except Exception as exc:
        raise GeometryError(f"convex hull failed (coplanar nodes?): {exc}") from exc
    if len(hull.vertices) != len(coords):
        missing = sorted(set(range(len(coords))) - set(hull.vertices))
        raise GeometryError("node not on the convex hull", index=missing[0])
    normals = hull.equations[:, :3]
    centers = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return hull.simplices, centers


def voronoi_weights_sphere(nodes: NodeSet) -> np.ndarray:
    """Spherical Voronoi cell areas (total 4 pi).

    Delaunay triangles are the convex hull facets; their outward normals are
    the Voronoi vertices. Each cell is fanned from its generator.
    """
    coords = nodes.coords
    simplices, centers = _sphere_delaunay(coords)
    incident = [[] for _ in range(len(coords))]
    for f, tri in enumerate(simplices):
        for v in tri:
            incident[v].append(f)
    w = np.empty(len(coords))
    for i, faces in enumerate(incident):
        x = coords[i]
        c = centers[faces]
        e1 = np.cross(x, [1.0, 0.0, 0.0] if abs(x[0]) < 0.9 else [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(x, e1)
        ang = np.arctan2(c @ e2, c @ e1)
        c = c[np.argsort(ang)]
        cn = np.roll(c, -1, axis=0)
        w[i] = np.sum(spherical_triangle_area(np.broadcast_to(x, c.shape), c, cn))
    return w


def voronoi_weights(nodes: NodeSet) -> np.ndarray:
    if isinstance(nodes.domain, Torus):
        return voronoi_weights_torus(nodes)
    if isinstance(nodes.domain, Interval):
        return voronoi_weights_interval(nodes)
    return voronoi_weights_sphere(nodes)


def voronoi_rule(nodes: NodeSet) -> QuadratureRule:
    return QuadratureRule(nodes, voronoi_weights(nodes))


# --------------------------------------------------------------------------
# Mesh norm and the Voronoi error bound
# --------------------------------------------------------------------------

def mesh_norm(nodes: NodeSet, candidates: int = 200_000, seed: int = 0) -> float:
    """Covering radius max_y min_x dist(y, x) in the domain metric.

    Torus: wrap-around Euclidean distance; interval: distance in arccos x;
    sphere: geodesic distance. Exact from the Voronoi vertices for T^1, T^2,
    the interval and the sphere; for d >= 3 a periodic nearest-neighbor scan
    over random candidates, which can only underestimate.
    """
    dom = nodes.domain
    if isinstance(dom, Interval):
        y = np.sort(np.arccos(nodes.x))
        gaps = np.diff(y) / 2 if len(y) > 1 else np.array([0.0])
        return float(max(y[0], np.max(gaps), np.pi - y[-1]))
    if isinstance(dom, Sphere2):
        simplices, centers = _sphere_delaunay(nodes.coords)
        corner = nodes.coords[simplices[:, 0]]
        cosang = np.clip(np.sum(corner * centers, axis=1), -1.0, 1.0)
        return float(np.max(np.arccos(cosang)))
    if dom.d == 1:
        if len(nodes) == 1:
            return 0.5
        t = np.sort(nodes.coords[:, 0])
        gaps = np.diff(np.r_[t, t[0] + 1.0])
        return float(np.max(gaps) / 2)
    if dom.d == 2 and len(nodes) >= 2:
        return float(np.max(_voronoi_torus2(nodes.coords)[1]))
    rng = np.random.default_rng(seed)
    cand = rng.random((candidates, dom.d))
    tree = cKDTree(nodes.coords, boxsize=1.0)
    dist, _ = tree.query(cand)
    return float(np.max(dist))


def quadrature_error_bound_check(nodes: NodeSet, weights, f, lipschitz: float,
                                 integral: complex, delta: float | None = None) -> dict:
    """Both sides of |Q f - int f| <= L * delta * vol for a Voronoi-weighted rule.

    ``f`` is evaluated on the canonical coordinates (for the interval on x).
    """
    delta = mesh_norm(nodes) if delta is None else delta
    q = np.sum(np.asarray(weights) * f(nodes.coords if nodes.domain.coord_dim > 1 else nodes.x))
    return {"lhs": float(abs(q - integral)),
            "rhs": float(lipschitz * delta * nodes.domain.measure),
            "delta": float(delta)}


# --------------------------------------------------------------------------
# Rule detection and external rules
# --------------------------------------------------------------------------

def detect_rule(nodes: NodeSet, index_set: IndexSet) -> QuadratureRule | None:
    """Recognise exact node families and return the matching certified rule."""
    dom = nodes.domain
    if isinstance(dom, Torus):
        N = is_equispaced_grid(nodes)
        if N is not None:
            rule = equispaced_torus_rule(dom.d, N)
            if isinstance(index_set, TensorGrid) and all(n <= N for n in index_set.N):
                return rule
            return None
        lattice = detect_lattice(nodes)
        if lattice is not None:
            rule = rank1_rule(lattice, index_set)
            return rule if rule.certified else None
        return None
    if isinstance(dom, Interval):
        if is_chebyshev_grid(nodes) and isinstance(index_set, ChebyshevDegrees) \
                and index_set.N <= len(nodes):
            return chebyshev_rule(len(nodes))
        return None
    M = len(nodes)
    n = int(round(np.sqrt(M / 2))) - 1
    if n >= 0 and 2 * (n + 1) ** 2 == M:
        rule = gauss_tensor_sphere_rule(n)
        if np.allclose(rule.nodes.coords, nodes.coords, rtol=0, atol=1e-13) \
                and isinstance(index_set, SphericalDegrees) and index_set.N <= n:
            return rule
    return None


def detect_lattice(nodes: NodeSet) -> Rank1Lattice | None:
    """If nodes are (m z mod M)/M in order m = 0..M-1, return the lattice."""
    M = len(nodes)
    c = nodes.coords
    if M < 2 or np.any(c[0] != 0):
        return None
    z = np.rint(c[1] * M).astype(int)
    lat = Rank1Lattice(z, M)
    if np.allclose(lat.coords(), c, rtol=0, atol=1e-12):
        return lat
    return None


def load_rule(path, index_set: IndexSet | None = None) -> QuadratureRule:
    """Read a rule descriptor JSON and validate it with the Gram diagnostic.

    Descriptor: {"domain": "sphere" | {...}, "nodes_csv": path,
    "weights": [...] | "uniform", "exactness_degree": int | null}.
    """
    path = Path(path)
    desc = json.loads(path.read_text())
    dom = desc["domain"]
    dom = parse_domain(dom) if isinstance(dom, str) else domain_from_json(dom)
    csv_path = Path(desc["nodes_csv"])
    if not csv_path.is_absolute():
        csv_path = path.parent / csv_path
    nodes = NodeSet(dom, read_csv_matrix(csv_path, dom.coord_dim))
    w = desc.get("weights", "uniform")
    if w == "uniform":
        w = np.full(len(nodes), dom.measure / len(nodes))
    degree = desc.get("exactness_degree")
    if index_set is None and degree is not None:
        if isinstance(dom, Sphere2):
            index_set = SphericalDegrees(degree // 2)
        elif isinstance(dom, Interval):
            index_set = ChebyshevDegrees(degree // 2 + 1)
    gram = None
    if index_set is not None:
        gram = gram_deviation(make_operator(nodes, index_set), w)
        if degree is not None and gram >= GRAM_CERTIFY_TOL:
            raise ValidationError(f"rule fails its Gram diagnostic (deviation {gram:.3e})")
    return QuadratureRule(nodes, np.asarray(w, float), exactness=degree,
                          index_set=index_set, gram_error=gram)
