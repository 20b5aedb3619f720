"""Test functions, noise, node generators and reproducible experiment presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import numpy as np

from .core import (
    ChebyshevDegrees,
    HyperbolicCross,
    IndexSet,
    Interval,
    NodeSet,
    SphericalDegrees,
    Sphere2,
    TensorGrid,
    Torus,
    ValidationError,
    lexicographic_grid,
    parse_domain,
    sphere_from_angles,
)
from .quadrature import (
    chebyshev_rule,
    equispaced_torus_rule,
    gauss_tensor_sphere_rule,
    rank1_rule,
    spherical_design,
    voronoi_weights,
)
from .transforms import ChebyshevDCT, Rank1Lattice, make_operator


def _data(name):
    return json.loads(resources.files("fastcv").joinpath("data", name).read_text())


# --------------------------------------------------------------------------
# Test functions
# --------------------------------------------------------------------------

def peaks(x, y):
    """The classic sum of three Gaussian bells on [-3, 3]^2."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return (3 * (1 - x) ** 2 * np.exp(-x ** 2 - (y + 1) ** 2)
            - 10 * (x / 5 - x ** 3 - y ** 5) * np.exp(-x ** 2 - y ** 2)
            - np.exp(-(x + 1) ** 2 - y ** 2) / 3)


def b2(x):
    """Hat function 2 sqrt3 (x on [0, 1/2), 1 - x on [1/2, 1)), one-periodic."""
    x = np.mod(np.asarray(x, float), 1.0)
    return 2 * np.sqrt(3) * np.where(x < 0.5, x, 1 - x)


def quadratic_bspline(t):
    """Centered quadratic B-spline supported on |t| <= 3/2."""
    a = np.abs(np.asarray(t, float))
    return np.where(a <= 0.5, 0.75 - a ** 2, np.where(a <= 1.5, 0.5 * (1.5 - a) ** 2, 0.0))


class TestFunction:
    __test__ = False  # not a pytest class
    name = ""
    domain = None

    def __call__(self, coords):
        raise NotImplementedError

    def truth(self, index_set: IndexSet) -> np.ndarray:
        """Expansion coefficients of the function on ``index_set``."""
        raise NotImplementedError


class Peaks2D(TestFunction):
    """Peaks on the 2-torus, [0, 1)^2 mapped affinely onto [-3, 3]^2."""

    name = "peaks2d"
    domain = Torus(2)

    def __call__(self, coords):
        c = np.asarray(coords, float).reshape(-1, 2)
        return peaks(6 * c[:, 0] - 3, 6 * c[:, 1] - 3)

    def truth(self, index_set):
        return _torus_truth(self, index_set)


class Peaks1D(TestFunction):
    """Peaks with second argument zero, on the circle or on [-1, 1] (x -> 3x)."""

    name = "peaks1d"

    def __init__(self, domain=Torus(1)):
        self.domain = domain

    def __call__(self, coords):
        x = np.asarray(coords, float).ravel()
        if isinstance(self.domain, Interval):
            return peaks(3 * x, 0.0)
        return peaks(6 * x - 3, 0.0)

    def truth(self, index_set):
        if isinstance(self.domain, Interval):
            return _chebyshev_truth(self, index_set)
        return _torus_truth(self, index_set)


class TensorBSpline2(TestFunction):
    """prod_j B2(x_j), unit L2 norm on the d-torus."""

    name = "bspline"

    def __init__(self, d: int):
        self.d = int(d)
        self.domain = Torus(self.d)

    def __call__(self, coords):
        c = np.asarray(coords, float).reshape(-1, self.d)
        return np.prod(b2(c), axis=1)

    def truth(self, index_set):
        return bspline_fourier_coefficients(index_set)


class SphereBSplineSum(TestFunction):
    """Sum of quadratic B-spline bumps in geodesic distance; centers from package data."""

    name = "sphere-bumps"
    domain = Sphere2()

    def __init__(self, bumps=None):
        bumps = _data("sphere_bumps.json")["bumps"] if bumps is None else bumps
        self.centers = sphere_from_angles([b["theta"] for b in bumps], [b["phi"] for b in bumps])
        self.radii = np.array([b["radius"] for b in bumps], float)
        self.amplitudes = np.array([b["amplitude"] for b in bumps], float)

    def __call__(self, coords):
        c = np.asarray(coords, float).reshape(-1, 3)
        dist = np.arccos(np.clip(c @ self.centers.T, -1.0, 1.0))
        return quadratic_bspline(1.5 * dist / self.radii) @ self.amplitudes

    def truth(self, index_set, degree=None):
        N = index_set.N
        rule = gauss_tensor_sphere_rule(max(4 * N, 64) if degree is None else degree)
        op = make_operator(rule.nodes, index_set)
        return op.adjoint(rule.weights * self(rule.nodes.coords))


TEST_FUNCTIONS = {"peaks2d": Peaks2D, "peaks1d": Peaks1D, "bspline": TensorBSpline2,
                  "sphere-bumps": SphereBSplineSum}


def make_test_function(name: str, domain) -> TestFunction:
    if name == "peaks1d":
        return Peaks1D(domain)
    if name == "bspline":
        return TensorBSpline2(domain.d)
    if name not in TEST_FUNCTIONS:
        raise ValidationError(f"unknown test function {name!r}")
    return TEST_FUNCTIONS[name]()


def eval_test_function(f: TestFunction, nodes: NodeSet) -> np.ndarray:
    if nodes.domain != f.domain:
        raise ValidationError(f"{f.name} lives on {f.domain}, nodes on {nodes.domain}")
    return np.asarray(f(nodes.coords), float)


def bspline_fourier_coefficients(index_set: IndexSet) -> np.ndarray:
    """Exact Fourier coefficients of the tensor hat function on a torus index set."""
    k = np.asarray(index_set.indices())
    # integer k: sin(k pi/2)^2 is 1 for odd k and 0 for even k, cos(k pi) = -1 for odd k
    odd = np.mod(k, 2) == 1
    safe = np.where(odd, k, 1) * np.pi / 2
    factor = np.where(k == 0, 1.0, np.where(odd, -1.0 / safe ** 2, 0.0))
    return np.sqrt(0.75) ** k.shape[1] * np.prod(factor, axis=1)


def _torus_truth(f, index_set, oversample=4, minimum=512):
    """Fourier coefficients by a fine midpoint-grid FFT.

    Midpoints keep second order accuracy when the periodic extension jumps at
    the cell border, as peaks does.
    """
    d = index_set.d
    if not isinstance(index_set, TensorGrid):
        raise ValidationError("peaks truth needs a tensor index set")
    L = max(minimum, oversample * max(index_set.N))
    vals = f(lexicographic_grid(L, d) + 0.5 / L).reshape((L,) * d)
    full = np.fft.fftshift(np.fft.fftn(vals)) / L ** d
    k = index_set.indices()
    return full[tuple((k + L // 2).T)] * np.exp(-1j * np.pi * k.sum(axis=1) / L)


def _chebyshev_truth(f, index_set, minimum=4096):
    """Chebyshev coefficients c_n with f = sum c_n T_n, from a fine first-kind grid."""
    L = max(minimum, 4 * index_set.N)
    op = ChebyshevDCT(L, index_set.N)
    return np.real(op.adjoint(f(op.nodes.x)) * (np.pi / L) / index_set.basis_norms())


# --------------------------------------------------------------------------
# Noise and nodes
# --------------------------------------------------------------------------

def add_noise(values, level: float, seed=None) -> np.ndarray:
    """Gaussian noise with standard deviation level * RMS(values)."""
    if level < 0:
        raise ValidationError("noise level must be nonnegative")
    values = np.asarray(values)
    if level == 0:
        return values.copy()
    rng = np.random.default_rng(seed)
    sigma = level * np.sqrt(np.mean(np.abs(values) ** 2))
    if np.iscomplexobj(values):
        eps = rng.normal(size=values.shape) + 1j * rng.normal(size=values.shape)
        return values + sigma / np.sqrt(2) * eps
    return values + sigma * rng.normal(size=values.shape)


def make_scattered_nodes(scheme: str, domain, count: int, seed=None) -> NodeSet:
    """Random node sets.

    ``squared-uniform``: torus coordinates U^2, denser towards 0. ``uniform``:
    uniform on the torus, on [-1, 1], or on the sphere (normalized Gaussians).
    """
    if count < 1:
        raise ValidationError("need at least one node")
    rng = np.random.default_rng(seed)
    if scheme == "squared-uniform":
        if not isinstance(domain, Torus):
            raise ValidationError("squared-uniform nodes live on the torus")
        return NodeSet(domain, rng.random((count, domain.d)) ** 2)
    if scheme == "uniform":
        if isinstance(domain, Torus):
            return NodeSet(domain, rng.random((count, domain.d)))
        if isinstance(domain, Interval):
            return NodeSet(domain, rng.uniform(-1.0, 1.0, count))
        g = rng.normal(size=(count, 3))
        return NodeSet(domain, g / np.linalg.norm(g, axis=1, keepdims=True))
    raise ValidationError(f"unknown node scheme {scheme!r}")


# --------------------------------------------------------------------------
# Frequency weights
# --------------------------------------------------------------------------

def frequency_weight_scheme(spec: str, index_set: IndexSet) -> np.ndarray:
    """Weights from "sobolev:s" (1 + |n|^s), "poly:p" (n^p), "sphere:s" ((2n)^(2s)),
    or "hyperbolic" (prod_j max(n_j^2, 1))."""
    name, _, arg = spec.partition(":")
    k = np.asarray(index_set.indices(), float)
    if name == "sobolev":
        return 1.0 + np.linalg.norm(k, axis=1) ** float(arg)
    if name == "hyperbolic":
        return np.prod(np.maximum(k ** 2, 1.0), axis=1)
    if isinstance(index_set, SphericalDegrees):
        n = index_set.degrees().astype(float)
    elif isinstance(index_set, ChebyshevDegrees):
        n = k[:, 0]
    else:
        raise ValidationError(f"weight scheme {spec!r} needs a degree index set")
    if name == "poly":
        return n ** float(arg)
    if name == "sphere":
        return (2 * n) ** (2 * float(arg))
    raise ValidationError(f"unknown frequency weight scheme {spec!r}")


# --------------------------------------------------------------------------
# Presets
# --------------------------------------------------------------------------

NODE_SCHEMES = ("equispaced", "rank1", "scattered-squared-uniform", "chebyshev",
                "uniform-interval", "sphere-design", "sphere-gauss", "sphere-random")


@dataclass(frozen=True)
class ExperimentPreset:
    """Serializable description of one reproducible experiment.

    ``count`` is the number of scattered nodes (ignored for structured
    schemes), ``N`` the index-set size parameter, ``design`` names a lattice
    from package data or a spherical design.
    """

    name: str
    domain: str
    nodes: str
    N: int
    fw: str
    noise: float
    lambda_min: float
    lambda_max: float
    function: str
    count: int | None = None
    index: str = "grid"
    design: str | None = None
    seed: int = 0
    points: int = 32

    def __post_init__(self):
        if self.nodes not in NODE_SCHEMES:
            raise ValidationError(f"unknown node scheme {self.nodes!r}")
        if not (0 < self.lambda_min < self.lambda_max):
            raise ValidationError("need 0 < lambda_min < lambda_max")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text) -> "ExperimentPreset":
        return cls(**json.loads(text))

    def with_seed(self, seed) -> "ExperimentPreset":
        return replace(self, seed=int(seed))


PRESETS = {p.name: p for p in [
    ExperimentPreset("torus2d-equispaced", "torus2", "equispaced", 128, "sobolev:3", 0.10,
                     2.0 ** -18, 2.0 ** -8, "peaks2d"),
    ExperimentPreset("torus1d-equispaced", "torus1", "equispaced", 256, "sobolev:3", 0.10,
                     2.0 ** -18, 2.0 ** -8, "peaks1d"),
    ExperimentPreset("torus7d-rank1", "torus7", "rank1", 4, "hyperbolic", 0.05,
                     2.0 ** -12, 1.0, "bspline", index="hyperbolic", design="hc7-N4"),
    ExperimentPreset("torus1d-scattered", "torus1", "scattered-squared-uniform", 64, "sobolev:3",
                     0.05, 10 ** -4.5, 10 ** -1.6, "peaks1d", count=128),
    ExperimentPreset("torus2d-scattered", "torus2", "scattered-squared-uniform", 64, "sobolev:3",
                     0.05, 10 ** -4.5, 10 ** -1.6, "peaks2d", count=8192),
    ExperimentPreset("interval-cheb", "interval", "chebyshev", 128, "poly:3", 0.05,
                     2.0 ** -16, 2.0 ** -11, "peaks1d"),
    ExperimentPreset("interval-uniform", "interval", "uniform-interval", 128, "poly:3", 0.05,
                     2.0 ** -18, 2.0 ** -11, "peaks1d", count=128),
    ExperimentPreset("sphere-gauss", "sphere", "sphere-gauss", 16, "sphere:3", 0.05,
                     2.0 ** -40, 2.0 ** -17, "sphere-bumps"),
    ExperimentPreset("sphere-design", "sphere", "sphere-design", 2, "sphere:3", 0.05,
                     2.0 ** -16, 2.0 ** 2, "sphere-bumps", design="icosahedron"),
    ExperimentPreset("sphere-random", "sphere", "sphere-random", 16, "sphere:3", 0.05,
                     2.0 ** -40, 2.0 ** -17, "sphere-bumps", count=2 * 17 ** 2),
]}


def get_preset(name: str) -> ExperimentPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_lattice(name: str) -> tuple[Rank1Lattice, HyperbolicCross]:
    entry = _data("lattices.json")[name]
    return Rank1Lattice(entry["z"], entry["M"]), HyperbolicCross(entry["N"], entry["d"])


@dataclass(eq=False)
class Experiment:
    preset: ExperimentPreset
    nodes: NodeSet
    index_set: IndexSet
    operator: object
    weights: np.ndarray
    certified: bool
    freq_weights: np.ndarray
    clean: np.ndarray
    values: np.ndarray
    truth: np.ndarray
    extra: dict = field(default_factory=dict)


def build_experiment(preset: ExperimentPreset, seed=None, *, truth: bool = True) -> Experiment:
    """Nodes, weights, operator, clean and noisy samples for a preset.

    Node and noise streams are spawned from one seed so each is reproducible
    on its own.
    """
    seed = preset.seed if seed is None else seed
    node_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    domain = parse_domain(preset.domain)
    lattice = None
    scheme = preset.nodes
    if scheme == "equispaced":
        rule = equispaced_torus_rule(domain.d, preset.N)
        index_set = TensorGrid(preset.N, domain.d)
        nodes, weights, certified = rule.nodes, rule.weights, True
    elif scheme == "rank1":
        lattice, index_set = load_lattice(preset.design)
        rule = rank1_rule(lattice, index_set)
        nodes, weights, certified = rule.nodes, rule.weights, rule.certified
    elif scheme == "chebyshev":
        rule = chebyshev_rule(preset.N)
        index_set = ChebyshevDegrees(preset.N)
        nodes, weights, certified = rule.nodes, rule.weights, True
    elif scheme == "sphere-gauss":
        rule = gauss_tensor_sphere_rule(preset.N)
        index_set = SphericalDegrees(preset.N)
        nodes, weights, certified = rule.nodes, rule.weights, True
    elif scheme == "sphere-design":
        rule = spherical_design(preset.design)
        index_set = SphericalDegrees(preset.N)
        nodes, weights = rule.nodes, rule.weights
        certified = rule.certified and 2 * preset.N <= rule.exactness
    else:
        kind = {"scattered-squared-uniform": "squared-uniform"}.get(scheme, "uniform")
        nodes = make_scattered_nodes(kind, domain, preset.count, node_seed)
        if isinstance(domain, Torus):
            index_set = TensorGrid(preset.N, domain.d)
        elif isinstance(domain, Interval):
            index_set = ChebyshevDegrees(preset.N)
        else:
            index_set = SphericalDegrees(preset.N)
        weights, certified = voronoi_weights(nodes), False
    f = make_test_function(preset.function, domain)
    clean = eval_test_function(f, nodes)
    values = add_noise(clean, preset.noise, noise_seed)
    return Experiment(
        preset=preset,
        nodes=nodes,
        index_set=index_set,
        operator=make_operator(nodes, index_set, lattice),
        weights=np.asarray(weights, float),
        certified=bool(certified),
        freq_weights=frequency_weight_scheme(preset.fw, index_set),
        clean=clean,
        values=values,
        truth=f.truth(index_set) if truth else None,
        extra={"lattice": lattice},
    )
