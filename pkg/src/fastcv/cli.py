"""Command line front end.

    fastcv gen --preset torus1d-scattered --seed 3 --out run/
    fastcv weights --domain sphere --nodes run/nodes.csv --out run/
    fastcv score --domain torus1 --nodes run/nodes.csv --values run/values.csv --index-n 64
    fastcv minimize --preset interval-cheb --score P

Exit codes: 0 success, 2 validation or certification failure, 3 numerical
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import (
    ChebyshevDegrees,
    GeometryError,
    HyperbolicCross,
    Interval,
    NodeSet,
    SphericalDegrees,
    TensorGrid,
    Torus,
    ValidationError,
    index_set_from_json,
    parse_domain,
    read_csv_matrix,
    read_values_csv,
    save_json,
    write_values_csv,
)
from .crossval import (
    CrossValidation,
    closed_form_diagonals,
    hat_diagonals_bruteforce,
    log_grid,
    minimize_lambda,
)
from .quadrature import (
    GRAM_CERTIFY_TOL,
    detect_lattice,
    detect_rule,
    gram_deviation,
    load_rule,
    mesh_norm,
    voronoi_weights,
)
from .tikhonov import LSQR_ITERATIONS
from .testbench import PRESETS, build_experiment, frequency_weight_scheme, get_preset
from .transforms import make_operator

log = logging.getLogger("fastcv")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
ORACLE_TOL = 1e-6
DEFAULT_FW = {"torus": "sobolev:3", "interval": "poly:3", "sphere": "sphere:3"}


class CertificationError(ValidationError):
    pass


@dataclass
class Setup:
    operator: object
    weights: np.ndarray
    freq_weights: np.ndarray
    values: np.ndarray
    certified: bool
    truth: np.ndarray | None
    lambda_min: float | None = None
    lambda_max: float | None = None
    points: int | None = None
    source: str = ""


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------

def _input_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(PRESETS), help="built-in experiment")
    src.add_argument("--nodes", type=Path, help="node CSV (one row per node)")
    p.add_argument("--domain", choices=["torus1", "torus2", "torus7", "interval", "sphere"])
    p.add_argument("--values", type=Path, help="sample CSV: real or real,imag per row")
    p.add_argument("--truth", type=Path, help="truth.json from 'gen' for L2 errors")
    p.add_argument("--index-n", type=int, help="index-set size N")
    p.add_argument("--index", help="index set spec, e.g. hyperbolic:16")
    p.add_argument("--fw", help="frequency weights: sobolev:s, poly:p, sphere:s, hyperbolic")
    p.add_argument("--rule", type=Path, help="quadrature rule descriptor JSON")
    p.add_argument("--weights", type=Path, help="spatial weights CSV (Gram-checked)")
    p.add_argument("--seed", type=int, default=None, help="preset seed")


def _score_args(p):
    p.add_argument("--lambda-min", type=float)
    p.add_argument("--lambda-max", type=float)
    p.add_argument("--grid", type=int, help="number of lambda grid points")
    p.add_argument("--score", default="all", choices=["P", "V", "Pt", "Vt", "all"])
    p.add_argument("--oracle", action="store_true",
                   help="dense reference diagonals; on exact rules, check the fast path")
    p.add_argument("--strict", action="store_true",
                   help="fail instead of downgrading P/V on uncertified weights")
    p.add_argument("--lsqr-iters", type=int, default=LSQR_ITERATIONS)
    p.add_argument("--out", type=Path, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fastcv", description=__doc__.split("\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common],
                       help="write nodes.csv, values.csv and truth.json for a preset")
    g.add_argument("--preset", required=True, choices=sorted(PRESETS))
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--n", type=int, help="override the index-set size N")
    g.add_argument("--count", type=int, help="override the number of scattered nodes")
    g.add_argument("--noise", type=float, help="override the noise level")
    g.add_argument("--out", type=Path, required=True)

    w = sub.add_parser("weights", parents=[common],
                       help="exact or Voronoi quadrature weights for a node file")
    w.add_argument("--domain", required=True, choices=["torus1", "torus2", "torus7", "interval",
                                                       "sphere"])
    w.add_argument("--nodes", type=Path, required=True)
    w.add_argument("--index-n", type=int, help="try to certify an exact rule for this N")
    w.add_argument("--index", help="index set spec, e.g. hyperbolic:16")
    w.add_argument("--out", type=Path, help="output directory for weights.csv")

    s = sub.add_parser("score", parents=[common], help="score curve over a lambda grid")
    _input_args(s)
    _score_args(s)

    m = sub.add_parser("minimize", parents=[common],
                       help="minimize a score over lambda and denoise")
    _input_args(m)
    _score_args(m)
    return parser


# --------------------------------------------------------------------------
# Problem assembly
# --------------------------------------------------------------------------

def _index_set(domain, index_n, index_spec):
    if index_spec:
        name, _, arg = index_spec.partition(":")
        if name == "hyperbolic" and isinstance(domain, Torus):
            return HyperbolicCross(int(arg), domain.d)
        if name == "grid" and isinstance(domain, Torus):
            return TensorGrid(int(arg), domain.d)
        raise ValidationError(f"unsupported index set {index_spec!r} on {domain}")
    if index_n is None:
        raise ValidationError("need --index-n or --index")
    if isinstance(domain, Torus):
        return TensorGrid(index_n, domain.d)
    if isinstance(domain, Interval):
        return ChebyshevDegrees(index_n)
    return SphericalDegrees(index_n)


def _domain_key(domain):
    if isinstance(domain, Torus):
        return "torus"
    return "interval" if isinstance(domain, Interval) else "sphere"


def _read_truth(path, index_set):
    obj = json.loads(Path(path).read_text())
    stored = index_set_from_json(obj["index_set"])
    if stored.to_json() != index_set.to_json():
        raise ValidationError("truth.json was written for a different index set")
    t = np.asarray(obj["truth"], float)
    return t[:, 0] + 1j * t[:, 1]


def setup_from_args(args) -> Setup:
    if args.preset:
        ex = build_experiment(get_preset(args.preset), args.seed)
        p = ex.preset
        return Setup(ex.operator, ex.weights, ex.freq_weights, ex.values, ex.certified,
                     ex.truth, p.lambda_min, p.lambda_max, p.points, f"preset {p.name}")
    if args.domain is None or args.values is None:
        raise ValidationError("--nodes needs --domain and --values")
    domain = parse_domain(args.domain)
    nodes = NodeSet.from_csv(args.nodes, domain)
    values = read_values_csv(args.values)
    if len(values) != len(nodes):
        raise ValidationError(f"{len(values)} values for {len(nodes)} nodes")
    index_set = _index_set(domain, args.index_n, args.index)
    fw_spec = args.fw or ("hyperbolic" if isinstance(index_set, HyperbolicCross)
                          else DEFAULT_FW[_domain_key(domain)])
    freq_weights = frequency_weight_scheme(fw_spec, index_set)
    lattice = detect_lattice(nodes) if isinstance(domain, Torus) else None
    operator = make_operator(nodes, index_set, lattice)

    if args.rule:
        rule = load_rule(args.rule, index_set)
        if not np.allclose(rule.nodes.coords, nodes.coords, rtol=0, atol=1e-12):
            raise ValidationError("rule descriptor nodes differ from --nodes")
        weights, certified, how = rule.weights, rule.certified, "rule descriptor"
    elif args.weights:
        weights = read_csv_matrix(args.weights, 1)[:, 0]
        gram = gram_deviation(operator, weights)
        certified, how = gram < GRAM_CERTIFY_TOL, f"supplied weights (Gram deviation {gram:.2e})"
    else:
        rule = detect_rule(nodes, index_set)
        if rule is not None:
            weights, certified, how = rule.weights, True, "detected exact rule"
        else:
            weights, certified, how = voronoi_weights(nodes), False, "Voronoi weights"
    log.info("weights: %s, certified=%s", how, certified)

    truth = _read_truth(args.truth, index_set) if args.truth else None
    return Setup(operator, weights, freq_weights, values, bool(certified), truth,
                 source=str(args.nodes))


def _kinds(args, setup: Setup):
    kinds = ["P", "V", "Pt", "Vt"] if args.score == "all" else [args.score]
    if setup.certified or args.oracle:
        return kinds
    exact = [k for k in kinds if k in ("P", "V")]
    if exact:
        if args.strict:
            raise CertificationError(
                f"weights are not a certified exact rule; {', '.join(exact)} unavailable")
        log.warning("weights are not certified exact; reporting approximated scores instead "
                    "of %s", ", ".join(exact))
        kinds = [k for k in kinds if k not in ("P", "V")]
        for k in exact:
            if k + "t" not in kinds:
                kinds.append(k + "t")
    return kinds


def _grid(args, setup: Setup):
    lo = args.lambda_min if args.lambda_min is not None else setup.lambda_min
    hi = args.lambda_max if args.lambda_max is not None else setup.lambda_max
    if lo is None or hi is None:
        raise ValidationError("need --lambda-min and --lambda-max")
    points = args.grid or setup.points or 32
    return lo, hi, points


def _oracle_check(setup: Setup, cv: CrossValidation, lambdas):
    """Compare closed-form with dense diagonals on a certified rule."""
    worst = 0.0
    for lam in lambdas:
        fast = closed_form_diagonals(setup.operator, setup.weights, setup.freq_weights, lam)
        dense = hat_diagonals_bruteforce(setup.operator, setup.weights, setup.freq_weights, lam)
        gap = np.max(np.abs(fast.values - dense.values) / np.abs(dense.values))
        worst = max(worst, float(gap))
    log.info("oracle: max relative diagonal gap %.3e", worst)
    if worst > ORACLE_TOL:
        raise ArithmeticError(f"fast diagonals deviate from the dense oracle by {worst:.3e}")
    return worst


def _make_cv(args, setup: Setup):
    return CrossValidation(setup.operator, setup.weights, setup.freq_weights, setup.values,
                           certified=setup.certified, oracle=args.oracle,
                           lsqr_iterations=args.lsqr_iters, truth=setup.truth)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_gen(args):
    preset = get_preset(args.preset)
    overrides = {k: v for k, v in (("N", args.n), ("count", args.count), ("noise", args.noise),
                                   ("seed", args.seed)) if v is not None}
    preset = replace(preset, **overrides)
    ex = build_experiment(preset)
    args.out.mkdir(parents=True, exist_ok=True)
    ex.nodes.to_csv(args.out / "nodes.csv")
    write_values_csv(args.out / "values.csv", ex.values)
    truth = np.asarray(ex.truth, dtype=complex)
    save_json(args.out / "truth.json", {
        "preset": json.loads(preset.to_json()),
        "domain": ex.nodes.domain.to_json(),
        "index_set": ex.index_set.to_json(),
        "certified": ex.certified,
        "truth": np.column_stack([truth.real, truth.imag]).tolist(),
    })
    print(f"{preset.name}: {len(ex.nodes)} nodes, {len(ex.index_set)} frequencies, "
          f"noise {preset.noise:g}, seed {preset.seed}, written to {args.out}")
    return EXIT_OK


def cmd_weights(args):
    domain = parse_domain(args.domain)
    nodes = NodeSet.from_csv(args.nodes, domain)
    rule = None
    if args.index_n is not None or args.index:
        rule = detect_rule(nodes, _index_set(domain, args.index_n, args.index))
    if rule is not None:
        weights, kind = rule.weights, "exact"
    else:
        weights, kind = voronoi_weights(nodes), "voronoi"
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "weights.csv", "w") as fh:
            fh.writelines(f"{w!r}\n" for w in map(float, weights))
    total = float(np.sum(weights))
    print(f"{kind} weights for {len(nodes)} nodes")
    print(f"sum {total:.15g}, domain measure {domain.measure:.15g}, "
          f"relative gap {abs(total - domain.measure) / domain.measure:.2e}")
    print(f"mesh norm {mesh_norm(nodes):.6g}")
    return EXIT_OK


def _print_curve(curve, kinds):
    cols = ["lambda"] + kinds + ["residual", "l2_error"]
    print(",".join(cols))
    for i, lam in enumerate(curve.lambdas):
        row = [repr(lam)] + [_fmt(curve.columns[k][i]) for k in cols[1:]]
        print(",".join(row))


def _fmt(v):
    if v is None:
        return ""
    return "inf" if math.isinf(v) else f"{v:.12g}"


def cmd_score(args):
    setup = setup_from_args(args)
    kinds = _kinds(args, setup)
    lo, hi, points = _grid(args, setup)
    cv = _make_cv(args, setup)
    lambdas = log_grid(lo, hi, points)
    if args.oracle and setup.certified:
        gap = _oracle_check(setup, cv, lambdas)
        print(f"oracle: max relative gap between fast and dense diagonals {gap:.3e}",
              file=sys.stderr)
    curve = cv.curve(lambdas, kinds)
    for lam, sec in zip(curve.lambdas, curve.seconds):
        log.info("lambda %.6g evaluated in %.4f s", lam, sec)
    print(f"{len(lambdas)} lambda values, {sum(curve.seconds):.3f} s total evaluation time",
          file=sys.stderr)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        curve.to_csv(args.out / "scores.csv")
        print(f"wrote {args.out / 'scores.csv'}")
    else:
        _print_curve(curve, kinds)
    return EXIT_OK


def cmd_minimize(args):
    setup = setup_from_args(args)
    kinds = _kinds(args, setup)
    lo, hi, points = _grid(args, setup)
    cv = _make_cv(args, setup)
    if args.oracle and setup.certified:
        _oracle_check(setup, cv, log_grid(lo, hi, min(points, 5)))
    results = {}
    for kind in kinds:
        m = minimize_lambda(lambda lam, k=kind: cv.score(lam, k), lo, hi, points)
        results[kind] = m
        guard = f", non-finite below {m.guarded_below:.6g}" if m.guarded_below else ""
        print(f"{kind}: lambda* = {m.lam:.10g}, score = {m.value:.10g}{guard}")
        if m.at_boundary:
            log.warning("%s minimum sits at the end of the usable lambda range; "
                        "consider widening it", kind)
    if setup.truth is not None:
        fine = log_grid(lo, hi, max(4 * points, 64))
        errors = [cv.evaluate(lam, ())["l2_error"] for lam in fine]
        i = int(np.argmin(errors))
        print(f"L2: lambda* = {fine[i]:.10g}, error = {errors[i]:.10g} (grid scan)")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        rec = cv.evaluate(results[kinds[0]].lam, ())
        write_values_csv(args.out / "coefficients.csv", rec["coeffs"])
        write_values_csv(args.out / "denoised.csv", setup.operator.apply(rec["coeffs"]))
        save_json(args.out / "minimum.json", {
            k: {"lambda": m.lam, "score": m.value, "at_boundary": m.at_boundary,
                "guarded_below": m.guarded_below}
            for k, m in results.items()})
        cv.curve(log_grid(lo, hi, points), kinds).to_csv(args.out / "scores.csv")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "weights": cmd_weights, "score": cmd_score,
            "minimize": cmd_minimize}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="fastcv: %(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, GeometryError, KeyError) as exc:
        print(f"fastcv: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ArithmeticError, np.linalg.LinAlgError, MemoryError) as exc:
        print(f"fastcv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"fastcv: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
