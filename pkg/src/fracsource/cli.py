"""Command line entry point: ``fracsource run | verify | eigens``."""

from __future__ import annotations

import argparse
import json
import math
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from .errors import EXIT_CODES, FracSourceError

METHOD_FLAGS = {"tikhonov": ("tikhonov",), "spectral": ("spectral_modes",),
                "both": ("tikhonov", "spectral_modes")}


def _exit_table() -> str:
    rows = sorted(EXIT_CODES.items(), key=lambda kv: kv[1])
    return "exit codes:\n" + "\n".join(f"  {code:3d}  {name}" for name, code in rows) + \
        "\n    1  other toolkit errors, failed verify checks\n   74  I/O error"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracsource", epilog=_exit_table(),
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                description="Source reconstruction for a space-time fractional wave equation.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", required=True, type=Path)
    run.add_argument("--seed", type=int)
    run.add_argument("--delta", type=float)
    run.add_argument("--method", choices=sorted(METHOD_FLAGS))
    run.add_argument("--no-plot", action="store_true", help="skip the gnuplot script")

    sub.add_parser("verify", help="run the quick invariant checks")

    eig = sub.add_parser("eigens", help="compute and dump an eigensystem as JSON")
    eig.add_argument("--beta", required=True, type=float)
    eig.add_argument("--n", required=True, type=int)
    eig.add_argument("--out", type=Path, help="file to write (default: stdout)")
    return p


def _cmd_run(args) -> int:
    from .experiment import emit_plot_script, load_config, persist_results, run_experiment

    config = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.delta is not None:
        changes["delta"] = args.delta
    if args.method is not None:
        changes["methods"] = METHOD_FLAGS[args.method]
    if changes:
        config = config.replace(**changes)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        manifest = run_experiment(config)
    persist_results(manifest, args.out)
    if not args.no_plot:
        emit_plot_script(manifest, args.out)
    for label, methods in manifest.metrics.items():
        for method, m in methods.items():
            print(f"{label:>8s} {method:>15s}  relative L2 error {m['relative_l2_error']:.4f}")
    for f in manifest.failures:
        print(f"{f['method']}: {f['error']}: {f['message']}", file=sys.stderr)
    print(f"results in {args.out}")
    return manifest.exit_code


# quick invariant checks; the full suites live in the test directory

def _check_ml_identities():
    from .mlf import ml

    z = np.random.default_rng(0).normal(size=50) * 3 + 1j * np.random.default_rng(1).normal(size=50) * 3
    sq = np.sqrt(z)
    err = max(np.max(np.abs(ml(1, 1, z) / np.exp(z) - 1)),
              np.max(np.abs(ml(2, 1, z) / np.cosh(sq) - 1)),
              np.max(np.abs(ml(2, 2, z) / (np.sinh(sq) / sq) - 1)))
    return err < 1e-10, f"max relative error {err:.1e}"


def _check_classical_spectrum():
    from .spectral import find_eigenvalues

    lam = find_eigenvalues(2.0, 6).lambdas
    ref = -(np.arange(1, 7) * math.pi) ** 2
    err = np.max(np.abs(lam - ref) / np.abs(ref))
    return err < 1e-8, f"max relative error {err:.1e}"


def _check_bi_orthogonality():
    from .spectral import find_eigenvalues, pairing_matrix

    system = find_eigenvalues(1.5, 4)
    idx = system.signed_indices(4)
    P = pairing_matrix(system, idx, idx)
    off = np.max(np.abs(P - np.diag(np.diag(P))))
    return off < 1e-8, f"max cross pairing {off:.1e}"


def _check_superposition():
    from .forward import ProblemSpec, SpatialMesh, TimeGrid, observe_flux_discrete, solve_discrete
    from .inverse import build_forward_matrix

    spec = ProblemSpec(1.5, 1.5, "exp2", "poly2")
    mesh, grid = SpatialMesh(40), TimeGrid.over(1.0, 0.01)
    A = build_forward_matrix(spec, mesh, grid).matrix
    ref = observe_flux_discrete(solve_discrete(spec, mesh, grid)).samples
    err = np.max(np.abs(A @ spec.f(mesh.interior) - ref)) / np.max(np.abs(ref))
    return err < 1e-10, f"relative mismatch {err:.1e}"


def _check_normal_equations():
    from .inverse import TikhonovConfig, tikhonov_solve

    rng = np.random.default_rng(3)
    A = rng.normal(size=(40, 20)) @ np.diag(10.0 ** -np.linspace(0, 6, 20))
    z = rng.normal(size=40)
    f = tikhonov_solve(A, z, TikhonovConfig(nu=1e-6)).f_hat
    err = np.linalg.norm(A.T @ (A @ f) + 1e-6 * f - A.T @ z) / np.linalg.norm(A.T @ z)
    return err < 1e-8, f"normal-equation residual {err:.1e}"


def _check_csv_round_trip():
    from .csvio import read_csv, write_csv

    v = np.random.default_rng(5).normal(size=100) * 10.0 ** np.arange(-50, 50)
    with tempfile.TemporaryDirectory() as d:
        write_csv(Path(d) / "v.csv", ["v"], [v])
        back = read_csv(Path(d) / "v.csv")["v"]
    return bool(np.array_equal(back, v)), "exact" if np.array_equal(back, v) else "lossy"


CHECKS = {
    "Mittag-Leffler classical identities": _check_ml_identities,
    "beta = 2 spectrum": _check_classical_spectrum,
    "bi-orthogonality (beta = 1.5, 4 modes)": _check_bi_orthogonality,
    "forward-map superposition": _check_superposition,
    "Tikhonov normal equations": _check_normal_equations,
    "CSV round trip": _check_csv_round_trip,
}


def _cmd_verify(args) -> int:
    failed = 0
    for name, check in CHECKS.items():
        try:
            ok, detail = check()
        except FracSourceError as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 1 if failed else 0


def _cmd_eigens(args) -> int:
    from .csvio import atomic_write_text
    from .spectral import find_eigenvalues

    if not 1.0 < args.beta <= 2.0 or args.n < 1:
        print("need 1 < beta <= 2 and n >= 1", file=sys.stderr)
        return EXIT_CODES["ConfigValidationError"]
    text = find_eigenvalues(args.beta, args.n).to_json()
    if args.out is None:
        print(text)
    else:
        atomic_write_text(args.out, text)
        print(f"wrote {args.n} modes to {args.out}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": _cmd_run, "verify": _cmd_verify, "eigens": _cmd_eigens}[args.command]
    try:
        return handler(args)
    except FracSourceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 1)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 74


if __name__ == "__main__":
    sys.exit(main())
