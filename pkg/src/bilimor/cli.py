"""Command-line front end for reproducible experiment runs.

Subcommands: ``gen`` (write benchmark bundles), ``reduce`` (compute a reduced
model), ``bound`` (evaluate bounds, optionally sweeping the control energy or
the input scaling), ``simulate`` (trajectory CSV), ``validate`` (property
suites), and ``mc`` (stochastic moment checks).  Every artifact embeds the
library version and a hash of the resolved configuration; numbers in CSV
files carry 17 significant digits so reruns are byte-identical.

Exit codes: 0 success, 2 configuration error, 3 numerical or stability error,
4 validation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys as _sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .benchgen import heat2d, random_stable_system, toy_control, toy_system
from .bounds import control_l2_norms, output_bound, output_error_bound
from .errors import (
    BilimorError,
    ConsistencyError,
    DimensionError,
    DivergenceError,
    ParameterError,
    RankDeficiencyError,
    SingularityError,
    StabilityError,
)
from .gramians import gramian_set, h2_error
from .lyapunov import kron_stability, solve_generalized_lyapunov
from .mor import balance, balanced_truncation, bilinear_irka, singular_perturbation
from .simulate import gronwall_check, integrate_bilinear, make_grid
from .stochastic import moment_check, moment_tolerance, simulate_sde
from .sysmodel import (
    BilinearSystem,
    ControlSignal,
    load_bundle,
    rescale,
    save_bundle,
    u0_mask,
)

CONFIG_EXIT = 2
NUMERIC_EXIT = 3
VALIDATION_EXIT = 4

_CONFIG_ERRORS = (ParameterError, DimensionError, FileNotFoundError, json.JSONDecodeError)
_NUMERIC_ERRORS = (
    StabilityError,
    SingularityError,
    DivergenceError,
    RankDeficiencyError,
    ConsistencyError,
    np.linalg.LinAlgError,
)


def _workers() -> int:
    cap = os.environ.get("BILIMOR_THREADS")
    avail = os.cpu_count() or 1
    if cap is None:
        return min(avail, 8)
    try:
        return max(1, min(avail, int(cap)))
    except ValueError:
        raise ParameterError(f"BILIMOR_THREADS must be an integer, got {cap!r}")


def _config_hash(args: argparse.Namespace) -> str:
    payload = {k: str(v) for k, v in sorted(vars(args).items()) if k != "func"}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _json_default(obj):
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_json(path: str, payload: dict, args: argparse.Namespace) -> None:
    payload = dict(payload)
    payload["config_hash"] = _config_hash(args)
    payload["version"] = __version__
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _write_csv(path: str, header: list[str], rows: list[list[float]],
               args: argparse.Namespace) -> None:
    with open(path, "w") as fh:
        fh.write(f"# bilimor {__version__} config_hash={_config_hash(args)}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.16e}" for v in row) + "\n")


def _outdir(args: argparse.Namespace) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _load_system(path: str) -> BilinearSystem:
    return load_bundle(path)


def _parse_vector(text: str, n: int, what: str) -> np.ndarray:
    try:
        vec = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ParameterError(f"{what} must be a comma-separated float list, got {text!r}")
    if vec.size != n:
        raise ParameterError(f"{what} must have {n} entries, got {vec.size}")
    return vec


def _base_control(spec: str, m: int, hint: float) -> ControlSignal:
    """Builtin name or CSV sample file (columns t, u_1 .. u_m)."""
    if spec == "toy":
        if m != 2:
            raise ParameterError("the builtin 'toy' control has two channels")
        return toy_control(1.0)
    if spec == "zero":
        return ControlSignal.zero(m)
    if not os.path.exists(spec):
        raise ParameterError(f"control must be 'toy', 'zero', or a CSV file; {spec!r} not found")
    data = np.loadtxt(spec, delimiter=",", comments="#", ndmin=2)
    if data.shape[1] != m + 1:
        raise ParameterError(
            f"control samples need {m + 1} columns (t plus {m} channels), got {data.shape[1]}"
        )
    return ControlSignal.from_samples(data[:, 0], data[:, 1:], grid_hint=hint)


def _energy_control(base: ControlSignal, alpha: float, mask) -> ControlSignal:
    """Rescale a base control to L2 energy alpha (zero control stays zero)."""
    if base.horizon == 0.0:
        return base
    l2, _ = control_l2_norms(base, mask)
    if l2 == 0.0:
        if alpha == 0.0:
            return base
        raise ParameterError("cannot scale a zero control to positive energy")
    return base.scaled(alpha / l2)


# ---------------------------------------------------------------------- gen

def cmd_gen(args: argparse.Namespace) -> int:
    out = _outdir(args)
    if args.kind == "toy":
        sysm = toy_system()
        meta = {"kind": "toy"}
    elif args.kind == "heat":
        spec = heat2d(args.nn)
        sysm = spec.system
        meta = {"kind": "heat", "nn": spec.nn, "n": spec.n, "mesh_width": spec.h}
    else:
        sysm = random_stable_system(args.n, args.m, args.p, args.seed, target=args.target)
        meta = {"kind": "random", "n": args.n, "m": args.m, "p": args.p,
                "seed": args.seed, "target": args.target}
    save_bundle(sysm, out)
    meta.update({"dims": {"n": sysm.n, "m": sysm.m, "p": sysm.p}})
    _write_json(os.path.join(out, "generation.json"), meta, args)
    print(f"wrote system bundle ({sysm.n} states) to {out}")
    return 0


# ------------------------------------------------------------------- reduce

def cmd_reduce(args: argparse.Namespace) -> int:
    out = _outdir(args)
    sysm = _load_system(args.system)
    gamma = args.gamma
    if gamma == "auto":
        g = 1.0 if kron_stability(sysm).mean_square_stable else None
        if g is None:
            from .sysmodel import gamma_threshold

            g = 1.01 * max(gamma_threshold(sysm), 1.0)
    else:
        g = float(gamma)
        if g <= 0:
            raise ParameterError(f"gamma must be positive, got {g}")
    work = rescale(sysm, g) if g != 1.0 else sysm
    if not kron_stability(work).mean_square_stable:
        raise StabilityError(
            f"system is not mean-square stable at gamma={g}; pick a larger gamma"
        )
    gs = gramian_set(work, gamma_used=g)
    if args.method == "bt":
        result = balanced_truncation(work, args.order, gramians=gs)
    elif args.method == "spa":
        result = singular_perturbation(work, args.order, gramians=gs)
    else:
        result = bilinear_irka(work, args.order, tol=args.tol, maxit=args.maxit,
                               seed=args.seed)
    rom_scaled = result.rom
    # store the reduced model in unscaled coordinates; gamma is recorded
    rom = BilinearSystem(
        A=rom_scaled.A, B=g * rom_scaled.B, C=rom_scaled.C,
        N=tuple(g * Nk for Nk in rom_scaled.N),
    ) if g != 1.0 else rom_scaled
    save_bundle(rom, out)
    meta = {
        "method": result.method,
        "order": args.order,
        "gamma": g,
        "iterations": result.iterations,
        "converged": result.converged,
        "rom_mean_square_stable": result.rom_mean_square_stable,
        "gramian_residuals": gs.residuals,
        "details": {k: v for k, v in result.details.items()},
    }
    if result.transform is not None:
        meta["hsv"] = [float(v) for v in result.transform.hsv]
        meta["hsv_kept"] = [float(v) for v in result.hsv_kept]
        meta["hsv_dropped"] = [float(v) for v in result.hsv_dropped]
    _write_json(os.path.join(out, "reduction.json"), meta, args)
    if args.export_gramians:
        from scipy.io import mmwrite

        mmwrite(os.path.join(out, "P.mtx"), gs.P)
        mmwrite(os.path.join(out, "Q.mtx"), gs.Q)
        _write_json(os.path.join(out, "gramians.json"),
                    {"residuals": gs.residuals, "gamma_used": gs.gamma_used}, args)
    print(f"wrote {result.method} reduced model of order {args.order} to {out}")
    return 0


# -------------------------------------------------------------------- bound

def _report_payload(rep) -> dict:
    return {
        "h2_quantity": rep.h2_quantity,
        "control_factor": rep.control_factor,
        "bound": rep.bound,
        "gamma": rep.gamma,
        "l2_u": rep.l2_u,
        "l2_u0": rep.l2_u0,
        "simulated_sup": rep.simulated_sup,
        "ratio": rep.ratio,
    }


def _parse_sweep(text: str) -> tuple[str, np.ndarray]:
    parts = text.split(":")
    if len(parts) != 4 or parts[0] not in ("alpha", "gamma"):
        raise ParameterError(
            f"sweep must look like alpha:A0:A1:STEPS or gamma:G0:G1:STEPS, got {text!r}"
        )
    try:
        lo, hi, steps = float(parts[1]), float(parts[2]), int(parts[3])
    except ValueError:
        raise ParameterError(f"could not parse sweep bounds in {text!r}")
    if steps < 2 or hi <= lo:
        raise ParameterError("sweep needs at least two points and increasing bounds")
    return parts[0], np.linspace(lo, hi, steps)


def cmd_bound(args: argparse.Namespace) -> int:
    out = _outdir(args)
    sysm = _load_system(args.system)
    rom = _load_system(args.rom) if args.rom else None
    mask = u0_mask(sysm)
    base = _base_control(args.control, sysm.m, args.h)

    def one_bound(alpha: float, gamma) -> object:
        u = _energy_control(base, alpha, mask)
        if rom is None:
            return output_bound(sysm, u, gamma=gamma, simulate_sup=True, step=args.h)
        return output_error_bound(sysm, rom, u, gamma=gamma, simulate_sup=True, step=args.h)

    if args.sweep is None:
        rep = one_bound(args.alpha, args.gamma if args.gamma != "auto" else "auto")
        _write_json(os.path.join(out, "bound_report.json"), _report_payload(rep), args)
        print(f"bound={rep.bound:.6e} sup={rep.simulated_sup:.6e} ratio={rep.ratio:.4f}")
        return 0

    kind, values = _parse_sweep(args.sweep)
    if kind == "alpha":
        tasks = [(float(v), args.gamma if args.gamma != "auto" else "auto") for v in values]
    else:
        tasks = [(args.alpha, float(v)) for v in values]
    workers = _workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(lambda t: one_bound(*t), tasks))
    else:
        reports = [one_bound(*t) for t in tasks]
    rows = []
    for v, rep in zip(values, reports):
        sup = rep.simulated_sup if rep.simulated_sup is not None else float("nan")
        ratio = rep.ratio if rep.ratio is not None else float("nan")
        rows.append([float(v), sup, rep.bound, ratio])
    _write_csv(os.path.join(out, f"sweep_{kind}.csv"),
               ["alpha_or_gamma", "sup_output", "bound", "ratio"], rows, args)
    print(f"wrote {len(rows)}-point {kind} sweep to {out}")
    return 0


# ----------------------------------------------------------------- simulate

def cmd_simulate(args: argparse.Namespace) -> int:
    out = _outdir(args)
    sysm = _load_system(args.system)
    mask = u0_mask(sysm)
    base = _base_control(args.control, sysm.m, args.h)
    u = _energy_control(base, args.alpha, mask)
    x0 = (
        _parse_vector(args.x0, sysm.n, "--x0") if args.x0 else np.zeros(sysm.n)
    )
    grid = make_grid(args.T, args.h)
    traj = integrate_bilinear(sysm, u, x0, grid, step=args.h)
    header = ["t"]
    cols = [traj.grid]
    if args.states:
        header += [f"x_{i + 1}" for i in range(sysm.n)]
        cols += [traj.states[:, i] for i in range(sysm.n)]
    header += [f"y_{i + 1}" for i in range(sysm.p)]
    cols += [traj.outputs[:, i] for i in range(sysm.p)]
    rows = [list(vals) for vals in zip(*cols)]
    _write_csv(os.path.join(out, "trajectory.csv"), header, rows, args)
    print(f"wrote trajectory ({len(rows)} points) to {out}")
    return 0


# ----------------------------------------------------------------- validate

def _suite_gronwall(seed: int) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    checks = []
    for idx in range(12):
        n = int(rng.integers(2, 6))
        m = int(rng.integers(1, 3))
        sysm = random_stable_system(n, m, 1, seed=int(rng.integers(0, 2 ** 31)))
        times = np.linspace(0.0, 1.5, 7)
        levels = rng.uniform(-1.5, 1.5, size=(7, m))
        u = ControlSignal(
            fn=lambda t, tt=times, ll=levels: ll[min(np.searchsorted(tt, t, side="right") - 1, 5)],
            m=m, horizon=1.5,
        )
        x0 = rng.standard_normal(n)
        res = gronwall_check(sysm, u, x0, 0.0, make_grid(2.5, 0.05), step=2e-3)
        ok = bool(np.all(res.margins >= -1e-6 * np.maximum(res.zbar_norms, 1e-300)))
        checks.append((f"gronwall[{idx}] n={n} m={m}", ok,
                       f"min margin {res.margins.min():.3e}"))
    return checks


def _suite_traces(seed: int) -> list[tuple[str, bool, str]]:
    from .bounds import bt_weighted_bound
    from .mor import apply_transform
    from .sysmodel import build_error_system

    rng = np.random.default_rng(seed + 1)
    checks = []
    for idx in range(8):
        n = int(rng.integers(4, 9))
        sysm = random_stable_system(n, 2, 2, seed=int(rng.integers(0, 2 ** 31)))
        r = max(1, n // 2)
        red = balanced_truncation(sysm, r)
        err2 = h2_error(sysm, red.rom) ** 2
        esys = build_error_system(sysm, red.rom).system
        Pe = solve_generalized_lyapunov(esys.A, esys.N, esys.B @ esys.B.T, side="reach")
        err2_direct = float(np.trace(esys.C @ Pe @ esys.C.T))
        gap = abs(err2 - err2_direct) / max(abs(err2_direct), 1e-300)
        ok = gap <= 1e-8
        checks.append((f"three-trace[{idx}] n={n} r={r}", ok, f"rel gap {gap:.3e}"))
        gs = gramian_set(sysm)
        tf = balance(sysm, gs.P, gs.Q)
        bal = apply_transform(sysm, tf.S, tf.S_inv)
        wb = bt_weighted_bound(bal, r, toy_control(1.0))
        ok2 = wb.identity_rel_gap <= 1e-8
        checks.append((f"weighted-trace[{idx}] n={n} r={r}", ok2,
                       f"rel gap {wb.identity_rel_gap:.3e}"))
    return checks


def _suite_stability(seed: int) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed + 2)
    checks = []
    for idx in range(10):
        n = int(rng.integers(2, 8))
        sysm = random_stable_system(n, 2, 1, seed=int(rng.integers(0, 2 ** 31)),
                                    target="hurwitz")
        rep = kron_stability(sysm)
        if rep.hurwitz and rep.sufficient_margin < 1.0:
            ok = rep.mean_square_stable
            checks.append((f"sufficiency[{idx}] n={n}", bool(ok),
                           f"margin {rep.sufficient_margin:.3f}"))
    for idx in range(6):
        n = int(rng.integers(4, 9))
        sysm = random_stable_system(n, 2, 2, seed=int(rng.integers(0, 2 ** 31)))
        red = balanced_truncation(sysm, max(1, n // 2))
        checks.append((f"bt-stability[{idx}] n={n}", bool(red.rom_mean_square_stable),
                       "reduced model mean-square stable"))
    return checks


def cmd_validate(args: argparse.Namespace) -> int:
    suites = {
        "gronwall": _suite_gronwall,
        "traces": _suite_traces,
        "stability": _suite_stability,
    }
    names = list(suites) if args.suite == "all" else [args.suite]
    all_checks: list[tuple[str, bool, str]] = []
    for name in names:
        all_checks.extend(suites[name](args.seed))
    failures = [c for c in all_checks if not c[1]]
    for label, ok, detail in all_checks:
        print(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "validation_report.json"), {
            "suites": names,
            "seed": args.seed,
            "checks": [{"label": l, "pass": ok, "detail": d} for l, ok, d in all_checks],
            "failures": len(failures),
        }, args)
    print(f"{len(all_checks) - len(failures)}/{len(all_checks)} checks passed")
    return VALIDATION_EXIT if failures else 0


# ----------------------------------------------------------------------- mc

def cmd_mc(args: argparse.Namespace) -> int:
    out = _outdir(args)
    sysm = _load_system(args.system)
    x0 = (
        _parse_vector(args.x0, sysm.n, "--x0") if args.x0
        else np.ones(sysm.n) / np.sqrt(sysm.n)
    )
    grid = make_grid(args.T, args.h)
    mp = simulate_sde(sysm, x0, grid, args.paths, args.seed)
    from .simulate import integrate_matrix_ode

    ode = integrate_matrix_ode(sysm, np.outer(x0, x0), grid)
    rows = []
    worst = 0.0
    for i in range(grid.size):
        M, Z = mp.moments[i], ode.matrices[i]
        dev = float(np.linalg.norm(M - Z) / max(1.0, np.linalg.norm(Z)))
        worst = max(worst, dev)
        rows.append([float(grid[i]), float(np.trace(M)), float(np.linalg.norm(M)), dev])
    tol = moment_tolerance(args.paths, args.h, np.outer(x0, x0))
    passed = worst <= tol
    _write_csv(os.path.join(out, "mc_summary.csv"),
               ["t", "trace", "fro_norm", "deviation_vs_ode"], rows, args)
    _write_json(os.path.join(out, "mc_report.json"), {
        "paths": args.paths, "seed": args.seed, "step": args.h, "T": args.T,
        "max_deviation": worst, "tolerance": tol, "passed": passed,
        "excluded_paths": mp.excluded,
    }, args)
    print(f"moment deviation {worst:.4e} (tolerance {tol:.4e}): "
          f"{'PASS' if passed else 'FAIL'}")
    return 0 if passed else VALIDATION_EXIT


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bilimor",
        description="Model reduction and output-error bounds for bilinear systems",
    )
    parser.add_argument("--version", action="version", version=f"bilimor {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a benchmark system bundle")
    p.add_argument("kind", choices=["toy", "heat", "random"])
    p.add_argument("--nn", type=int, default=10, help="interior mesh nodes per axis (heat)")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target", choices=["hurwitz", "mean_square"], default="mean_square")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("reduce", help="compute a reduced-order model")
    p.add_argument("--system", required=True, help="system bundle directory")
    p.add_argument("--method", choices=["bt", "spa", "irka"], required=True)
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--gamma", default="auto", help="input scaling: 'auto' or a number")
    p.add_argument("--tol", type=float, default=1e-8, help="IRKA convergence tolerance")
    p.add_argument("--maxit", type=int, default=100, help="IRKA iteration cap")
    p.add_argument("--seed", type=int, default=None, help="IRKA random-init seed")
    p.add_argument("--export-gramians", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("bound", help="evaluate output (error) bounds")
    p.add_argument("--system", required=True)
    p.add_argument("--rom", default=None, help="reduced bundle: bound the output error")
    p.add_argument("--control", default="toy", help="'toy', 'zero', or CSV sample file")
    p.add_argument("--alpha", type=float, default=1.0, help="control L2 energy")
    p.add_argument("--gamma", default="auto")
    p.add_argument("--sweep", default=None, help="alpha:A0:A1:STEPS or gamma:G0:G1:STEPS")
    p.add_argument("--h", type=float, default=1e-3, help="integrator step")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("simulate", help="integrate a trajectory and write CSV")
    p.add_argument("--system", required=True)
    p.add_argument("--control", default="toy")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--x0", default=None, help="comma-separated initial state")
    p.add_argument("--states", action="store_true", help="include state columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="run the property suites")
    p.add_argument("--suite", choices=["all", "gronwall", "traces", "stability"],
                   default="all")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("mc", help="stochastic moment check")
    p.add_argument("--system", required=True)
    p.add_argument("--paths", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--x0", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mc)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return CONFIG_EXIT
    except _NUMERIC_ERRORS as exc:
        print(f"numerical error: {exc}", file=_sys.stderr)
        return NUMERIC_EXIT
    except BilimorError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return NUMERIC_EXIT


if __name__ == "__main__":
    raise SystemExit(main())
