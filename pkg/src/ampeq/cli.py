"""Command-line front end.

Every command writes a ``manifest.txt`` with the parameters it ran with,
its primary outputs (CSV / binary), a ``summary.txt`` of key=value results
where applicable, and a PNG figure unless ``--no-plots`` is given.

Exit codes: 0 pass, 1 failed check, 2 invalid configuration, 3 blow-up.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .amplitude import assemble_psi, initial_state, rescaled_noise_b, solve_amplitude, solve_fou
from .experiments import (DEFAULT_EPS_GRID, ScalingConfig, convolution_moment_check,
                          default_initial_data, jobs_from_env, scaling_study)
from .fbm import (Method, PowerLaw, check_hurst, fbm_covariance, generate_fbm,
                  write_path_binary, write_path_csv)
from .holder import (DEFAULT_EPS_GRID as HOLDER_EPS_GRID, check_continuous_scaling, check_holder_scaling,
                     check_interpolated_scaling, identity_refinement, write_scaling_csv, young_study)
from .spde import solve_spde, write_manifest, read_manifest, write_trajectory
from .spectral import Preset, make_system

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2, 3

# eps-scaling checks that take only an exponent alpha
SCALING_CHECKS = {"continuous": check_continuous_scaling, "holder": check_holder_scaling}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------

def _hurst(text: str) -> float:
    try:
        return check_hurst(float(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(text: str) -> float:
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return x


def _modes(text: str) -> int:
    k = int(text)
    if k < 4:
        raise argparse.ArgumentTypeError(f"need at least 4 Fourier modes, got {k}")
    return k


def _count(text: str) -> int:
    k = int(text)
    if k < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return k


def _rho(text: str) -> float:
    x = float(text)
    if not x > 1:
        raise argparse.ArgumentTypeError(f"trace class needs rho > 1, got {text}")
    return x


def _eps_grid(text: str) -> tuple:
    try:
        vals = tuple(float(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad eps grid {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("eps grid entries must be positive")
    return vals


def _unit_open(text: str) -> float:
    x = float(text)
    if not (0.0 <= x < 1.0):
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1), got {text}")
    return x


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _write_kv(entries: dict, dest: Path) -> None:
    write_manifest({k: _fmt(v) for k, v in entries.items()}, dest)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_fbm(args) -> int:
    out = _outdir(args)
    path = generate_fbm(args.hurst, args.steps, args.dt, args.seed, Method.parse(args.method))
    write_path_binary(path, out / "fbm_path.bin")
    write_path_csv(path, out / "fbm_path.csv")
    _write_kv({"command": "gen-fbm", "hurst": args.hurst, "steps": args.steps, "dt": args.dt,
               "seed": args.seed, "method": args.method, "method_used": path.method.name.lower()},
              out / "manifest.txt")
    inc = path.increments()
    emp = float(np.mean(inc**2))
    ana = args.dt ** (2 * args.hurst)
    t_end = args.steps * args.dt
    print(f"H={args.hurst:g} n={args.steps} dt={args.dt:g} method={path.method.name.lower()} "
          f"increment_var={emp:.6g} analytic={ana:.6g} ratio={emp / ana:.4f} "
          f"B(T)^2={path.values[-1] ** 2:.6g} T^2H={fbm_covariance(t_end, t_end, args.hurst):.6g}")
    if args.plots:
        from .plotting import plot_fbm_path
        plot_fbm_path(path.times, path.values, args.hurst, out / "fbm_path.png")
    return EXIT_PASS


def cmd_simulate(args) -> int:
    out = _outdir(args)
    sys_ = make_system(args.preset, args.modes, args.nu)
    H, eps = args.hurst, args.eps
    a0, psi_s0 = default_initial_data(sys_)
    u0 = initial_state(sys_, eps, H, a0, psi_s0)
    run = solve_spde(sys_, H, eps, args.t0, u0=u0, seed=args.seed, stride=args.stride,
                     noise_modes=args.noise_modes, spectrum=PowerLaw(args.rho))
    dt = run.dt_fast
    dT = eps**2 * dt
    b = rescaled_noise_b(run.noise, eps, H, sys_, dT, args.t0)
    amp = solve_amplitude(sys_, b, a0, dT, tol=None)
    fou = solve_fou(sys_, run.noise, eps, H, dt, psi_s0)
    psi = assemble_psi(amp, fou, eps, H, sys_, run.noise.fingerprint())
    steps = run.snapshot_steps
    u = run.trajectory
    full = np.linalg.norm(u - psi.values[steps], axis=1)
    lead = eps * sys_.from_kernel(psi.psi_c[steps])
    first = np.linalg.norm(u - lead, axis=1)

    manifest = dict(run.manifest())
    manifest.update({"command": "simulate", "noise_fingerprint": run.noise.fingerprint(),
                     "psi_fingerprint": psi.fingerprint()})
    _write_kv(manifest, out / "manifest.txt")
    write_trajectory(run, out / "trajectory.bin")
    write_trajectory(dataclasses.replace(run, trajectory=psi.values[steps]), out / "psi.bin")
    with open(out / "errors.csv", "w") as fh:
        fh.write("t,err_psi,err_first_order,norm_u\n")
        for t, e1, e2, nu in zip(run.times, full, first, np.linalg.norm(u, axis=1)):
            fh.write(",".join(repr(float(v)) for v in (t, e1, e2, nu)) + "\n")
    _write_amplitude_csv(sys_, amp, out / "amplitude.csv", stride=run.stride)
    blown = run.truncated
    finite = np.isfinite(full)
    _write_kv({"sup_err_psi": float(full[finite].max()) if finite.any() else float("nan"),
               "sup_err_first_order": float(first[finite].max()) if finite.any() else float("nan"),
               "blowup": blown, "blowup_time": run.blowup_time if blown else "none"},
              out / "summary.txt")
    print(f"eps={eps:g} H={H:g} sup|u-psi|={np.nanmax(full):.4e} "
          f"sup|u-eps a|={np.nanmax(first):.4e}" + (" BLOWUP" if blown else ""))
    if args.plots:
        from .plotting import plot_error_series
        plot_error_series(run.times, full, first, eps, out / "errors.png")
    return EXIT_BLOWUP if blown else EXIT_PASS


def _write_amplitude_csv(sys_, amp, dest: Path, stride: int = 1) -> None:
    # complex coefficients of the signed kernel modes
    kernel = sys_.kernel_wavenumbers
    full = sys_.from_kernel(amp.values)
    with open(dest, "w") as fh:
        cols = ["T"] + [f"{p}_{k}" for k in kernel for p in ("re", "im")]
        fh.write(",".join(cols) + "\n")
        for j in range(0, amp.values.shape[0], stride):
            x = full[j]
            row = [repr(float(amp.dT * j))]
            for k in kernel:
                if k == 0:
                    c = complex(x[0], 0.0)
                else:
                    a, b = x[2 * abs(k) - 1], x[2 * abs(k)]
                    c = complex(a, -b if k > 0 else b) / math.sqrt(2.0)
                row += [repr(float(c.real)), repr(float(c.imag))]
            fh.write(",".join(row) + "\n")


def cmd_scaling_study(args) -> int:
    out = _outdir(args)
    grid = tuple(sorted(args.eps_grid, reverse=True))
    cfg = ScalingConfig(H=args.hurst, eps_grid=grid, replicas=args.replicas,
                        preset=args.preset, modes=args.modes, noise_modes=args.noise_modes,
                        rho=args.rho, nu=args.nu, T0=args.t0, seed_base=args.seed_base)
    report = scaling_study(cfg, jobs=jobs_from_env(args.jobs),
                           progress=lambda msg: print(msg, file=sys.stderr))
    report.write_csv(out / "scaling_report.csv")
    _write_kv({"command": "scaling-study", "preset": cfg.preset, "modes": cfg.modes,
               "H": cfg.H, "eps_grid": cfg.eps_grid, "replicas": cfg.replicas, "T0": cfg.T0,
               "nu": cfg.nu, "rho": cfg.rho, "K": cfg.noise_modes, "seed_base": cfg.seed_base},
              out / "manifest.txt")
    _write_kv(report.summary(), out / "summary.txt")
    s = report.summary()
    print(f"slope={s['slope']:.4f} stderr={s['slope_stderr']:.4f} "
          f"gamma_theory={s['gamma_theory']:.4g} pass={s['pass']}")
    if args.plots:
        from .plotting import plot_scaling
        plot_scaling(report.eps, report.median, report.q10, report.q90, report.slope,
                     report.gamma_theory, out / "scaling.png", report.first_median)
    if not report.valid:
        return EXIT_BLOWUP
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_holder_check(args) -> int:
    out = _outdir(args)
    check = args.check
    manifest = {"command": "holder-check", "check": check}
    if check in (*SCALING_CHECKS, "interpolated"):
        grid = args.eps_grid
        if check == "interpolated":
            alpha = 0.6 if args.alpha is None else args.alpha
            gamma = 0.3 if args.gamma is None else args.gamma
            rep = check_interpolated_scaling(alpha, gamma, eps_grid=grid)
        else:
            alpha = 0.4 if args.alpha is None else args.alpha
            rep = SCALING_CHECKS[check](alpha, eps_grid=grid)
        manifest.update({"alpha": alpha, "eps_grid": tuple(rep.eps)})
        if check == "interpolated":
            manifest["gamma"] = rep.params["gamma"]
        write_scaling_csv(rep, out / "ratios.csv")
        summary = rep.summary()
        passed = rep.passed
        if args.plots:
            from .plotting import plot_scaling_check
            plot_scaling_check(rep.eps, rep.ratios, rep.name, rep.exponent, out / "ratios.png")
    elif check == "identity":
        sys_ = make_system(args.preset, args.modes)
        eps = 0.25 if args.eps is None else args.eps
        reps = identity_refinement(sys_, args.hurst, eps, dt=args.dt, levels=3, seed=args.seed,
                                   noise_modes=args.noise_modes, spectrum=PowerLaw(args.rho))
        rel = [r.relative for r in reps]
        decreasing = all(b < a for a, b in zip(rel, rel[1:]))
        passed = rel[0] < 1e-2 and decreasing
        with open(out / "identity.csv", "w") as fh:
            fh.write("dt,deviation,relative\n")
            for r in reps:
                fh.write(",".join(repr(float(v)) for v in (r.dt, r.deviation, r.relative)) + "\n")
        manifest.update({"H": args.hurst, "eps": eps, "dt": args.dt, "seed": args.seed,
                         "preset": args.preset, "modes": args.modes,
                         "K": args.noise_modes, "rho": args.rho})
        summary = {"relative_at_dt": rel[0], "strictly_decreasing": decreasing, "pass": passed}
    else:
        sys_ = make_system(args.preset, args.modes)
        eps = 0.25 if args.eps is None else args.eps
        alpha = 0.6 if args.alpha is None else args.alpha
        beta = 0.6 if args.beta is None else args.beta
        res = young_study(sys_, args.hurst, eps, alpha, beta, seed=args.seed,
                          noise_modes=args.noise_modes, spectrum=PowerLaw(args.rho))
        with open(out / "young.csv", "w") as fh:
            fh.write("replica,ratio\n")
            for i, r in enumerate(res["ratios"]):
                fh.write(f"{i},{float(r)!r}\n")
        manifest.update({"H": args.hurst, "eps": eps, "alpha_p": alpha, "beta_p": beta,
                         "seed": args.seed, "preset": args.preset, "modes": args.modes,
                         "K": args.noise_modes, "rho": args.rho})
        passed = res["pass"]
        summary = {"constant": res["constant"], "holdout_max": res["holdout_max"],
                   "pass": passed}
    _write_kv(manifest, out / "manifest.txt")
    _write_kv(summary, out / "summary.txt")
    print(" ".join(f"{k}={_fmt(v)}" for k, v in summary.items()))
    return EXIT_PASS if passed else EXIT_FAIL


def cmd_convolution_moments(args) -> int:
    out = _outdir(args)
    if not (0 < args.alpha < args.hurst):
        raise ConfigError("the factorisation exponent must lie in (0, H)")
    rep = convolution_moment_check(args.hurst, args.alpha, lam=args.lam,
                                   replicas=args.replicas, seed=args.seed)
    with open(out / "moments.csv", "w") as fh:
        fh.write("t,estimate,stderr,exact\n")
        for row in zip(rep.times, rep.estimates, rep.stderr, rep.exact):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    gap = rep.plateau_gap()
    passed = gap <= 0.15 and rep.bounded
    _write_kv({"command": "convolution-moments", "H": args.hurst, "alpha": args.alpha,
               "lam": args.lam, "replicas": args.replicas, "seed": args.seed},
              out / "manifest.txt")
    _write_kv({"plateau_gap_5_10": gap, "max_over_min": rep.max_over_min, "pass": passed},
              out / "summary.txt")
    print("E|Y|^2: " + " ".join(f"t={t:g}:{e:.4f}" for t, e in zip(rep.times, rep.estimates))
          + f" plateau_gap={gap:.4f} pass={passed}")
    if args.plots:
        from .plotting import plot_moments
        plot_moments(rep.times, rep.estimates, rep.stderr, rep.exact, out / "moments.png")
    return EXIT_PASS if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--no-plots", dest="plots", action="store_false", help="skip PNG figures")
    p.add_argument("--jobs", type=_count, default=None,
                   help="worker processes (default: AMPEQ_JOBS or available CPUs)")


def _model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=[x.value for x in Preset], default="laplacian")
    p.add_argument("--modes", type=_modes, default=32)
    p.add_argument("--noise-modes", type=_count, default=32)
    p.add_argument("--rho", type=_rho, default=2.0)
    p.add_argument("--nu", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ampeq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="key=value file; command-line flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-fbm", help="generate one fBm path")
    p.add_argument("--hurst", type=_hurst, required=True)
    p.add_argument("--steps", type=_count, default=1024)
    p.add_argument("--dt", type=_positive, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=["circulant", "cholesky"], default="circulant")
    _common(p)
    p.set_defaults(func=cmd_gen_fbm)

    p = sub.add_parser("simulate", help="SPDE run with its amplitude approximation")
    _model(p)
    p.add_argument("--hurst", type=_hurst, required=True)
    p.add_argument("--eps", type=_positive, required=True)
    p.add_argument("--t0", type=_positive, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stride", type=_count, default=None)
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scaling-study", help="error versus eps sweep")
    _model(p)
    p.add_argument("--hurst", type=_hurst, required=True)
    p.add_argument("--eps-grid", type=_eps_grid, default=DEFAULT_EPS_GRID)
    p.add_argument("--replicas", type=_count, default=100)
    p.add_argument("--t0", type=_positive, default=1.0)
    p.add_argument("--seed-base", type=int, default=0)
    _common(p)
    p.set_defaults(func=cmd_scaling_study)

    p = sub.add_parser("holder-check", help="eps-scaling of fast convolutions")
    _model(p)
    # the cubic coupling of kernel and stable modes vanishes for the Laplacian
    p.set_defaults(preset="swift-hohenberg")
    p.add_argument("--check", required=True,
                   choices=[*SCALING_CHECKS, "interpolated", "identity", "young"])
    p.add_argument("--alpha", type=_unit_open, default=None)
    p.add_argument("--gamma", type=_unit_open, default=None)
    p.add_argument("--beta", type=_unit_open, default=None)
    p.add_argument("--eps-grid", type=_eps_grid, default=HOLDER_EPS_GRID)
    p.add_argument("--eps", type=_positive, default=None)
    p.add_argument("--hurst", type=_hurst, default=0.7)
    p.add_argument("--dt", type=_positive, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    _common(p)
    p.set_defaults(func=cmd_holder_check)

    p = sub.add_parser("convolution-moments", help="second moments of the factorised convolution")
    p.add_argument("--hurst", type=_hurst, required=True)
    p.add_argument("--alpha", type=_positive, required=True)
    p.add_argument("--lam", type=float, default=-1.0)
    p.add_argument("--replicas", type=_count, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    _common(p)
    p.set_defaults(func=cmd_convolution_moments)
    return parser


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


# manifest names that differ from option names
_CONFIG_ALIASES = {"H": "hurst", "T0": "t0", "K": "noise_modes", "alpha_p": "alpha",
                   "beta_p": "beta"}
# derived values a manifest records but no option sets
_RECORDED_KEYS = {"method_used", "dt_fast", "noise_fingerprint", "psi_fingerprint"}


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    """Load --config values as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    command = next((a for a in rest if not a.startswith("-")), None)
    if command is None:
        return
    try:
        entries = read_manifest(known.config)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    sp = _subparser(parser, command)
    actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "func")}
    defaults = {}
    for key, raw in entries.items():
        if key in _RECORDED_KEYS:
            continue
        dest = _CONFIG_ALIASES.get(key, key).replace("-", "_")
        negate = dest == "no_plots"
        if negate:
            dest = "plots"
        if dest == "command":
            if raw != command:
                raise ConfigError(f"config is for command {raw!r}, not {command!r}")
            continue
        if dest not in actions:
            raise ConfigError(f"unknown config key {key!r} for {command}")
        act = actions[dest]
        try:
            if isinstance(act, argparse._StoreFalseAction):
                flag = raw.strip().lower() in ("1", "true", "yes")
                value = not flag if negate else flag
            else:
                value = act.type(raw) if act.type else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for {key}: {exc}") from None
        if act.choices is not None and value not in act.choices:
            raise ConfigError(f"invalid value for {key}: {raw!r}")
        defaults[dest] = value
        act.required = False
    sp.set_defaults(**defaults)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except ConfigError as exc:
        print(f"ampeq: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_PASS
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"ampeq: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
