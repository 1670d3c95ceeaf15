"""Command-line front end: ``randcf {simulate,levy,deviation,check,mixing}``.

Every command is a pure function of its flags; ``--seed`` is mandatory and
``--threads`` never changes the output bytes.  Exit status is 0 on success,
1 when a verification fails and 2 on usage or configuration errors.
"""

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys

import numpy as np

from . import __version__, seeding
from .convergents import ConvergentState, convergents, identity_suite, levy_trajectory, sandwich_check, step
from .deviation import chernoff_certificate, empirical_deviation, fit_rate, verify_bound
from .errors import (
    CertificateError,
    ConfigurationError,
    DomainError,
    InsufficientDataError,
    LengthError,
    PrecisionError,
    RandCFError,
)
from .levy import levy_analytic, levy_mc_direct, levy_mc_trajectory, reference_levy
from .mixing import gauss_marginal_check, mixing_profile, stationarity_check
from .processes import BUILTIN_SPECS, Explicit, GaussStationary, sample_path, sample_paths, spec_from_json

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class VerificationFailed(Exception):
    """Raised by a command whose checks ran but did not pass."""


# --------------------------------------------------------------------------
# parsing helpers


def load_spec(text):
    """Builtin name, path to a JSON file, or inline JSON."""
    if text in BUILTIN_SPECS:
        return BUILTIN_SPECS[text]
    if os.path.isfile(text):
        with open(text) as fh:
            text = fh.read()
    return spec_from_json(text)


def parse_grid(text):
    """``a:b:step`` (inclusive) or a comma list; must be strictly increasing."""
    try:
        if ":" in text:
            a, b, s = (int(x) for x in text.split(":"))
            if s <= 0:
                raise ValueError
            grid = list(range(a, b + 1, s))
        else:
            grid = [int(x) for x in text.split(",")]
    except ValueError:
        raise ConfigurationError(f"bad grid {text!r}; use a:b:step or n1,n2,...") from None
    if not grid or grid[0] < 1 or any(x >= y for x, y in zip(grid, grid[1:])):
        raise ConfigurationError(f"grid {text!r} must be positive and strictly increasing")
    return grid


def load_json_arg(text):
    if os.path.isfile(text):
        with open(text) as fh:
            text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"bad JSON: {exc}") from None


def seed_arg(text):
    try:
        return seeding.check_seed(int(text, 0))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# --------------------------------------------------------------------------
# output


def round_floats(obj):
    """Render floats with 9 significant digits, recursively; integers stay exact."""
    if isinstance(obj, bool) or obj is None:
        return obj
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if not math.isfinite(x) else float(f"{x:.9g}")
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj


def dump_json(doc):
    return json.dumps(round_floats(doc), sort_keys=True, indent=2) + "\n"


def fmt(x):
    return format(x, ".9g") if isinstance(x, float) else str(x)


def write_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def emit(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def side_path(out, suffix):
    stem, _ = os.path.splitext(out)
    return stem + suffix


def run_info(args, spec):
    return {
        "spec": spec.to_json(),
        "seed": args.seed,
        "mixing_function": seeding.MIXING_FUNCTION,
        "version": __version__,
    }


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    spec = load_spec(args.spec)
    n = args.n
    if n is None:
        if not isinstance(spec, Explicit):
            raise ConfigurationError("--n is required for random specs")
        n = len(spec.digits)
    path = sample_path(spec, n, args.seed)
    P, Q = convergents(path.digits)
    traj = levy_trajectory(path)
    final = f"{P[-1]}/{Q[-1]}"
    if args.format == "json":
        doc = run_info(args, spec)
        doc.update(n=n, digits=list(path.digits), final_convergent=final, log_qn_over_n=traj)
        emit(dump_json(doc), args.out)
    else:
        rows = [(j, a, P[j + 1], Q[j + 1], traj[j - 1]) for j, a in enumerate(path.digits, start=1)]
        emit(write_csv(("n", "a_n", "p_n", "q_n", "log_qn_over_n"), rows), args.out)
    print(f"final convergent: {final}", file=sys.stderr)


def cmd_levy(args):
    spec = load_spec(args.spec)
    if not spec.is_random:
        raise ConfigurationError("Levy estimates need a random process")
    n = args.n or 500
    trials = args.trials or 200
    traj = levy_mc_trajectory(spec, n, trials, args.seed, args.threads)
    direct = levy_mc_direct(spec, trials, args.truncation_depth, args.seed, args.threads)
    combined = math.hypot(traj.stderr, direct.stderr)
    # finite-n bias of the trajectory estimator is at most ln 2 / n
    tol = 3.0 * (combined + math.log(2.0) / n)
    doc = run_info(args, spec)
    doc.update(
        analytic=levy_analytic(spec),
        trajectory=traj.to_json(),
        direct=direct.to_json(),
        difference=traj.point - direct.point,
        tolerance=tol,
        consistent=abs(traj.point - direct.point) <= tol,
    )
    if args.format == "csv":
        rows = [(e.method, e.point, e.stderr, e.n, e.trials) for e in (traj, direct)]
        emit(write_csv(("method", "point", "stderr", "n", "trials"), rows), args.out)
    else:
        emit(dump_json(doc), args.out)


def cmd_deviation(args):
    spec = load_spec(args.spec)
    if not spec.is_random:
        raise ConfigurationError("deviation curves need a random process")
    if args.delta is None or args.delta <= 0:
        raise ConfigurationError("--delta > 0 is required")
    if args.n_grid is None:
        raise ConfigurationError("--n-grid is required")
    grid = parse_grid(args.n_grid)
    trials = args.trials or 10_000
    profile = load_json_arg(args.psi_profile) if args.psi_profile else None
    if args.certify and profile is None and spec.kind != "iid":
        raise ConfigurationError(f"--certify on a {spec.kind} spec needs --psi-profile")

    if args.reference_L is not None:
        ref, ref_se = args.reference_L, 0.0
    else:
        # independent of the curve's trajectories: own seed stream, 10x the trial budget
        ref_trials = args.reference_trials or 10 * trials
        ref, ref_se = reference_levy(spec, ref_trials, args.seed, args.truncation_depth, args.threads)
    curve = empirical_deviation(spec, args.delta, grid, trials, args.seed, ref, args.threads)
    summary = run_info(args, spec)
    summary.update(delta=args.delta, reference_L=ref, reference_stderr=ref_se, trials=trials)
    try:
        summary["fit"] = fit_rate(curve).to_json()
    except InsufficientDataError as exc:
        summary["fit"] = None
        summary["fit_error"] = str(exc)

    failed = False
    if args.certify:
        cert = chernoff_certificate(
            spec,
            args.delta,
            psi_profile=profile,
            seed=args.seed,
            trials=args.certify_trials,
            m=args.truncation_depth,
            reference_L=ref,
            threads=args.threads,
        )
        check = verify_bound(curve, cert)
        summary["certificate"] = cert.to_json()
        summary["verify_bound"] = check.to_json()
        failed = not check.passed

    if args.format == "csv":
        emit(curve.to_csv(), args.out)
        text = dump_json(summary)
        if args.out:
            emit(text, side_path(args.out, ".summary.json"))
        else:
            sys.stderr.write(text)
    else:
        summary["curve"] = curve.to_json()["grid"]
        emit(dump_json(summary), args.out)
    if failed:
        raise VerificationFailed("empirical deviation curve exceeds the certified bound")


def corrupted_step(state, a):
    """Recurrence with ``Q_n`` off by one at n = 3, for harness self-tests."""
    nxt = step(state, a)
    if nxt.n == 3:
        return ConvergentState(nxt.n, nxt.P_prev, nxt.P_cur, nxt.Q_prev, nxt.Q_cur + 1)
    return nxt


def cmd_check(args):
    step_fn = corrupted_step if args.self_test else step
    m = args.truncation_depth
    n = args.n or 40
    trials = args.trials or 1000
    exhaustive = None
    cases = 0
    for length in range(1, 7):
        for digits in itertools.product((1, 2, 3), repeat=length):
            rep = identity_suite(list(digits), m=m, step_fn=step_fn)
            exhaustive = rep if exhaustive is None else exhaustive.merge(rep)
            cases += 1
    if args.spec:
        families = {args.spec: load_spec(args.spec)}
    else:
        families = {k: v for k, v in BUILTIN_SPECS.items() if v.is_random}
    random_reports = {}
    worst_sandwich = -math.inf
    for name, spec in families.items():
        if spec.is_random:
            digits = sample_paths(spec, n + m, seeding.trial_seeds(seeding.derive_seed(args.seed, len(random_reports)), trials), args.threads)
            paths = [list(map(int, row)) for row in digits]
        else:
            paths = [list(spec.digits)]
        rep = None
        for path in paths:
            r = identity_suite(path, m=m, n=min(n, len(path)), step_fn=step_fn)
            rep = r if rep is None else rep.merge(r)
            worst_sandwich = max(worst_sandwich, sandwich_check(path, m=m, n=min(n, len(path))).residual)
        random_reports[name] = {"paths": len(paths), "identities": rep.to_json(), "passed": rep.passed}
    sandwich_ok = worst_sandwich <= 2.0**-30
    passed = exhaustive.passed and all(r["passed"] for r in random_reports.values()) and sandwich_ok
    doc = {
        "seed": args.seed,
        "self_test": args.self_test,
        "n": n,
        "truncation_depth": m,
        "exhaustive": {"paths": cases, "identities": exhaustive.to_json(), "passed": exhaustive.passed},
        "random": random_reports,
        "sandwich": {"worst_residual": worst_sandwich, "limit": 2.0**-30, "passed": sandwich_ok},
        "passed": passed,
    }
    emit(dump_json(doc), args.out)
    print("check: " + ("PASS" if passed else "FAIL"), file=sys.stderr)
    if not passed:
        raise VerificationFailed("identity or sandwich check failed")


def cmd_mixing(args):
    spec = load_spec(args.spec)
    if args.depth < 1 or args.k_max < 1:
        raise ConfigurationError("--depth and --k-max must be >= 1")
    lags = [int(x) for x in args.lags.split(",")]
    trials = args.trials or 10_000
    est = mixing_profile(spec, lags, args.depth, args.k_max, trials, args.seed, args.threads)
    doc = run_info(args, spec)
    doc.update(est.to_json())
    doc["within_envelope"] = {str(k): est.psi_hat[k] <= est.noise_envelope[k] for k in est.lags}
    stat_lags = [k for k in lags if k >= 1] or [1]
    doc["stationarity"] = stationarity_check(
        spec, stat_lags, args.depth, args.k_max, trials, seeding.derive_seed(args.seed, 1), args.threads
    ).to_json()
    if isinstance(spec, GaussStationary):
        doc["marginal"] = gauss_marginal_check(trials, seeding.derive_seed(args.seed, 2), threads=args.threads).to_json()
    emit(dump_json(doc), args.out)


# --------------------------------------------------------------------------
# argument parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", help="builtin name, JSON file or inline JSON")
    common.add_argument("--seed", type=seed_arg, required=True, help="64-bit unsigned master seed")
    common.add_argument("--trials", type=int)
    common.add_argument("--n", type=int)
    common.add_argument("--n-grid", help="a:b:step or comma list")
    common.add_argument("--delta", type=float)
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), help="default: csv for simulate, json otherwise")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--truncation-depth", type=int, help="digits used to bracket X_1 (default 64; 40 for check)")

    parser = argparse.ArgumentParser(prog="randcf", description="Random continued fraction experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="sample one path and its convergents")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("levy", parents=[common], help="trajectory and direct Levy constant estimates")
    p.set_defaults(func=cmd_levy)

    p = sub.add_parser("deviation", parents=[common], help="deviation probabilities, rate fit, certificate")
    p.add_argument("--certify", action="store_true", help="add a Chernoff certificate and check the curve against it")
    p.add_argument("--psi-profile", help="JSON map lag -> psi (file or inline)")
    p.add_argument("--reference-L", type=float, help="reference constant (default: analytic or direct estimate)")
    p.add_argument("--reference-trials", type=int, help="direct-estimate trials for the reference (default 10x --trials)")
    p.add_argument("--certify-trials", type=int, default=100_000)
    p.set_defaults(func=cmd_deviation)

    p = sub.add_parser("check", parents=[common], help="identity suite and sandwich bound")
    p.add_argument("--self-test", action="store_true", help="corrupt one recurrence step; the check must fail")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("mixing", parents=[common], help="psi-mixing and stationarity diagnostics")
    p.add_argument("--lags", default="1,2,4,8")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--k-max", type=int, default=5)
    p.set_defaults(func=cmd_mixing)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    # parent-parser actions are shared, so per-command defaults are resolved here
    if args.format is None:
        args.format = "csv" if args.command == "simulate" else "json"
    if args.truncation_depth is None:
        args.truncation_depth = 40 if args.command == "check" else 64
    if args.command in ("levy", "deviation", "mixing") and not args.spec:
        parser.error("--spec is required")
    if args.command == "simulate" and not args.spec:
        parser.error("--spec is required")
    try:
        args.func(args)
    except VerificationFailed as exc:
        print(f"randcf: verification failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (CertificateError, PrecisionError, InsufficientDataError) as exc:
        print(f"randcf: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ConfigurationError, DomainError, LengthError, ValueError, OSError) as exc:
        print(f"randcf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RandCFError as exc:
        print(f"randcf: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
