"""Command line interface.

Exit status is 0 on success, 1 on a usage error and 2 when a numerical
routine or solver fails.  Data goes to ``--out`` (default standard
output) and diagnostics to standard error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import __version__
from .certificate import build_frame, golfing_run, local_isometry_spectrum, verify_dual_conditions
from .coherence import (
    ADMISSIBLE_NU,
    coherence_report,
    construct_admissible,
    construct_partition,
    verify_admissible,
)
from .convex import ConvexConfig, operator_norm_estimate, solve_nuclear
from .errors import DemixError
from .harness import (
    ExperimentConfig,
    noise_scaling_study,
    parse_grid,
    phase_transition_sweep,
    relative_errors,
)
from .operators import build_ensemble, lift, sample_factored, synthesize_observation
from .serialization import bundle_to_dict, load_bundle
from .wirtinger import WirtingerConfig, solve_wirtinger

__all__ = ["main", "build_parser"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common():
    # defaults are suppressed so a flag given before the subcommand survives
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    p.add_argument("--omega", type=float, default=argparse.SUPPRESS, help="probability exponent (>= 1)")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output file (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default=argparse.SUPPRESS)
    return p


def _instance_args(p, need_truth=False):
    p.add_argument("--bundle", help="read the instance from a bundle written by `gen`")
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--n", type=int, default=4)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--l", type=int, help="number of measurements L")
    g.add_argument("--rho", type=float, help="oversampling ratio; L = round(rho r (k + n))")
    p.add_argument("--basis", choices=("dft", "random"), default="dft")
    p.add_argument("--tau", type=float, default=0.0)


def build_parser():
    parser = _Parser(prog="demixdeconv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--omega", type=float, default=1.0)
    parser.add_argument("--out", default=None)
    parser.add_argument("--format", choices=("csv", "json"), default=None)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()

    p = sub.add_parser("gen", parents=[common], help="write an ensemble/truth/observation bundle")
    _instance_args(p)
    p.add_argument(
        "--normalize", action="store_true", help="unit-norm channels (theory convention)"
    )

    p = sub.add_parser("solve", parents=[common], help="recover a bundle's signal")
    p.add_argument("--bundle", required=True)
    p.add_argument("--method", choices=("convex", "wirtinger"), default="convex")
    p.add_argument("--convex-method", choices=("admm", "pdhg"), default="admm")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--tol-rel", type=float)
    p.add_argument("--tol-feas", type=float)
    p.add_argument("--step-ratio", type=float)
    p.add_argument("--grad-tol", type=float)

    p = sub.add_parser("coherence", parents=[common], help="coherence parameters")
    _instance_args(p)
    p.add_argument("--P", type=int, help="partition size used for mu_h^2")

    p = sub.add_parser("partition", parents=[common], help="construct and check a partition")
    _instance_args(p)
    p.add_argument("--P", type=int, help="number of sets (default: smallest admissible)")
    p.add_argument("--nu", type=float, default=ADMISSIBLE_NU)
    p.add_argument("--max-attempts", type=int, default=50)
    p.add_argument("--no-refine", action="store_true", help="plain uniform draws only")
    p.add_argument("--no-dft-shortcut", action="store_true")

    for name, text in (("certify", "golfing certificate"), ("isometry", "local isometry spectrum")):
        p = sub.add_parser(name, parents=[common], help=text)
        _instance_args(p)
        p.add_argument("--P", type=int)
        p.add_argument("--raw-truth", action="store_true", help="do not normalize the channels")
        if name == "isometry":
            p.add_argument("--with-partition", action="store_true")

    p = sub.add_parser("sweep", parents=[common], help="phase-transition sweep")
    p.add_argument("--solver", choices=("convex", "wirtinger", "both"), default="both")
    p.add_argument("--r", type=int, default=4)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--rho", default="0.8:3.2:0.2", help="start:stop:step or comma list")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("noise", parents=[common], help="noise-scaling study (convex)")
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--rho", type=float, default=8.0)
    p.add_argument("--taus", default="0.001,0.003,0.01,0.03,0.1")
    p.add_argument("--trials", type=int, default=10)
    return parser


def _emit(args, payload, table=None, default_format="json"):
    fmt = args.format or default_format
    if fmt == "csv":
        if table is not None:
            text = table.to_csv()
        else:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["field", "value"])
            for k, v in payload.items():
                w.writerow([k, json.dumps(v) if isinstance(v, (list, dict)) else v])
            text = buf.getvalue()
    else:
        text = json.dumps(payload, indent=None) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _make_instance(args, normalize):
    rng = np.random.default_rng(args.seed)
    if args.bundle:
        ens, obs, truth = load_bundle(args.bundle)
        return ens, obs, truth, rng
    if args.l is not None:
        L = args.l
    elif args.rho is not None:
        L = int(round(args.rho * args.r * (args.k + args.n)))
    else:
        L = 8 * args.r * (args.k + args.n)
    if L < max(args.k, args.n):
        raise UsageError(f"L={L} is smaller than max(k, n)")
    ens = build_ensemble(L, [args.k] * args.r, [args.n] * args.r, rng, basis=args.basis)
    truth = sample_factored(ens.K_dims, ens.N_dims, rng, normalize=normalize)
    obs = synthesize_observation(ens, truth, args.tau, rng)
    return ens, obs, truth, rng


def _cmd_gen(args):
    ens, obs, truth, _ = _make_instance(args, args.normalize)
    _emit(args, bundle_to_dict(ens, obs, truth))


def _cmd_solve(args):
    ens, obs, truth = load_bundle(args.bundle)
    if args.method == "convex":
        kw = {"method": args.convex_method}
        for name in ("max_iters", "tol_rel", "tol_feas", "step_ratio"):
            if getattr(args, name) is not None:
                kw[name] = getattr(args, name)
        res = solve_nuclear(ens, obs, ConvexConfig(**kw))
    else:
        kw = {}
        if args.max_iters is not None:
            kw["max_iters"] = args.max_iters
        if args.grad_tol is not None:
            kw["grad_tol"] = args.grad_tol
        res = solve_wirtinger(ens, obs, WirtingerConfig(**kw))
    out = res.to_dict()
    if truth is not None and np.all(truth.sigmas > 0):
        out["relative_errors"] = relative_errors(res.estimate, lift(truth)).tolist()
    _emit(args, out)


def _partition_for(args, ens, rng):
    if getattr(args, "P", None):
        return construct_partition(ens, args.P, ADMISSIBLE_NU, True, rng)
    return construct_admissible(ens, args.omega, rng=rng)


def _cmd_coherence(args):
    ens, _, truth, rng = _make_instance(args, True)
    part = channels = None
    if args.P:
        part = construct_partition(ens, args.P, ADMISSIBLE_NU, True, rng)
        channels = truth.normalized().channels if truth is not None else None
    rep = coherence_report(ens, part, channels, omega=args.omega, rng=rng)
    _emit(args, rep.to_dict())


def _cmd_partition(args):
    ens, _, _, rng = _make_instance(args, True)
    if args.P:
        part = construct_partition(
            ens,
            args.P,
            args.nu,
            not args.no_dft_shortcut,
            rng,
            args.max_attempts,
            refine=not args.no_refine,
        )
    else:
        part = construct_admissible(
            ens, args.omega, args.nu, rng, args.max_attempts, refine=not args.no_refine
        )
    rep = verify_admissible(part, ens, args.omega)
    _emit(
        args,
        {
            "P": part.P,
            "Q": part.Q,
            "sizes": part.sizes.tolist(),
            "nu_achieved": part.nu_achieved,
            **rep.to_dict(),
        },
    )


def _truth_for_theory(args, truth):
    if truth is None:
        raise UsageError("the bundle carries no ground truth")
    return truth if args.raw_truth else truth.normalized()


def _cmd_certify(args):
    ens, _, truth, rng = _make_instance(args, not args.raw_truth)
    truth = _truth_for_theory(args, truth)
    part = _partition_for(args, ens, rng)
    trace = golfing_run(ens, truth, part)
    gamma = operator_norm_estimate(ens, 200, rng)
    rep = verify_dual_conditions(trace, gamma)
    _emit(args, {**trace.to_dict(), "gamma": gamma, "P": part.P, **rep.to_dict()})


def _cmd_isometry(args):
    ens, _, truth, rng = _make_instance(args, not args.raw_truth)
    truth = _truth_for_theory(args, truth)
    part = _partition_for(args, ens, rng) if args.with_partition else None
    frame = build_frame(truth.normalized(), part)
    _emit(args, local_isometry_spectrum(ens, frame, part).to_dict())


def _cmd_sweep(args):
    cfg = ExperimentConfig(
        r=args.r,
        K=args.k,
        N=args.n,
        rho_grid=parse_grid(args.rho),
        trials_per_point=args.trials,
        solver=args.solver,
        tau=args.tau,
        master_seed=args.seed,
        omega=args.omega,
        workers=args.workers,
    )
    table = phase_transition_sweep(cfg)
    _emit(args, table.to_dict(), table, default_format="csv")


def _cmd_noise(args):
    cfg = ExperimentConfig(
        r=args.r,
        K=args.k,
        N=args.n,
        rho_grid=(args.rho,),
        trials_per_point=args.trials,
        solver="convex",
        master_seed=args.seed,
        omega=args.omega,
    )
    table = noise_scaling_study(cfg, parse_grid(args.taus))
    out = table.to_dict()
    rows = [r for r in table.rows if r.tau > 0]
    if len(rows) >= 2:
        out["slope"] = table.slope()
    _emit(args, out, table, default_format="csv")


_COMMANDS = {
    "gen": _cmd_gen,
    "solve": _cmd_solve,
    "coherence": _cmd_coherence,
    "partition": _cmd_partition,
    "certify": _cmd_certify,
    "isometry": _cmd_isometry,
    "sweep": _cmd_sweep,
    "noise": _cmd_noise,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        _COMMANDS[args.command](args)
    except (DemixError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"demixdeconv: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except (UsageError, ValueError, OSError, KeyError) as e:
        print(f"demixdeconv: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
