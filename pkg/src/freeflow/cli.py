"""Command-line front end.

Subcommands:

* ``validate``   -- structural checks on the scenario's model: every
  demand curve must certify (rising slopes bounded by 1 on the smooth
  range, no rise past the critical count, positive flows).
* ``equilibrium`` -- uncongested equilibrium for the target inflows.
* ``synth``      -- synthesize a stabilizing certificate, write JSON.
* ``simulate``   -- run the scenario, write a trajectory CSV.
* ``compare``    -- run two named controllers, print a VEF table.
* ``verify``     -- decrease/sandwich sweeps plus the property suite,
  write a report JSON.

Every command exits 0 on success and nonzero with a diagnostic naming
the failed check on stderr.  Results are computed through the same
scenario helpers the library exposes, so a CLI run and a library run of
the same config are bit-identical.  Output files are written atomically
(temp file in the target directory, then rename).
"""

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import _kernels
from . import scenario as sc
from .control import StabilizingFeedback
from .errors import FreeflowError
from .lyapunov import LyapunovFunction, verify_decrease, verify_sandwich
from .simulate import vef, write_csv
from .suite import property_suite
from .synthesis import StabilizerCertificate


def _write_atomic(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _write_csv_atomic(record, path):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    os.close(fd)
    try:
        write_csv(record, tmp)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _emit(doc, out=None):
    text = json.dumps(doc, indent=2)
    if out is None:
        print(text)
    else:
        _write_atomic(out, text + "\n")
        print(f"wrote {out}")


def _load_cert(path):
    try:
        with open(path) as handle:
            doc = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise FreeflowError(f"cannot read certificate {path!r}: {exc}") from None
    return StabilizerCertificate.from_dict(doc)


def cmd_validate(args):
    config = sc.load_scenario(args.config)
    cells = []
    for i, cell in enumerate(config.model.cells, start=1):
        try:
            cert = cell.demand.validate()
        except FreeflowError as exc:
            print(f"validation failed: cell {i} demand: {exc}", file=sys.stderr)
            return 1
        cells.append(
            {
                "cell": i,
                "hold_lipschitz": cert.hold_lipschitz,
                "flow_lipschitz": cert.flow_lipschitz,
                "theta_lower": cert.theta_lower,
            }
        )
    _emit({"passed": True, "cells": cells}, args.out)
    return 0


def cmd_equilibrium(args):
    config = sc.load_scenario(args.config)
    x_star, phi = config.model.equilibrium_from_inflows(config.inflows)
    _emit({"x_star": list(x_star), "phi": list(phi)}, args.out)
    return 0


def cmd_synth(args):
    config = sc.load_scenario(args.config)
    cert = sc.build_certificate(config)
    _emit(cert.to_dict(), args.out)
    return 0


def cmd_simulate(args):
    config = sc.load_scenario(args.config)
    cert = _load_cert(args.cert) if args.cert else None
    record = sc.run(config, cert=cert, horizon=args.horizon, seed=args.seed)
    out = args.out if args.out is not None else config.out
    if out is not None:
        _write_csv_atomic(record, out)
    summary = {"horizon": record.horizon, "vef": vef(record)}
    if record.dist_to_eq is not None:
        summary["final_dist_to_eq"] = float(record.dist_to_eq[-1])
    if out is not None:
        summary["csv"] = out
    print(json.dumps(summary, indent=2))
    return 0


def cmd_compare(args):
    config = sc.load_scenario(args.config)
    cert = _load_cert(args.cert) if args.cert else None
    if cert is None and (
        sc.needs_certificate(config, args.a) or sc.needs_certificate(config, args.b)
    ):
        cert = sc.build_certificate(config)
    rows = []
    for name in (args.a, args.b):
        record = sc.run(
            config, controller=name, cert=cert, horizon=args.horizon, seed=args.seed
        )
        rows.append((name, vef(record)))
    width = max(len("controller"), max(len(name) for name, _ in rows))
    print(f"{'controller':<{width}}  VEF_{record.horizon}")
    for name, value in rows:
        print(f"{name:<{width}}  {value:.6f}")
    return 0


def cmd_verify(args):
    config = sc.load_scenario(args.config)
    cert = _load_cert(args.cert) if args.cert else sc.build_certificate(config)
    model = config.model
    feedback = StabilizingFeedback.from_certificate(cert)
    lyap = LyapunovFunction.from_certificate(cert)
    seed = 42 if args.seed is None else args.seed
    reports = {
        "decrease": verify_decrease(model, feedback, lyap, cert, seed=seed),
        "sandwich": verify_sandwich(model, lyap, cert, seed=seed),
        "properties": property_suite(model, cert, seed=seed),
    }
    passed = all(report.passed for report in reports.values())
    doc = {"passed": passed}
    for key, report in reports.items():
        doc[key] = report.to_dict()
    _emit(doc, args.out)
    if not passed:
        failed = [
            check.name
            for report in reports.values()
            for check in report.checks
            if not check.passed
        ]
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args):
    config = sc.load_scenario(args.config)
    model = config.model
    lyap = LyapunovFunction.from_certificate(sc.build_certificate(config))
    rng = np.random.default_rng(args.seed if args.seed is not None else 42)
    X = model.jams * rng.uniform(size=(args.samples, model.n))
    U = 2.0 * model.inflow_caps * rng.uniform(size=(args.samples, model.n))
    D = rng.uniform(size=(args.samples, model.n - 1))
    arrays = model.arrays

    kernels = {
        "demand_batch": lambda impl: impl.demand_batch(arrays, X),
        "step_batch": lambda impl: impl.step_batch(arrays, X, U, D),
        "value_batch": lambda impl: impl.value_batch(
            lyap._x_arr,
            lyap._wpow,
            lyap._iw,
            lyap.weight_A,
            lyap.weight_K,
            lyap.q_level,
            lyap.penalty_slope,
            lyap.h,
            X,
        ),
    }
    impls = _kernels.implementations()
    timings = {}
    for kernel, call in kernels.items():
        timings[kernel] = {}
        for name, impl in impls.items():
            call(impl)  # warm up
            best = float("inf")
            for _ in range(args.repeat):
                start = time.perf_counter()
                call(impl)
                best = min(best, time.perf_counter() - start)
            timings[kernel][name] = best

    names = sorted(impls)
    header = "kernel".ljust(14) + "".join(f"{name:>12}" for name in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(f"{args.samples} rows, best of {args.repeat}, backend default: "
          f"{_kernels.backend()}")
    print(header)
    for kernel, per in timings.items():
        row = kernel.ljust(14)
        row += "".join(f"{per[name] * 1e3:>10.3f}ms" for name in names)
        if len(names) == 2:
            row += f"{per['python'] / per['compiled']:>9.2f}x"
        print(row)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="freeflow",
        description="Freeway ramp-metering simulation, synthesis, and verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, cert_flag=False, run_flags=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="scenario path or bundled name")
        p.add_argument("--out", help="output file (default: stdout)")
        if cert_flag:
            p.add_argument("--cert", help="certificate JSON from 'synth'")
        if run_flags:
            p.add_argument("--horizon", type=int, help="override scenario horizon")
            p.add_argument("--seed", type=int, help="override scenario seed")
        p.set_defaults(func=func)
        return p

    add("validate", cmd_validate, "check demand curves and model structure")
    add("equilibrium", cmd_equilibrium, "compute the uncongested equilibrium")
    add("synth", cmd_synth, "synthesize a stabilizing certificate")
    add("simulate", cmd_simulate, "run the scenario and write a CSV", True, True)
    p = add("compare", cmd_compare, "run two controllers, print VEF", True, True)
    p.add_argument("--a", required=True, help="first controller name")
    p.add_argument("--b", required=True, help="second controller name")
    p = add("verify", cmd_verify, "run the verification suites", True)
    p.add_argument("--seed", type=int, help="override the sweep seed")
    p = add("bench", cmd_bench, "time the batch kernels per backend")
    p.add_argument("--samples", type=int, default=100_000, help="batch rows")
    p.add_argument("--repeat", type=int, default=5, help="timing repetitions")
    p.add_argument("--seed", type=int, help="batch sampling seed")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FreeflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
