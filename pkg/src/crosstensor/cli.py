"""Command-line front end.

Subcommands: ``sample``, ``complete``, ``hosvd``, ``simulate``, ``compare`` and
``info``. Exit status is 0 on success, 1 when the inputs or the computation
fail and 2 for usage errors. Every output is written to a temporary file and
renamed into place.
"""

import argparse
import csv
import io as _io
import itertools
import json
import os
import sys

import numpy as np

from . import __version__
from .completion import (
    DEFAULT_LAMBDA_SCALE,
    DEFAULT_SINGULARITY_REL_TOL,
    NoisyConfig,
    complete_noiseless,
    complete_noisy,
    default_lambda,
)
from .cross_scheme import (
    extract_observations,
    measurement_count,
    random_cross_indices,
    rho_policy_indices,
    sampling_ratio,
)
from .io import (
    XCO_MAGIC,
    XT3_MAGIC,
    FormatError,
    read_indices,
    read_observations,
    read_xt3,
    write_indices,
    write_json,
    write_observations,
    write_text,
    write_xt3,
)
from .simlab import (
    ExperimentCell,
    GeneratorSpec,
    NoiseSpec,
    SamplingPolicy,
    compare_with_hosvd,
    relative_hs_loss,
    rows_to_csv,
    run_experiment,
)
from .tensor_core import hosvd, mode_spectra, numerical_rank


class CliError(Exception):
    """Fatal problem reported as a one-line message and exit status 1."""


def _triple(text, cast=int):
    parts = [s for s in text.replace(" ", "").split(",") if s]
    try:
        values = [cast(s) for s in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected one or three comma-separated numbers, got {text!r}")
    if len(values) == 1:
        values *= 3
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected one or three comma-separated numbers, got {text!r}")
    return tuple(values)


def _int_triple(text):
    return _triple(text, int)


def _float_triple(text):
    return _triple(text, float)


def _check_paths(inputs=(), outputs=()):
    """Fail before any compute if an input is unreadable or an output directory is missing."""
    for path in inputs:
        if not os.path.isfile(path):
            raise CliError(f"input file not found: {path}")
        if not os.access(path, os.R_OK):
            raise CliError(f"input file not readable: {path}")
    for path in outputs:
        if path is None:
            continue
        parent = os.path.dirname(os.path.abspath(path))
        if not os.path.isdir(parent):
            raise CliError(f"output directory does not exist: {parent}")
        if os.path.isdir(path):
            raise CliError(f"output path is a directory: {path}")


def _add_noisy_flags(p):
    group = p.add_mutually_exclusive_group()
    group.add_argument("--lambda", dest="lambdas", type=_float_triple, metavar="L1,L2,L3",
                       help="explicit trimming thresholds (one value is used for all modes)")
    group.add_argument("--lambda-default", action="store_true",
                       help="use lambda_t = SCALE * sqrt(p_t / m_t); this is the default")
    p.add_argument("--lambda-scale", type=float, default=DEFAULT_LAMBDA_SCALE, metavar="SCALE",
                   help="multiplier in the default thresholds")
    p.add_argument("--singularity-rel-tol", type=float, default=DEFAULT_SINGULARITY_REL_TOL,
                   help="reciprocal condition number below which a joint block counts as singular")
    p.add_argument("--pinv-rel-tol", type=float, default=None,
                   help="pseudo-inverse cutoff relative to the largest singular value "
                        "(default 1e-12 * max(rows, cols))")


def _noisy_config(args, obs):
    lambdas = args.lambdas if args.lambdas is not None else default_lambda(
        obs.dims, obs.indices.m, args.lambda_scale)
    try:
        return NoisyConfig(lambdas, args.pinv_rel_tol, args.singularity_rel_tol)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def cmd_sample(args):
    _check_paths([args.tensor], [args.out_indices, args.out_obs])
    x = read_xt3(args.tensor)
    try:
        if args.rho is not None:
            if args.g is not None:
                raise CliError("--g cannot be combined with --rho (g follows from the rho policy)")
            idx = rho_policy_indices(x.shape, args.rho, seed=args.seed)
        else:
            idx = random_cross_indices(x.shape, args.m, args.g or args.m, seed=args.seed)
    except ValueError as exc:
        raise CliError(f"infeasible sampling sizes: {exc}") from exc
    write_indices(args.out_indices, idx)
    if args.out_obs:
        write_observations(args.out_obs, extract_observations(x, idx))
    print(f"dims {' '.join(map(str, idx.dims))}")
    print(f"m {' '.join(map(str, idx.m))}")
    print(f"g {' '.join(map(str, idx.g))}")
    print(f"measurements {measurement_count(idx)}")
    print(f"sampling_ratio {sampling_ratio(idx)!r}")
    return 0


def cmd_complete(args):
    _check_paths([args.obs] + ([args.truth] if args.truth else []), [args.out_tensor, args.out_report])
    obs = read_observations(args.obs)
    truth = None
    if args.truth:
        truth = read_xt3(args.truth)
        if truth.shape != obs.dims:
            raise CliError(f"--truth has dims {truth.shape}, observations have {obs.dims}")
    scale = args.count_scale
    if not scale > 0:
        raise CliError("--count-scale must be positive")
    doc = {
        "dims": list(obs.dims),
        "m": list(obs.indices.m),
        "g": list(obs.indices.g),
        "sampling_ratio": sampling_ratio(obs.indices),
    }
    if args.noiseless:
        if args.lambdas is not None or args.lambda_default:
            raise CliError("--noiseless cannot be combined with --lambda or --lambda-default")
        estimate = complete_noiseless(obs, args.pinv_rel_tol)
        doc.update(
            method="noiseless",
            r_hat=[numerical_rank(j, args.pinv_rel_tol) for j in obs.joints],
            lambda_used=None,
            degenerate=False,
        )
    else:
        report = complete_noisy(obs, _noisy_config(args, obs))
        estimate = report.estimate
        doc.update(method="noisy", **report.to_dict())
        if report.degenerate:
            print(f"warning: estimated rank {report.r_hat} has a zero mode; the estimate is the "
                  "zero tensor (lower the thresholds or sample more)", file=sys.stderr)
    estimate = estimate / scale
    doc["estimate_path"] = os.path.abspath(args.out_tensor)
    doc["count_scale"] = scale
    doc["relative_hs_loss"] = relative_hs_loss(estimate, truth) if truth is not None else None
    write_xt3(args.out_tensor, estimate)
    write_json(args.out_report, doc)
    return 0


def cmd_hosvd(args):
    _check_paths([args.tensor], [args.out, args.spectra])
    y = read_xt3(args.tensor)
    for t, (r, p) in enumerate(zip(args.ranks, y.shape), start=1):
        if r > p:
            raise CliError(f"rank r{t}={r} exceeds dimension p{t}={p}")
    tucker = hosvd(y, args.ranks)
    write_xt3(args.out, tucker.reconstruct())
    if args.spectra:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "index", "singular_value"])
        for t, s in enumerate(mode_spectra(y), start=1):
            for i, v in enumerate(s, start=1):
                w.writerow([t, i, repr(float(v))])
        write_text(args.spectra, buf.getvalue())
    return 0


# Grid files ---------------------------------------------------------------

_CELL_KEYS = {"generator", "sampling", "noise", "lambdas", "lambda_scale",
              "singularity_rel_tol", "method"}


def _set_dotted(doc, key, value):
    node = doc
    *head, last = key.split(".")
    for part in head:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValueError(f"cannot set {key!r}: {part!r} is not an object")
    node[last] = value


def _expand_grid(doc):
    """List of cell dicts from ``{"cells": [...]}`` or ``{"base": {...}, "vary": {...}}``."""
    if not isinstance(doc, dict):
        raise ValueError("grid must be a JSON object")
    cells = list(doc.get("cells", []))
    if "vary" in doc or "base" in doc:
        base = doc.get("base", {})
        vary = doc.get("vary", {})
        if not isinstance(vary, dict) or not all(isinstance(v, list) and v for v in vary.values()):
            raise ValueError("'vary' must map dotted keys to non-empty lists")
        for combo in itertools.product(*vary.values()):
            cell = json.loads(json.dumps(base))
            for key, value in zip(vary, combo):
                _set_dotted(cell, key, value)
            cells.append(cell)
    if not cells:
        raise ValueError("grid holds no cells (give 'cells' or 'base'/'vary')")
    return cells


def _cell_from_dict(d):
    if not isinstance(d, dict):
        raise ValueError("cell must be a JSON object")
    unknown = set(d) - _CELL_KEYS
    if unknown:
        raise ValueError(f"unknown keys {sorted(unknown)}")
    gen = dict(d.get("generator", {}))
    gen.pop("seed", None)  # replicate seeds come from the runner
    samp = d.get("sampling", {"m": 10})
    noise = dict(d.get("noise", {}))
    noise.pop("seed", None)
    lambdas = d.get("lambdas")
    try:
        return ExperimentCell(
            generator=GeneratorSpec(**gen),
            sampling=SamplingPolicy(**samp),
            noise=NoiseSpec(**noise),
            lambdas=tuple(lambdas) if lambdas is not None else None,
            lambda_scale=d.get("lambda_scale", DEFAULT_LAMBDA_SCALE),
            singularity_rel_tol=d.get("singularity_rel_tol", DEFAULT_SINGULARITY_REL_TOL),
            method=d.get("method", "noisy"),
        )
    except TypeError as exc:
        raise ValueError(str(exc)) from exc


def load_grid(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}: not valid JSON ({exc})") from exc
    try:
        raw = _expand_grid(doc)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from exc
    cells, problems = [], []
    for c, d in enumerate(raw):
        try:
            cells.append(_cell_from_dict(d))
        except ValueError as exc:
            problems.append(f"cell {c}: {exc}")
    if problems:
        raise CliError(f"{path}: invalid grid\n  " + "\n  ".join(problems))
    return cells


def cmd_simulate(args):
    _check_paths([args.grid], [args.out])
    if args.replicates < 1:
        raise CliError("--replicates must be >= 1")
    cells = load_grid(args.grid)
    rows = run_experiment(cells, replicates=args.replicates, seed=args.seed, n_jobs=args.jobs)
    write_text(args.out, rows_to_csv(rows, timing=args.timing))
    failed = [r for r in rows if r.error]
    for r in failed[:10]:
        print(f"cell {r.cell} replicate {r.replicate}: {r.error}", file=sys.stderr)
    if failed:
        print(f"{len(failed)} of {len(rows)} replicates failed; see the error column", file=sys.stderr)
        return 1
    return 0


def cmd_compare(args):
    _check_paths([args.obs, args.full], [args.out])
    obs = read_observations(args.obs)
    full = read_xt3(args.full)
    if full.shape != obs.dims:
        raise CliError(f"full tensor has dims {full.shape}, observations have {obs.dims}")
    result = compare_with_hosvd(obs, full, _noisy_config(args, obs))
    row = {
        "sampling_ratio": result["sampling_ratio"],
        "r_hat1": result["r_hat"][0], "r_hat2": result["r_hat"][1], "r_hat3": result["r_hat"][2],
        "hs_ratio": result["hs_ratio"],
        "alignment1": result["alignment"][0],
        "alignment2": result["alignment"][1],
        "alignment3": result["alignment"][2],
    }
    if args.out.endswith(".csv"):
        cols = list(row)
        vals = [repr(v) if isinstance(v, float) else str(v) for v in row.values()]
        write_text(args.out, ",".join(cols) + "\n" + ",".join(vals) + "\n")
    else:
        write_json(args.out, row)
    print(" ".join(f"{k}={v!r}" for k, v in row.items()))
    return 0


def _describe(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == XT3_MAGIC:
        x = read_xt3(path)
        return {"type": "xt3", "dims": list(x.shape), "hs_norm": float(np.linalg.norm(x.ravel())),
                "min": float(x.min()), "max": float(x.max())}
    if magic == XCO_MAGIC:
        obs = read_observations(path)
        idx = obs.indices
        kind = "observations"
    else:
        idx = read_indices(path)
        kind = "indices"
    doc = {"type": kind, "dims": list(idx.dims), "m": list(idx.m), "g": list(idx.g),
           "measurements": measurement_count(idx), "sampling_ratio": sampling_ratio(idx),
           "seed": idx.seed}
    return doc


def cmd_info(args):
    _check_paths(args.paths)
    for path in args.paths:
        doc = _describe(path)
        print(json.dumps({"path": path, **doc}))
    return 0


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="crosstensor",
        description="Cross measurements and completion of order-3 low-rank tensors.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("sample", formatter_class=fmt,
                       help="draw a Cross pattern and extract observations from an XT3 tensor")
    p.add_argument("tensor", help="input XT3 tensor")
    size = p.add_mutually_exclusive_group(required=True)
    size.add_argument("--m", type=_int_triple, help="body size per mode, e.g. 10 or 10,12,8")
    size.add_argument("--rho", type=float, help="sampling fraction: m_t = round(rho*p_t), g_t = round(m1*m2*m3/p_t)")
    p.add_argument("--g", type=_int_triple, help="arms per mode (defaults to m)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-indices", required=True, help="output indices JSON (1-based positions)")
    p.add_argument("--out-obs", help="output observations file")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("complete", formatter_class=fmt,
                       help="recover a tensor from an observations file")
    p.add_argument("obs", help="input observations file")
    p.add_argument("--noiseless", action="store_true",
                   help="pseudo-inverse estimator without rank selection")
    _add_noisy_flags(p)
    p.add_argument("--truth", help="ground-truth XT3 tensor; adds relative_hs_loss to the report")
    p.add_argument("--count-scale", type=float, default=1.0,
                   help="divide the estimate by this (H for Poisson counts, N for multinomial)")
    p.add_argument("--out-tensor", required=True, help="output XT3 estimate")
    p.add_argument("--out-report", required=True, help="output JSON report")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("hosvd", formatter_class=fmt, help="truncated HOSVD of an XT3 tensor")
    p.add_argument("tensor")
    p.add_argument("--ranks", type=_int_triple, required=True, help="r1,r2,r3")
    p.add_argument("--out", required=True, help="output XT3 reconstruction")
    p.add_argument("--spectra", help="output CSV of the singular values of each unfolding")
    p.set_defaults(func=cmd_hosvd)

    p = sub.add_parser("simulate", formatter_class=fmt, help="run a simulation grid to CSV")
    p.add_argument("grid", help="grid JSON: {'cells': [...]} and/or {'base': {...}, 'vary': {...}}")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes (-1 for all cores)")
    p.add_argument("--timing", action="store_true", help="include the wall_time_seconds column")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", formatter_class=fmt,
                       help="compare the Cross estimate with the HOSVD of the full tensor")
    p.add_argument("obs", help="observations file")
    p.add_argument("full", help="fully observed XT3 tensor")
    _add_noisy_flags(p)
    p.add_argument("--out", required=True, help="output metrics (.csv for a CSV row, JSON otherwise)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("info", help="describe XT3, indices or observations files")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, FormatError, ValueError, np.linalg.LinAlgError, OSError) as exc:
        print(f"crosstensor {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
