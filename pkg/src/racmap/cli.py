"""Command-line interface.

Commands: ``generate`` (synthetic pixel datasets), ``stats`` (descriptive
summaries), ``subsample`` (case-control retention), ``fit`` (the three
estimators on pixel or region partitions, with CIs and heatmaps) and
``simulate`` (scenario runner).  Every command echoes its full
configuration and a version string into a manifest JSON, and identical
seeds reproduce byte-identical outputs.

Exit codes: 0 success, 2 usage errors, 3 data errors, 4 convergence
failures.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

import numpy as np

from . import __version__
from .errors import ConvergenceError, InvalidInputError, RacmapError, \
    SingularFitError
from .estimators_pixel import (fit_cml_pixel, fit_re_pixel, kernel_smooth,
                               naive_pixel, pointwise_ci, rescale_pixel_cml)
from .estimators_region import (fit_cml_region, fit_re_region, naive_region,
                                region_ci, rescale_cml)
from .heatmap import grid_to_csv, grid_to_pgm
from .partitioning import RegionLayout, aggregate, expert_partition, \
    pixel_partition
from .shoe_data import (StandardShoe, binarize_counts, descriptive_stats,
                        load_shoes, shoes_to_csv, shoes_to_json)
from .simulation import (Scenario, draw_wear_factors, run_scenario,
                         scenario_registry, synthetic_contact_mask)
from .splines import quantile_knots
from .subsampling import SCHEMES, subsample


def _version_string() -> str:
    base = f"racmap-{__version__}"
    try:
        here = os.path.dirname(os.path.abspath(__file__))
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"], cwd=here,
            capture_output=True, text=True, timeout=5)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{base}+g{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


def _outdir(args) -> str:
    out = args.out or os.environ.get("RACMAP_OUTDIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(out, command, args) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    doc = {"tool": _version_string(), "command": command, "config": cfg}
    with open(os.path.join(out, f"{command}_manifest.json"), "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_all_shoes(args):
    shoes = []
    grid = (args.grid_height, args.grid_width)
    for path in args.input:
        shoes.extend(load_shoes(path, grid=grid))
    if not shoes:
        raise InvalidInputError("no shoes found in the input files")
    return shoes


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def _default_surface(grid):
    """A smooth baseline intensity: elevated ball and heel areas."""
    height, width = grid
    y = (np.arange(height)[:, None] + 0.5) / height
    x = (np.arange(width)[None, :] + 0.5) / width
    bumps = (0.9 * np.exp(-((y - 0.28)**2 / 0.018 + (x - 0.5)**2 / 0.045))
             + 0.7 * np.exp(-((y - 0.85)**2 / 0.009 + (x - 0.5)**2 / 0.03)))
    return 1.0 + bumps


def _parse_a_law(text):
    name, _, param = text.partition(":")
    if name == "constant":
        return {"kind": "constant"}
    if name == "gamma":
        var = float(param or 0.3)
        return {"kind": "gamma", "shape": 1.0 / var, "rate": 1.0 / var}
    if name == "uniform":
        return {"kind": "uniform", "lo": 0.0, "hi": 2.0}
    if name == "bernoulli":
        return {"kind": "shifted_bernoulli"}
    raise InvalidInputError(f"unknown wear law {text!r}")


def cmd_generate(args) -> int:
    out = _outdir(args)
    grid = (args.grid_height, args.grid_width)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    lam = _default_surface(grid)
    masks = []
    for _ in range(args.shoes):
        masks.append(synthetic_contact_mask(grid, args.coverage, rng))
    exposure = np.mean([float((lam * m).sum()) for m in masks])
    lam *= args.avg_racs / exposure
    a = draw_wear_factors(_parse_a_law(args.a_law), args.shoes, rng)
    shoes = []
    for i, mask in enumerate(masks):
        counts = rng.poisson(lam * a[i] * mask)
        shoes.append(StandardShoe(shoe_id=f"shoe_{i:04d}", S=mask, n=counts))
    if args.format == "json":
        shoes_to_json(shoes, os.path.join(out, "shoes.json"))
    else:
        shoes_to_csv(shoes, os.path.join(out, "shoes.csv"))
    grid_to_csv(lam, os.path.join(out, "true_lambda.csv"))
    _write_manifest(out, "generate", args)
    print(f"wrote {args.shoes} shoes "
          f"({sum(s.total_racs for s in shoes)} RACs) to {out}")
    return 0


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------

def cmd_stats(args) -> int:
    out = _outdir(args)
    shoes = _load_all_shoes(args)
    report = descriptive_stats(shoes)
    with open(os.path.join(out, "stats.json"), "w") as fh:
        fh.write(report.to_json() + "\n")
    with open(os.path.join(out, "stats_shoes.csv"), "w") as fh:
        fh.write(report.shoe_table_csv())
    grid_to_csv(report.cumulative_contact,
                os.path.join(out, "cumulative_contact.csv"))
    grid_to_pgm(report.cumulative_contact,
                os.path.join(out, "cumulative_contact.pgm"))
    _write_manifest(out, "stats", args)
    rho = "n/a" if report.spearman is None else f"{report.spearman:.4f}"
    print(f"{len(shoes)} shoes; Spearman(contact, racs) = {rho}")
    return 0


# ---------------------------------------------------------------------------
# subsample
# ---------------------------------------------------------------------------

def cmd_subsample(args) -> int:
    out = _outdir(args)
    shoes = _load_all_shoes(args)
    shoes = [binarize_counts(s)[0] for s in shoes]
    records, meta = subsample(shoes, args.scheme, args.controls, args.seed)
    width = shoes[0].grid_width
    import csv as _csv
    with open(os.path.join(out, "retained.csv"), "w", newline="") as fh:
        w = _csv.writer(fh, lineterminator="\n")
        w.writerow(["shoe_id", "x", "y", "S", "n"])
        for rec in records:
            for cid, n in zip(rec.cell_index, rec.counts):
                w.writerow([rec.shoe_id, int(cid % width), int(cid // width),
                            1, int(n)])
    with open(os.path.join(out, "subsample_meta.json"), "w") as fh:
        fh.write(meta.to_json() + "\n")
    _write_manifest(out, "subsample", args)
    kept = sum(r.counts.size for r in records)
    print(f"retained {kept} pixels across {len(records)} shoes ({args.scheme})")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _pixel_fits(args, shoes, out):
    grid = (shoes[0].grid_height, shoes[0].grid_width)
    binarized = []
    n_mod = 0
    for s in shoes:
        b, k = binarize_counts(s)
        binarized.append(b)
        n_mod += k
    methods = ["naive", "re", "cml"] if args.method == "all" else [args.method]

    records, meta = subsample(binarized, args.subsample, args.controls,
                              args.seed)
    xs = np.concatenate([(r.cell_index % grid[1] + 0.5) / grid[1]
                         for r in records])
    ys = np.concatenate([(r.cell_index // grid[1] + 0.5) / grid[0]
                         for r in records])
    # knots from the full contact surface, independent of the subsample
    all_x, all_y = [], []
    for s in binarized:
        rr, cc = np.nonzero(s.S)
        all_x.append((cc + 0.5) / grid[1])
        all_y.append((rr + 0.5) / grid[0])
    knots_x = quantile_knots(np.concatenate(all_x), args.knots_x)
    knots_y = quantile_knots(np.concatenate(all_y), args.knots_y)
    del xs, ys

    results = {}
    naive_fit = None
    if "naive" in methods or "cml" in methods:
        full_records, _ = subsample(binarized, "full", 0, args.seed)
        naive_fit = naive_pixel(full_records, grid)
    if "naive" in methods:
        results["naive"] = naive_fit
        smoothed = kernel_smooth(naive_fit.lambda_hat, args.smooth_halfwidth)
        grid_to_csv(smoothed, os.path.join(out, "lambda_naive_smoothed.csv"))
        grid_to_pgm(smoothed, os.path.join(out, "lambda_naive_smoothed.pgm"))
    if "re" in methods:
        results["re"] = fit_re_pixel(records, grid, (knots_x, knots_y),
                                     subsample=meta)
    if "cml" in methods:
        cml = fit_cml_pixel(records, grid, (knots_x, knots_y), subsample=meta)
        results["cml"] = rescale_pixel_cml(cml, naive_fit)

    for name, fit in results.items():
        with open(os.path.join(out, f"fit_{name}.json"), "w") as fh:
            fh.write(fit.to_json() + "\n")
        grid_to_csv(fit.lambda_hat, os.path.join(out, f"lambda_{name}.csv"))
        grid_to_pgm(fit.lambda_hat, os.path.join(out, f"lambda_{name}.pgm"))
        if fit.spline is not None or name == "naive":
            pts = [((c + 0.5) / grid[1], (r + 0.5) / grid[0])
                   for r in range(0, grid[0], max(1, grid[0] // 40))
                   for c in range(0, grid[1], max(1, grid[1] // 30))]
            cis = pointwise_ci(fit, level=args.ci, at=pts)
            import csv as _csv
            with open(os.path.join(out, f"ci_{name}.csv"), "w",
                      newline="") as fh:
                w = _csv.writer(fh, lineterminator="\n")
                w.writerow(["x", "y", "lo", "hi"])
                for (x, y), (lo, hi) in zip(pts, cis):
                    w.writerow([repr(x), repr(y), repr(lo), repr(hi)])
    print(f"pixel fits written: {', '.join(sorted(results))} "
          f"({n_mod} counts capped at 1)")
    return 0


def _region_fits(args, shoes, out):
    grid = (shoes[0].grid_height, shoes[0].grid_width)
    if args.partition == "expert":
        part = expert_partition(grid=grid)
    else:
        layout = RegionLayout.from_json_file(args.partition)
        part = expert_partition(layout, grid=grid)
    records = [aggregate(s, part) for s in shoes]
    methods = ["naive", "re", "cml"] if args.method == "all" else [args.method]

    fits = {}
    naive_fit = naive_region(records)
    if "naive" in methods:
        naive_fit.cis = region_ci(naive_fit, args.ci)
        fits["naive"] = naive_fit
    if "re" in methods:
        re_fit = fit_re_region(records, prior="gamma")
        re_fit.cis = region_ci(re_fit, args.ci)
        fits["re"] = re_fit
    if "cml" in methods:
        cml = rescale_cml(fit_cml_region(records), naive_fit)
        cml.cis = region_ci(cml, args.ci)
        fits["cml"] = cml

    for name, fit in fits.items():
        with open(os.path.join(out, f"fit_region_{name}.json"), "w") as fh:
            fh.write(fit.to_json() + "\n")
    import csv as _csv
    with open(os.path.join(out, "region_comparison.csv"), "w",
              newline="") as fh:
        w = _csv.writer(fh, lineterminator="\n")
        header = ["cell"]
        for name in fits:
            header += [f"{name}_lambda", f"{name}_lo", f"{name}_hi"]
        w.writerow(header)
        for j in range(part.n_cells):
            row = [j]
            for name, fit in fits.items():
                lam = fit.lambda_hat[j]
                lo, hi = fit.cis[j]
                row += [repr(float(lam)), repr(float(lo)), repr(float(hi))]
            w.writerow(row)
    print(f"region fits written: {', '.join(sorted(fits))} "
          f"({part.n_cells} cells)")
    return 0


def cmd_fit(args) -> int:
    out = _outdir(args)
    shoes = _load_all_shoes(args)
    _write_manifest(out, "fit", args)
    if args.partition == "pixel":
        return _pixel_fits(args, shoes, out)
    return _region_fits(args, shoes, out)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    out = _outdir(args)
    registry = scenario_registry()
    if args.scenario in registry:
        sc = registry[args.scenario]
    elif os.path.exists(args.scenario):
        sc = Scenario.from_json_file(args.scenario)
    else:
        raise InvalidInputError(
            f"unknown scenario {args.scenario!r}; registry ids: "
            f"{', '.join(sorted(registry))}")
    if args.seed is not None:
        sc = Scenario.from_dict({**sc.to_dict(), "seed": args.seed})
    reps = args.reps or (sc.full_replications if args.full else
                         sc.replications)
    table = run_scenario(sc, replications=reps)
    table.to_csv(os.path.join(out, f"{sc.scenario_id}_table.csv"))
    table.summary_to_csv(os.path.join(out, f"{sc.scenario_id}_summary.csv"))
    with open(os.path.join(out, f"{sc.scenario_id}_scenario.json"), "w") as fh:
        fh.write(sc.to_json() + "\n")
    _write_manifest(out, "simulate", args)
    for s in table.summary:
        print(f"{s['method']:>28s}  mean MSE {s['mean_mse']:<12.6g} "
              f"mean |bias| {s['mean_abs_bias']:<10.6g} "
              f"({s['replications']} reps, {s['failures']} failures)")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="racmap",
        description="Baseline intensity estimation for shoe-sole RACs")
    p.add_argument("--version", action="version", version=_version_string())
    sub = p.add_subparsers(dest="command", required=True)

    def common_io(sp, needs_input=True):
        if needs_input:
            sp.add_argument("--input", nargs="+", required=True,
                            help="shoe CSV/JSON files")
            sp.add_argument("--grid-height", type=int, default=397)
            sp.add_argument("--grid-width", type=int, default=307)
        sp.add_argument("--out", default=None,
                        help="output directory (default $RACMAP_OUTDIR or .)")

    g = sub.add_parser("generate", help="write a synthetic pixel dataset")
    g.add_argument("--shoes", type=int, default=386)
    g.add_argument("--avg-racs", type=float, default=34.0)
    g.add_argument("--coverage", type=float, default=0.8)
    g.add_argument("--grid-height", type=int, default=100)
    g.add_argument("--grid-width", type=int, default=77)
    g.add_argument("--a-law", default="gamma:0.3",
                   help="constant | gamma:<var> | uniform | bernoulli")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    common_io(g, needs_input=False)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("stats", help="descriptive statistics of a dataset")
    common_io(s)
    s.set_defaults(func=cmd_stats)

    ss = sub.add_parser("subsample", help="case-control subsample a dataset")
    common_io(ss)
    ss.add_argument("--scheme", choices=SCHEMES, default="cc_within_prop_cases")
    ss.add_argument("--controls", type=int, default=20)
    ss.add_argument("--seed", type=int, default=0)
    ss.set_defaults(func=cmd_subsample)

    f = sub.add_parser("fit", help="fit intensity estimators")
    common_io(f)
    f.add_argument("--partition", default="pixel",
                   help="'pixel', 'expert', or a RegionLayout JSON path")
    f.add_argument("--method", choices=("naive", "re", "cml", "all"),
                   default="all")
    f.add_argument("--subsample", choices=SCHEMES, default="full")
    f.add_argument("--controls", type=int, default=20)
    f.add_argument("--knots-x", type=int, default=3)
    f.add_argument("--knots-y", type=int, default=5)
    f.add_argument("--ci", type=float, default=0.95)
    f.add_argument("--smooth-halfwidth", type=int, default=10)
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("simulate", help="run a simulation scenario")
    m.add_argument("--scenario", required=True,
                   help="registry id or scenario JSON path")
    m.add_argument("--reps", type=int, default=None)
    m.add_argument("--seed", type=int, default=None)
    m.add_argument("--full", action="store_true",
                   help="use the scenario's study-scale replication count")
    common_io(m, needs_input=False)
    m.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConvergenceError, SingularFitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (RacmapError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
