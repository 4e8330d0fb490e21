"""Command-line interface: ``btsmodes {estimate,plotdata,bench,version}``.

Exit codes: 0 success, 2 input/output error (including empty input),
3 configuration error, 4 numerical failure (the message names the stage).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import fields
from pathlib import Path

import numpy as np

from .errors import StageError

EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4

log = logging.getLogger("btsmodes")


class InputError(Exception):
    """Unreadable, empty or unusable input data (exit code 2)."""


class ConfigError(Exception):
    """Invalid run or bench configuration (exit code 3)."""


# ---------------------------------------------------------------- file I/O

def write_atomic(path, text: str) -> Path:
    """Write ``text`` to ``path`` via a temporary file in the same directory and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def dump_csv(columns: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def read_table(path) -> dict[str, np.ndarray]:
    """Read a CSV written by this tool: numeric columns become float arrays."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        body = list(reader)
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in body]
        try:
            out[name] = np.array([float(v) if v != "" else math.nan for v in col])
        except ValueError:
            out[name] = np.array(col, dtype=object)
    return out


def _parse_float(s: str) -> float | None:
    try:
        return float(s)
    except ValueError:
        return None


def read_sample(path, column: str | None = None) -> np.ndarray:
    """Read one column of a UTF-8 CSV (header optional) as finite floats.

    ``column`` is a header name or a 0-based index; the first column is
    used when omitted. Non-finite and empty cells are dropped.
    """
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except (OSError, UnicodeDecodeError) as err:
        raise InputError(f"cannot read {path}: {err}") from err
    if not rows:
        raise InputError(f"{path} is empty")
    first = [c.strip() for c in rows[0]]
    has_header = all(_parse_float(c) is None for c in first if c)
    if column is None:
        idx = 0
    elif column.lstrip("-").isdigit():
        idx = int(column)
    elif has_header and column in first:
        idx = first.index(column)
    else:
        raise InputError(f"column {column!r} not found in {path}")
    values = []
    for r in rows[1:] if has_header else rows:
        if idx >= len(r):
            continue
        v = _parse_float(r[idx].strip())
        if v is not None and math.isfinite(v):
            values.append(v)
    x = np.array(values, dtype=float)
    if x.size < 2:
        raise InputError(f"{path}: need at least two finite values, found {x.size}")
    if np.ptp(x) == 0:
        raise InputError(f"{path}: all values are identical")
    return x


# ---------------------------------------------------------------- estimation

def run_config(args) -> dict:
    if args.degree < 3 or args.dim < args.degree:
        raise ConfigError(f"need dim >= degree >= 3 (got dim={args.dim}, degree={args.degree})")
    if args.seed < 0:
        raise ConfigError("seed must be non-negative")
    return {
        "input": str(args.input),
        "column": args.column,
        "seed": args.seed,
        "dim": args.dim,
        "degree": args.degree,
        "prior": args.prior,
        "discretised": bool(args.discretised),
        "stages": args.stages,
    }


def estimate(sample, run: dict):
    """Run the pipeline for a run configuration (see :func:`run_config`)."""
    from .pipeline.report import run_bts

    return run_bts(sample, prior_variant=run["prior"], stages=run["stages"],
                   discretised=run["discretised"], seed=run["seed"],
                   dimension=run["dim"], degree=run["degree"])


def report_json(report, run: dict) -> str:
    out = report.to_dict()
    out["run"] = run
    out["seed"] = run["seed"]
    return dump_json(out)


def plot_tables(report, quantiles=(0.05, 0.5, 0.95), tree_points: int = 128) -> dict[str, str]:
    """CSV text of every figure table the completed stages support."""
    from .errors import DegenerateFlat
    from .pipeline.analyze import sfpca_density
    from .splines import spline_modes

    tables = {}
    ps = report.exploration
    tables["scatter.csv"] = dump_csv(
        ["h", "alpha", "k_spline", "k_kde"],
        zip(ps.h.tolist(), ps.alpha.tolist(), ps.mode_counts.tolist(), ps.kde_mode_counts.tolist()))
    sf = report.sfpca
    if sf is None:
        return tables
    tables["scree.csv"] = dump_csv(["pc", "variance"],
                                   ((i + 1, float(v)) for i, v in enumerate(sf.eigenvalues)))
    lo, hi = sf.support
    x = sf.basis.interval.grid()
    rows = []
    for d in (lo, 0.0, hi):
        dens = sfpca_density(sf, d, check=False).pdf(x)
        rows.extend((float(d), float(t), float(v)) for t, v in zip(x, dens))
    tables["variation.csv"] = dump_csv(["delta", "x", "density"], rows)

    tree = []
    for d in np.linspace(lo, hi, tree_points):
        try:
            ms = spline_modes(sfpca_density(sf, d, check=False))
        except DegenerateFlat:
            continue
        pts = sorted([(float(m), "mode") for m in ms.modes] + [(float(a), "antimode") for a in ms.antimodes])
        tree.extend((float(d), loc, kind) for loc, kind in pts)
    sel = report.selection
    if sel is not None:
        nodes, post = sel.posterior.density("post")
        _, prior = sel.posterior.density("prior")
        order = np.argsort(nodes, kind="stable")
        tables["prior_posterior.csv"] = dump_csv(
            ["delta", "prior", "posterior"], zip(nodes[order].tolist(), prior[order].tolist(), post[order].tolist()))
        xs, ys = nodes[order], post[order]
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs))])
        cdf /= cdf[-1]
        for q in quantiles:
            tree.append((float(np.interp(q, cdf, xs)), math.nan, "quantile"))
    tables["modetree.csv"] = dump_csv(["delta", "location", "type"], tree)
    return tables


def _write_plots(report, out_dir: Path) -> list[Path]:
    return [write_atomic(out_dir / name, text) for name, text in plot_tables(report).items()]


def cmd_estimate(args) -> int:
    run = run_config(args)
    x = read_sample(args.input, args.column)
    report = estimate(x, run)
    out_dir = Path(args.out_dir)
    path = write_atomic(out_dir / "report.json", report_json(report, run))
    written = [path]
    if args.plots:
        written += _write_plots(report, out_dir)
    for p in written:
        print(p)
    return 0


def cmd_plotdata(args) -> int:
    run = run_config(args)
    x = read_sample(args.input, args.column)
    report = estimate(x, run)
    for p in _write_plots(report, Path(args.out_dir)):
        print(p)
    return 0


# ---------------------------------------------------------------- benchmark

def _split(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def read_bench_config(path):
    """Parse the ``[bench]`` section of a key-value file into a :class:`BenchConfig`."""
    from .bench import BenchConfig

    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as err:
        raise InputError(f"cannot read bench config {path}: {err}") from err
    except configparser.Error as err:
        raise ConfigError(f"malformed bench config {path}: {err}") from err
    if not parser.has_section("bench"):
        raise ConfigError(f"{path}: missing [bench] section")
    known = {f.name: f for f in fields(BenchConfig)}
    kw = {}
    for key, value in parser.items("bench"):
        if key not in known:
            raise ConfigError(f"{path}: unknown key {key!r}")
        try:
            if key in ("testbeds", "methods"):
                kw[key] = _split(value)
            elif key == "sizes":
                kw[key] = tuple(int(v) for v in _split(value))
            elif key == "alpha_level":
                kw[key] = float(value)
            else:
                kw[key] = int(value)
        except ValueError as err:
            raise ConfigError(f"{path}: bad value for {key}: {value!r}") from err
    try:
        return BenchConfig(**kw)
    except (ValueError, KeyError) as err:
        raise ConfigError(f"{path}: {err}") from err


def cmd_bench(args) -> int:
    from .bench import BenchConfig, run_benchmark

    if args.bench_config:
        config = read_bench_config(args.bench_config)
    else:
        config = BenchConfig()
    if args.seed_given:
        config.seed = args.seed
    result = run_benchmark(config)
    out_dir = Path(args.out_dir)
    for p in (write_atomic(out_dir / "bench.csv", result.to_csv()),
              write_atomic(out_dir / "bench_summary.json", result.to_json() + "\n")):
        print(p)
    return 0


def cmd_version(args) -> int:
    from . import __version__

    print(__version__)
    return 0


# ---------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    from .pipeline.report import STAGES
    from .pipeline.select import PRIOR_VARIANTS

    parser = _Parser(prog="btsmodes", description="Estimate the number of modes of a univariate sample (BTS pipeline).")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_flags(p):
        p.add_argument("--input", required=True, help="CSV file with the sample")
        p.add_argument("--column", help="column name or 0-based index (default: first)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--dim", type=int, default=22, help="spline basis dimension")
        p.add_argument("--degree", type=int, default=3, help="spline degree")
        p.add_argument("--prior", choices=PRIOR_VARIANTS, default="uniform")
        p.add_argument("--discretised", action="store_true", help="data are rounded to a grid")
        p.add_argument("--stages", choices=STAGES, default="test", help="last stage to run")
        p.add_argument("--out-dir", default=".")

    p = sub.add_parser("estimate", help="run the pipeline and write report.json")
    run_flags(p)
    p.add_argument("--plots", action="store_true", help="also write the plot-data CSVs")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("plotdata", help="write the figure CSVs for a run")
    run_flags(p)
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("bench", help="run the simulation benchmark")
    p.add_argument("--bench-config", help="key-value file with a [bench] section")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("version", help="print the package version")
    p.set_defaults(func=cmd_version)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "bench":
        args.seed_given = args.seed is not None
    try:
        return args.func(args)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as err:
        print(f"numerical failure in the {err.stage} stage: {err.cause}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
