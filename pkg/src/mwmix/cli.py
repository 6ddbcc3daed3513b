"""Command-line entry point: ``mwmix fit|eval|simulate|segment``.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

import jsonschema
import numpy as np

from . import __version__
from .distributions import MixingDistribution, MixtureError, get_family
from .imgseg import (
    CHANNELS,
    ImageFormatError,
    read_ppm,
    segment,
    table_to_csv,
    transformed_histogram,
    write_pgm,
    write_ppm,
)
from .metrics import ari, l2_mixture_distance, overlap_report
from .mwde import MwdeConfig, fit_mwde
from .pmle import PmleConfig, fit_pmle
from .simlab import (
    RESULT_COLUMNS,
    ConfigError,
    ExperimentConfig,
    aggregate,
    homogeneous_study,
    rows_to_csv,
    run_experiment,
    scenario_from_dict,
    summary_to_json,
)

INTERFACE_VERSION = "1.0"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("mwmix")

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["two_component", "three_component", "outliers", "contaminated",
                          "misspecified_1", "misspecified_2", "homogeneous"]},
        "family": {"enum": ["normal", "logistic", "gumbel"]},
        "p": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "a": {"type": "number", "exclusiveMinimum": 0},
        "b": {"type": "number"},
        "o12": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "alpha": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "row": {"enum": ["I", "II", "III", "IV", "V", "VI", "VII", "VIII"]},
        "name": {"type": "string"},
    },
    "additionalProperties": False,
}

EXPERIMENT_SCHEMA = {
    "type": "object",
    "required": ["scenario", "sample_sizes"],
    "properties": {
        "scenario": SCENARIO_SCHEMA,
        "sample_sizes": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
        "replications": {"type": "integer", "minimum": 1},
        "estimators": {"type": "array", "items": {"enum": ["mwde", "pmle"]}, "minItems": 1},
        "master_seed": {"type": "integer", "minimum": 0},
        "n_starts": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


def _single_column(raw: bytes, path) -> List[str]:
    rows = [r for r in csv.reader(io.StringIO(raw.decode("utf-8"))) if r and r[0].strip()]
    if any(len(r) != 1 for r in rows):
        raise DataError(f"{path}: expected a single column")
    return [r[0].strip() for r in rows]


def read_values(path) -> np.ndarray:
    """Single-column CSV of reals with an optional header line."""
    cells = _single_column(_read_bytes(path), path)
    if cells:
        try:
            float(cells[0])
        except ValueError:
            cells = cells[1:]
    try:
        x = np.array([float(c) for c in cells])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if x.size == 0:
        raise DataError(f"{path}: no data")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{path}: non-finite values")
    return x


def read_labels(path) -> List[str]:
    cells = _single_column(_read_bytes(path), path)
    if cells and cells[0].lower() in ("label", "labels", "cluster"):
        cells = cells[1:]
    return cells


def read_mixing(path):
    try:
        return MixingDistribution.from_json(_read_bytes(path).decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})") from None


def read_json(path, schema=None):
    try:
        d = json.loads(_read_bytes(path).decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})") from None
    if schema is not None:
        try:
            jsonschema.validate(d, schema)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise DataError(f"{path}: {where}: {exc.message}") from None
    return d


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _emit(text: str, out: Optional[str]):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


class Manifest:
    """Command line, input hash, seed, version and timestamps for one run."""

    def __init__(self, argv: List[str], seed: Optional[int]):
        self.argv = list(argv)
        self.seed = seed
        self.started = datetime.now(timezone.utc).isoformat()
        self._hash = hashlib.sha256()
        # every byte that affects output: arguments except --threads and --out
        skip = False
        for a in argv:
            if skip:
                skip = False
                continue
            if a in ("--threads", "--out"):
                skip = True
                continue
            if a.startswith(("--threads=", "--out=")):
                continue
            self._hash.update(a.encode() + b"\0")
        self._hash.update(INTERFACE_VERSION.encode())

    def add_input(self, data: bytes):
        self._hash.update(hashlib.sha256(data).digest())

    @property
    def config_hash(self) -> str:
        return self._hash.hexdigest()[:16]

    def write(self, path: Optional[Path]):
        d = {
            "command_line": self.argv,
            "config_hash": self.config_hash,
            "master_seed": self.seed,
            "library_version": __version__,
            "interface_version": INTERFACE_VERSION,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
        }
        if path is None:
            sys.stderr.write(json.dumps(d, sort_keys=True) + "\n")
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(_dump(d))


def _manifest_path(out: Optional[str], is_dir: bool) -> Optional[Path]:
    if not out:
        return None
    return Path(out) / "run_manifest.json" if is_dir else Path(str(out) + ".manifest.json")


def _threads(value: Optional[int]) -> int:
    return value if value and value > 0 else (os.cpu_count() or 1)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_fit(args, argv) -> int:
    manifest = Manifest(argv, args.seed)
    raw = _read_bytes(args.input)
    manifest.add_input(raw)
    x = read_values(args.input)
    fam = get_family(args.family)
    if args.method == "mwde":
        cfg = MwdeConfig(n_starts=args.starts, seed=args.seed,
                         max_iter=args.max_iter or 500, grad_tol=args.grad_tol)
        report = fit_mwde(x, fam, args.k, cfg)
    else:
        a_n = None if args.a_n == "auto" else float(args.a_n)
        cfg = PmleConfig(n_starts=args.starts, seed=args.seed, max_iter=args.max_iter or 2000,
                         a_n=a_n, scale_stat=args.scale_stat)
        report = fit_pmle(x, fam, args.k, cfg)
    d = report.to_dict()
    d["n"] = int(x.size)
    _emit(_dump(d), args.out)
    manifest.write(_manifest_path(args.out, False))
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    manifest = Manifest(argv, None)
    rows = []
    if args.metric == "ari":
        if not (args.labels_a and args.labels_b):
            raise UsageError("eval --metric ari needs --labels-a and --labels-b")
        for p in (args.labels_a, args.labels_b):
            manifest.add_input(_read_bytes(p))
        a, b = read_labels(args.labels_a), read_labels(args.labels_b)
        try:
            rows.append(("ari", ari(a, b)))
        except ValueError as exc:
            raise DataError(str(exc)) from None
    else:
        if not args.g1:
            raise UsageError(f"eval --metric {args.metric} needs --g1")
        manifest.add_input(_read_bytes(args.g1))
        g1, fam = read_mixing(args.g1)
        if args.family:
            fam = get_family(args.family)
        if args.metric == "l2":
            if not args.g2:
                raise UsageError("eval --metric l2 needs --g2")
            manifest.add_input(_read_bytes(args.g2))
            g2, fam2 = read_mixing(args.g2)
            if fam2 != fam and not args.family:
                raise DataError("g1 and g2 use different families")
            rows.append(("l2", l2_mixture_distance(g1, g2, fam)))
        else:
            o, mean_omega = overlap_report(g1, fam, args.resolution)
            for i in range(g1.K):
                for j in range(i + 1, g1.K):
                    rows.append((f"overlap_{i + 1}_{j + 1}", float(o[i, j])))
            rows.append(("mean_omega", mean_omega))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value", "config_hash"])
    for name, value in rows:
        w.writerow([name, repr(float(value)), manifest.config_hash])
    _emit(buf.getvalue(), args.out)
    manifest.write(_manifest_path(args.out, False))
    return EXIT_OK


def cmd_simulate(args, argv) -> int:
    raw = _read_bytes(args.config)
    d = read_json(args.config, EXPERIMENT_SCHEMA)
    manifest = Manifest(argv, d.get("master_seed", 0))
    manifest.add_input(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if d["scenario"]["kind"] == "homogeneous":
        scen = scenario_from_dict(d["scenario"])
        rows, slopes = homogeneous_study(scen.family, d["sample_sizes"], d.get("replications", 100),
                                         d.get("master_seed", 0))
        (out / "homogeneous.csv").write_text(
            rows_to_csv(rows, ["family", "estimator", "n", "mse_mu", "mse_sigma"]))
        summary = {"slopes": {f"{e}_{p}": v for (e, p), v in sorted(slopes.items())}}
        (out / "summary.json").write_text(_dump(summary))
    else:
        cfg = ExperimentConfig.from_dict(d)
        rows = run_experiment(cfg, threads=_threads(args.threads))
        (out / "results.csv").write_text(rows_to_csv(rows, RESULT_COLUMNS))
        (out / "summary.json").write_text(summary_to_json(aggregate(rows)) + "\n")
        (out / "experiment.json").write_text(_dump(cfg.to_dict()))
        if args.timings:
            (out / "timings.csv").write_text(
                rows_to_csv(rows, ["scenario", "estimator", "n", "replication", "wall_ms"]))
    manifest.write(out / "run_manifest.json")
    return EXIT_OK


def _channel_plane(values: np.ndarray, c: int) -> np.ndarray:
    img = np.zeros(values.shape + (3,))
    img[..., c] = values
    return img


def cmd_segment(args, argv) -> int:
    manifest = Manifest(argv, args.seed)
    manifest.add_input(_read_bytes(args.input))
    image = read_ppm(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    methods = ["pmle", "mwde"] if args.method == "both" else [args.method]
    table = []
    workers = min(3, _threads(args.threads))
    for method in methods:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                res = segment(image, method, n_starts=args.starts, seed=args.seed, executor=pool)
        else:
            res = segment(image, method, n_starts=args.starts, seed=args.seed)
        for c, fit in enumerate(res.channels):
            write_pgm(out / f"labels_{method}_{fit.channel}.pgm", np.where(fit.labels == 1, 0, 255))
            write_ppm(out / f"recolored_{method}_{fit.channel}.ppm", _channel_plane(fit.recolored, c))
            if fit.diagnostic:
                log.warning("%s/%s: %s", method, fit.channel, fit.diagnostic)
        write_ppm(out / f"combined_{method}.ppm", res.combined)
        table.extend(res.table())
    for c, name in enumerate(CHANNELS):
        lo, hi, counts = transformed_histogram(image[..., c], args.bins)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count"])
        for a, b, n in zip(lo, hi, counts):
            w.writerow([repr(float(a)), repr(float(b)), int(n)])
        (out / f"histogram_{name}.csv").write_text(buf.getvalue())
    (out / "parameters.json").write_text(_dump(table))
    (out / "parameters.csv").write_text(table_to_csv(table))
    manifest.write(out / "run_manifest.json")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mwmix", description="Minimum-Wasserstein and penalized-likelihood mixture fitting.")
    parser.add_argument("--version", action="version",
                        version=f"mwmix {__version__} (interface {INTERFACE_VERSION})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a K-component mixture to a single-column CSV")
    p.add_argument("--method", choices=["mwde", "pmle"], required=True)
    p.add_argument("--family", choices=["normal", "logistic", "gumbel"], default="normal")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--grad-tol", type=float, default=1e-6)
    p.add_argument("--a-n", default="auto", help="penalty strength for pmle; 'auto' is N^-1/2")
    p.add_argument("--scale-stat", choices=["variance", "iqr"], default="variance")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="L2 distance, ARI or overlap")
    p.add_argument("--metric", choices=["l2", "ari", "overlap"], required=True)
    p.add_argument("--g1")
    p.add_argument("--g2")
    p.add_argument("--family", choices=["normal", "logistic", "gumbel"])
    p.add_argument("--labels-a")
    p.add_argument("--labels-b")
    p.add_argument("--resolution", type=int, default=200_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="run a replicated simulation experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="results")
    p.add_argument("--threads", type=int)
    p.add_argument("--timings", action="store_true", help="also write per-fit wall times")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("segment", help="two-cluster per-channel segmentation of a P6 image")
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=["mwde", "pmle", "both"], default="both")
    p.add_argument("--out", required=True)
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_segment)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        return args.func(args, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigError, ImageFormatError, MixtureError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ArithmeticError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
