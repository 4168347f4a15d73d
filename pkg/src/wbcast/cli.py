"""Command-line entry point: ``wbcast simulate | epsilon | gathering | compare``.

Scenario files are JSON objects mirroring :class:`~wbcast.netsim.ScenarioConfig`::

    {
      "n": 64, "seed": 7, "f": 5,
      "protocol": "WBB_WITH_RECOVERY",      # WBB | BRACHA | WBB_WITH_RECOVERY
      "oracle": "slash",                    # slash | complete | forced | faulty
      "w_coef": 3.0, "v_coef": 4.0,         # |W| = 3 log2 n, |V| = 4 log2 n
      "slash": {"c": 256, "b": 16, "B": 64, "r": 65536, "seed": 0},
      "delay": {"base": 1, "jitter": 2, "loss": 0.01, "loss_delay": 10},
      "adversary": {"modes": ["EQUIVOCATING_SOURCE"], "delta": 0},
      "workload": {"mode": "closed", "instances_per_source": 3},
      "rounds": {"delta_seconds": 20, "d_log": 2, "gamma": 40, "th_max": 0.5},
      "timeout": null, "max_time": 100000, "guarantees": true
    }

Exit codes: 0 success, 2 invalid configuration, 3 consistency violation in a
scenario that claims guarantees.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import sys
from importlib import metadata
from pathlib import Path
from typing import Sequence

from . import analysis, netsim
from .errors import ConfigError, ParameterError

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 2, 3


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _csv_text(rows: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


class Outputs:
    """Collects output files, then writes them plus a manifest (or prints to stdout)."""

    def __init__(self, out: str | None, command: str, config: str | None = None,
                 seed: int | None = None):
        self.dir = Path(out) if out else None
        self.files: dict[str, str] = {}
        self.manifest = {"command": command, "config": config, "seed": seed,
                         "out": str(self.dir) if self.dir else None,
                         "version": _version(), "started": _now()}

    def add(self, name: str, text: str):
        self.files[name] = text

    def flush(self, primary: str):
        if self.dir is None:
            sys.stdout.write(self.files[primary])
            return
        self.dir.mkdir(parents=True, exist_ok=True)
        listing = {}
        for name, text in self.files.items():
            (self.dir / name).write_text(text)
            listing[name] = hashlib.sha256(text.encode()).hexdigest()
        self.manifest["files"] = listing
        self.manifest["finished"] = _now()
        (self.dir / "manifest.json").write_text(json.dumps(self.manifest, indent=2) + "\n")


def _load_config(path: str, seed: int | None) -> netsim.ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    if seed is not None:
        data["seed"] = seed
    return netsim.ScenarioConfig.from_dict(data)


def _parse_numbers(text: str, kind=float) -> list:
    """'40:300:20' (inclusive range) or '1,2,3'."""
    if ":" in text:
        parts = [kind(x) for x in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ConfigError(f"range {text!r} must be start:stop:step with step > 0")
        start, stop, step = parts
        out, x = [], start
        while x <= stop + 1e-12:
            out.append(kind(x))
            x += step
        return out
    return [kind(x) for x in text.split(",") if x.strip()]


# -- commands ----------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config, args.seed)
    result = netsim.run(cfg, trace=args.trace)
    metrics = result.metrics
    out = Outputs(args.out, "simulate", args.config, cfg.seed)
    out.add("metrics.csv", metrics.csv_text())
    summary = metrics.summary()
    out.add("summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.trace:
        out.add("trace.ndjson", result.trace_ndjson())
    out.flush("metrics.csv")
    print(f"{summary['instances']} instances, {summary['consistency_violations']} consistency "
          f"violations, {summary['liveness_failures']} liveness failures", file=sys.stderr)
    if cfg.guarantees and metrics.consistency_violations:
        return EXIT_VIOLATION
    return EXIT_OK


EPSILON_COLUMNS = ["n", "faulty", "expected_size", "d", "mu", "k", "epsilon"]


def cmd_epsilon(args) -> int:
    spec = {}
    if args.spec:
        try:
            spec = json.loads(Path(args.spec).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load sweep spec {args.spec}: {exc}") from None
    n = spec.get("n", args.n)
    sizes = spec.get("sizes") or _parse_numbers(args.sizes)
    kw = {"r": spec.get("r", args.r), "b": spec.get("b", args.b), "mu": spec.get("mu", args.mu)}
    if "f" in spec or args.f is not None:
        kw["f"] = spec.get("f", args.f)
    else:
        kw["t"] = spec.get("t", args.t)
    k = spec.get("k", args.k)
    kw["k"] = analysis.BALANCED if k in (None, analysis.BALANCED) else int(k)
    rows = analysis.epsilon_sweep(n, sizes, **kw)
    for row in rows:
        row["epsilon"] = repr(row["epsilon"])
    out = Outputs(args.out, "epsilon", args.spec)
    out.add("epsilon.csv", _csv_text(rows, EPSILON_COLUMNS))
    out.flush("epsilon.csv")
    return EXIT_OK


GATHERING_COLUMNS = ["n", "t", "s", "b", "r", "c", "q", "f", "k", "bound"]
SIM_COLUMNS = ["runs", "cap", "mean", "median", "censored_fraction", "fraction_at_least_bound"]


def cmd_gathering(args) -> int:
    rows = []
    for n in _parse_numbers(args.n, int):
        for t in _parse_numbers(args.t):
            q = analysis.GatheringQuery(n=n, b=args.b, r=args.r, c=args.c, t=t, s=args.s)
            bound = analysis.gathering_bound(q)
            row = {"n": n, "t": t, "s": args.s, "b": args.b, "r": args.r, "c": args.c,
                   "q": repr(q.selection_fraction), "f": q.compromised, "k": q.threshold,
                   "bound": repr(bound)}
            if args.simulate:
                sample = analysis.gathering_sim(q, args.runs, args.seed, args.cap)
                times = sample.times.astype(float)
                row.update({"runs": args.runs, "cap": args.cap,
                            "mean": repr(float(times.mean())),
                            "median": repr(float(sorted(times)[len(times) // 2])),
                            "censored_fraction": repr(sample.censored_fraction),
                            "fraction_at_least_bound": repr(sample.fraction_at_least(bound))})
            rows.append(row)
    columns = GATHERING_COLUMNS + (SIM_COLUMNS if args.simulate else [])
    out = Outputs(args.out, "gathering", seed=args.seed if args.simulate else None)
    out.add("gathering.csv", _csv_text(rows, columns))
    out.flush("gathering.csv")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfgs = [_load_config(path, args.seed) for path in args.configs]
    rows = netsim.compare(cfgs)
    out = Outputs(args.out, "compare", ",".join(args.configs), args.seed)
    out.add("compare.csv", _csv_text([{k: ("" if v is None else v) for k, v in r.items()}
                                      for r in rows], netsim.COMPARE_COLUMNS))
    out.flush("compare.csv")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wbcast", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario file")
    p.add_argument("config")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out", help="output directory (default: CSV to stdout)")
    p.add_argument("--trace", action="store_true", help="also write trace.ndjson")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("epsilon", help="security parameter against witness-set size")
    p.add_argument("spec", nargs="?", help="optional JSON sweep spec overriding the flags")
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--t", type=float, default=0.1, help="faulty ratio (floored to a count)")
    p.add_argument("--f", type=int, help="faulty count (instead of --t)")
    p.add_argument("--sizes", default="40:300:20", help="start:stop:step or comma list")
    p.add_argument("--mu", type=int, default=0)
    p.add_argument("--r", type=int, default=2**16)
    p.add_argument("--b", type=int, default=16)
    p.add_argument("--k", default=analysis.BALANCED)
    p.add_argument("--out")
    p.set_defaults(func=cmd_epsilon)

    p = sub.add_parser("gathering", help="passive-attack gathering-time bound and simulation")
    p.add_argument("--n", default="100")
    p.add_argument("--t", default="0.25")
    p.add_argument("--s", type=float, default=0.6)
    p.add_argument("--b", type=int, default=2)
    p.add_argument("--r", type=int, default=2**8)
    p.add_argument("--c", type=float, default=1.0, help="witness size coefficient (c log2 n)")
    p.add_argument("--simulate", action="store_true")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--cap", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gathering)

    p = sub.add_parser("compare", help="normalised comparison against a BRACHA scenario")
    p.add_argument("configs", nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
