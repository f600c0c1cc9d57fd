"""Command line runner: `conformal-lab run <experiment>`, `conformal-lab suite fast|full`.

Every run writes, under --out:
  report.json   deterministic report (config echo, checks, data, levels, versions)
  checks.csv    one row per check
  config.json   the effective config; `run --config config.json` reproduces the run
  timing.json   wall time and start timestamp (kept out of report.json)
plus experiment artifacts (*.csv, *.obj, *.vtk).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from multiprocessing import get_context
from pathlib import Path

from . import __version__
from .experiments import EXPERIMENTS, Context, jsonable

log = logging.getLogger("conformal_lab")

SCHEMA_VERSION = 1
CONFIG_KEYS = ("experiment", "seed", "params", "tolerances", "out")


class ConfigError(ValueError):
    pass


def _same_kind(default, value) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, list):
        return isinstance(value, list)
    return isinstance(value, type(default))


@dataclass
class ExperimentConfig:
    """Experiment name, parameters (levels, surface/curve, ...), tolerances, seed, output directory.

    Parameters and tolerances are always complete: missing keys take the
    documented defaults, unknown keys are rejected.
    """
    experiment: str
    params: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; known: {sorted(EXPERIMENTS)}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        exp = EXPERIMENTS[self.experiment]
        self.params = self._merge("parameter", exp.params, self.params)
        self.tolerances = self._merge("tolerance", exp.default_tolerances(), self.tolerances)

    def _merge(self, what, defaults: dict, given: dict) -> dict:
        if not isinstance(given, dict):
            raise ConfigError(f"{what}s must be a JSON object")
        unknown = sorted(set(given) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown {what}(s) for {self.experiment}: {unknown}; known: {sorted(defaults)}")
        out = dict(defaults)
        for k, v in given.items():
            if not _same_kind(defaults[k], v):
                raise ConfigError(f"{what} {k!r} expects {type(defaults[k]).__name__}, got {v!r}")
            out[k] = float(v) if isinstance(defaults[k], float) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(d) - set(CONFIG_KEYS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {unknown}; allowed: {list(CONFIG_KEYS)}")
        if "experiment" not in d:
            raise ConfigError("config needs an 'experiment' key")
        return cls(d["experiment"], dict(d.get("params", {})), dict(d.get("tolerances", {})),
                   d.get("seed", 0), d.get("out"))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(d)

    def to_dict(self, with_out: bool = True) -> dict:
        d = {"experiment": self.experiment, "seed": self.seed, "params": self.params,
             "tolerances": self.tolerances}
        if with_out and self.out is not None:
            d["out"] = self.out
        return d

    def to_json(self) -> str:
        return json.dumps(jsonable(self.to_dict()), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    checks: list
    data: dict
    levels: list
    artifacts: list
    criteria: tuple = ()
    error: str | None = None
    wall_time: float = 0.0
    started: str = ""

    @property
    def passed(self) -> bool:
        return self.error is None and bool(self.checks) and all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        """Everything except timing, so identical configs give identical bytes."""
        return {"schema_version": SCHEMA_VERSION, "experiment": self.experiment,
                "criteria": list(self.criteria), "config": self.config, "pass": self.passed,
                "checks": [c.as_dict() for c in self.checks], "levels": self.levels,
                "error": self.error, "data": self.data, "artifacts": sorted(self.artifacts),
                "versions": versions()}

    def to_json(self) -> str:
        return json.dumps(jsonable(self.to_dict()), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def timing(self) -> dict:
        return {"experiment": self.experiment, "started": self.started, "wall_time_s": self.wall_time}

    def checks_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["experiment", "check", "value", "relation", "tolerance", "pass"])
        for c in self.checks:
            d = c.as_dict()
            wr.writerow([self.experiment, c.name, d["value"], c.relation, d["tolerance"], c.passed])
        return buf.getvalue()

    def write(self, out: Path):
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "checks.csv").write_text(self.checks_csv())
        (out / "timing.json").write_text(json.dumps(self.timing(), indent=2, sort_keys=True) + "\n")


def versions() -> dict:
    import jax
    import numpy
    import scipy
    return {"conformal_lab": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "jax": jax.__version__}


def run(config: ExperimentConfig, write: bool = True) -> ExperimentReport:
    """Dispatch to the named experiment; downstream errors are recorded with context."""
    exp = EXPERIMENTS[config.experiment]
    out = Path(config.out) if (write and config.out) else None
    ctx = Context(dict(config.params), dict(config.tolerances), config.seed, out)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    error = None
    try:
        exp.run(ctx)
    except Exception as e:   # surfaced in the report and by the exit code
        error = f"{config.experiment}: {type(e).__name__}: {e}"
        log.error("%s", error)
    rep = ExperimentReport(config.experiment, config.to_dict(with_out=False), ctx.checks, jsonable(ctx.data),
                           sorted(ctx.levels), ctx.artifacts, exp.criteria, error,
                           time.perf_counter() - t0, started)
    if out is not None:
        rep.write(out)
        config.save(out / "config.json")
    return rep


# ------------------------------------------------------------------------------ suites

SUITES = ("fast", "full")


def suite_configs(name: str, seed: int = 0, out: str | None = None, only=None) -> list:
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; choose from {list(SUITES)}")
    cfgs = []
    for exp in EXPERIMENTS.values():
        if only and exp.name not in only:
            continue
        params = dict(exp.fast) if name == "fast" else {}
        sub = str(Path(out) / exp.name) if out else None
        cfgs.append(ExperimentConfig(exp.name, params, {}, seed, sub))
    return cfgs


def _run_config(d: dict) -> ExperimentReport:
    return run(ExperimentConfig.from_dict(d))


def run_suite(name: str, seed: int = 0, out: str | None = None, jobs: int = 1, only=None) -> dict:
    cfgs = suite_configs(name, seed, out, only)
    t0 = time.perf_counter()
    if jobs > 1:
        with ProcessPoolExecutor(jobs, mp_context=get_context("spawn")) as ex:
            reports = list(ex.map(_run_config, [c.to_dict() for c in cfgs]))
    else:
        reports = [run(c) for c in cfgs]
    rows = [{"experiment": r.experiment, "criteria": list(r.criteria), "pass": r.passed,
             "checks_passed": sum(c.passed for c in r.checks), "checks_total": len(r.checks),
             "failed_checks": [c.name for c in r.checks if not c.passed], "error": r.error}
            for r in reports]
    agg = {"schema_version": SCHEMA_VERSION, "suite": name, "seed": seed, "experiments": rows,
           "pass": all(r["pass"] for r in rows)}
    timing = {"suite": name, "wall_time_s": time.perf_counter() - t0,
              "experiments": {r.experiment: r.wall_time for r in reports}}
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "suite.json").write_text(json.dumps(jsonable(agg), indent=2, sort_keys=True) + "\n")
        (Path(out) / "suite_timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    agg["_reports"] = reports
    agg["_timing"] = timing
    return agg


# ------------------------------------------------------------------------------ argparse

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _pairs(items, what) -> dict:
    out = {}
    for it in items or []:
        if "=" not in it:
            raise ConfigError(f"--{what} expects key=value, got {it!r}")
        k, v = it.split("=", 1)
        out[k.strip()] = _parse_value(v)
    return out


def _flag_params(args, exp) -> dict:
    """Map the convenience flags onto the experiment's parameters."""
    p = {}
    defaults = exp.params
    if args.level is not None:
        if "level" not in defaults:
            raise ConfigError(f"{exp.name} has no 'level' parameter (levels: "
                              f"{[k for k in defaults if k.endswith('level')]}); use --set")
        p["level"] = args.level
    if args.surface is not None:
        if "surfaces" in defaults:
            p["surfaces"] = [args.surface]
        else:
            raise ConfigError(f"{exp.name} takes no --surface")
    if args.curve is not None:
        if "curve" not in defaults:
            raise ConfigError(f"{exp.name} takes no --curve")
        p["curve"] = args.curve
    if args.corpus is not None:
        if "corpus" not in defaults:
            raise ConfigError(f"{exp.name} takes no --corpus")
        p["corpus"] = args.corpus
    return p


def build_config(args) -> ExperimentConfig:
    if args.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {args.experiment!r}; known: {sorted(EXPERIMENTS)}")
    exp = EXPERIMENTS[args.experiment]
    base = {"experiment": args.experiment}
    if args.config:
        base = json.loads(Path(args.config).read_text())
        if not isinstance(base, dict):
            raise ConfigError("config must be a JSON object")
        if base.get("experiment", args.experiment) != args.experiment:
            raise ConfigError(f"config is for {base.get('experiment')!r}, not {args.experiment!r}")
        base["experiment"] = args.experiment
        ExperimentConfig.from_dict(base)      # validate the file on its own
    params = dict(base.get("params", {}))
    params.update(_flag_params(args, exp))
    params.update(_pairs(args.set, "set"))
    tols = dict(base.get("tolerances", {}))
    tols.update(_pairs(args.tol, "tol"))
    seed = args.seed if args.seed is not None else base.get("seed", 0)
    out = args.out or base.get("out") or str(Path("runs") / args.experiment)
    return ExperimentConfig(args.experiment, params, tols, seed, out)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conformal-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("experiment", help=" | ".join(EXPERIMENTS))
    r.add_argument("--config", help="JSON config file (flags override it)")
    r.add_argument("--out", help="output directory (default runs/<experiment>)")
    r.add_argument("--seed", type=int)
    r.add_argument("--level", type=int, help="finest mesh level")
    r.add_argument("--surface")
    r.add_argument("--curve")
    r.add_argument("--corpus")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="parameter override (JSON value)")
    r.add_argument("--tol", action="append", metavar="KEY=VALUE", help="tolerance override")
    r.add_argument("--format", choices=("json", "csv"), default="json", help="stdout format")
    r.add_argument("--dry-run", action="store_true", help="print the effective config and exit")

    s = sub.add_parser("suite", help="run every experiment")
    s.add_argument("name", help="fast | full")
    s.add_argument("--out", default=None, help="output directory (default runs/suite-<name>)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1, help="parallel processes")
    s.add_argument("--only", help="comma-separated experiment names")
    s.add_argument("--format", choices=("json", "csv"), default="csv", help="stdout format")

    sub.add_parser("list", help="experiments, criteria, parameters and tolerances")
    return ap


def _print_list():
    for e in EXPERIMENTS.values():
        crit = ", ".join(map(str, e.criteria)) or "-"
        print(f"{e.name}  [criteria: {crit}]  {e.doc}")
        for k, v in e.params.items():
            fast = f"  (fast: {e.fast[k]})" if k in e.fast else ""
            print(f"    param {k} = {json.dumps(v)}{fast}")
        for k, (v, doc) in e.tolerances.items():
            print(f"    tol   {k} = {v!r}  {doc}")


def main(argv=None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        _print_list()
        return 0
    if args.command == "run":
        try:
            cfg = build_config(args)
        except (ConfigError, OSError, json.JSONDecodeError) as e:
            ap.error(str(e))
        if args.dry_run:
            sys.stdout.write(cfg.to_json())
            return 0
        rep = run(cfg)
        sys.stdout.write(rep.to_json() if args.format == "json" else rep.checks_csv())
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {rep.experiment}: {sum(c.passed for c in rep.checks)}/{len(rep.checks)} checks"
              + (f" ({rep.error})" if rep.error else "") + f" -> {cfg.out}", file=sys.stderr)
        return 0 if rep.passed else 1
    if args.command == "suite":
        if args.name not in SUITES:
            ap.error(f"unknown suite {args.name!r}; choose from {list(SUITES)}")
        only = set(args.only.split(",")) if args.only else None
        if only and not only <= set(EXPERIMENTS):
            ap.error(f"unknown experiment(s) {sorted(only - set(EXPERIMENTS))}")
        out = args.out or str(Path("runs") / f"suite-{args.name}")
        agg = run_suite(args.name, args.seed, out, args.jobs, only)
        if args.format == "json":
            sys.stdout.write(json.dumps(jsonable({k: v for k, v in agg.items() if not k.startswith("_")}),
                                        indent=2, sort_keys=True) + "\n")
        else:
            t = agg["_timing"]["experiments"]
            for row in agg["experiments"]:
                crit = ",".join(map(str, row["criteria"])) or "-"
                print(f"{'PASS' if row['pass'] else 'FAIL'} {row['experiment']:<18} criteria {crit:<6} "
                      f"{row['checks_passed']}/{row['checks_total']} checks {t[row['experiment']]:.1f}s"
                      + (f"  error: {row['error']}" if row["error"] else "")
                      + (f"  failed: {'; '.join(row['failed_checks'])}" if row["failed_checks"] else ""))
        print(f"suite {args.name}: {'PASS' if agg['pass'] else 'FAIL'} "
              f"({agg['_timing']['wall_time_s']:.0f}s) -> {out}", file=sys.stderr)
        return 0 if agg["pass"] else 1
    ap.error("unknown command")
    return 2


if __name__ == "__main__":
    sys.exit(main())
