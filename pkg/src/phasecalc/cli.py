"""Command-line runner.

``phasecalc run --config FILE`` executes the command named in the file;
``phasecalc <command> --config FILE`` does the same but insists the file
names that command; ``phasecalc validate --config FILE`` only checks it.

Exit codes: 0 all checks passed, 1 a check failed, 2 configuration error,
3 numerical divergence. Failures also write ``error.json``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .config import COMMANDS, SCHEMA_VERSION, ConfigError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGENCE = 0, 1, 2, 3


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, complex):
        return format(v.real, ".17g") + format(v.imag, "+.17g") + "j"
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(_jsonable(v), sort_keys=True)
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if np.isfinite(f) else str(f)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def write_csv(path: Path, rows: list[dict]) -> None:
    cols: list[str] = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _error(out: Path | None, code: int, kind: str, diagnostics: list[str]) -> int:
    rec = {"status": kind, "exit_code": code, "diagnostics": diagnostics, "schema_version": SCHEMA_VERSION}
    print(json.dumps(rec), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(json.dumps(rec, indent=2) + "\n")
        except OSError:
            pass
    return code


def _load(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load(args.config)
    if args.command not in ("run", "validate") and cfg.command != args.command:
        raise ConfigError([f"config command {cfg.command!r} does not match subcommand {args.command!r}"])
    cfgmod.apply_seed_override(cfg)
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    return cfg


def cmd_validate(args) -> int:
    try:
        cfg = _load(args)
    except ConfigError as e:
        return _error(None, EXIT_CONFIG, "config_error", e.diagnostics)
    diags = cfgmod.validate(cfg)
    print(json.dumps({"config": str(args.config), "diagnostics": diags}))
    return EXIT_CONFIG if diags else EXIT_OK


def cmd_run(args) -> int:
    from . import experiments as ex

    out = Path(args.out) if args.out else None
    try:
        cfg = _load(args)
        out = Path(cfg.output_dir)
        diags = cfgmod.validate(cfg)
        if diags:
            raise ConfigError(diags)
    except ConfigError as e:
        return _error(out, EXIT_CONFIG, "config_error", e.diagnostics)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        res = ex.run(cfg, jobs=args.jobs)
    except ex.NumericalDivergence as e:
        return _error(out, EXIT_DIVERGENCE, "numerical_divergence", [str(e)])
    except (ValueError, KeyError) as e:
        return _error(out, EXIT_CONFIG, "config_error", [f"{type(e).__name__}: {e}"])
    wall = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, rows in res.tables.items():
        p = out / f"{name}.csv"
        write_csv(p, rows)
        files[p.name] = _sha256(p)
    ok = res.passed(strict=args.strict)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "engine": {"name": "phasecalc", "version": __version__, "python": platform.python_version(),
                   "numpy": np.__version__},
        "config": cfg.to_json(),
        "config_path": str(args.config),
        "jobs": args.jobs,
        "strict": args.strict,
        "started": started,
        "wall_time": wall,
        "passed": ok,
        "assertions": [c.to_json() for c in res.checks],
        "summary": res.summary,
        "outputs": files,
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    for c in res.checks:
        tag = "PASS" if c.passed else ("WARN" if c.warning and not args.strict else "FAIL")
        print(f"{tag:4s} {cfg.command}/{cfg.mode} {c.name} = {c.value:.6g} ({c.bound})")
    if not ok:
        failed = [c.name for c in res.checks if not c.passed and (args.strict or not c.warning)]
        return _error(out, EXIT_FAIL, "assertion_failure", [f"failed: {n}" for n in failed])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phasecalc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"phasecalc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run",) + COMMANDS:
        s = sub.add_parser(name, help="run the experiment in a config file" if name == "run" else f"run a {name} config")
        s.add_argument("--config", required=True, type=Path, help="TOML experiment file")
        s.add_argument("--jobs", type=int, default=1, help="worker processes for hbar sweeps")
        s.add_argument("--out", help="output directory (overrides output_dir)")
        s.add_argument("--strict", action="store_true", help="treat warnings as failures")
        s.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("--config", required=True, type=Path)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        return _error(None, EXIT_CONFIG, "config_error", ["--jobs must be at least 1"])
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
