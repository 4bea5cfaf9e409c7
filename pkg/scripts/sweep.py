"""Run one config repeatedly while varying a single key.

    python3 scripts/sweep.py configs/a10_ehrenfest.toml eps 0.03 0.05 0.08 --jobs 2

Each value gets its own output directory ``<out>/<key>=<value>``; the
script prints the summary block of every manifest.
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from phasecalc.cli import main


def _toml_value(v: str) -> str:
    try:
        float(v)
        return v
    except ValueError:
        return v if v.startswith("[") or v in ("true", "false") else json.dumps(v)


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config", type=Path)
    p.add_argument("key")
    p.add_argument("values", nargs="+")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="out/sweep")
    args = p.parse_args(argv)
    with open(args.config, "rb") as fh:
        tomllib.load(fh)  # fail early on a broken base file
    base = [ln for ln in args.config.read_text().splitlines() if not ln.split("=")[0].strip() == args.key]
    worst = 0
    with tempfile.TemporaryDirectory() as d:
        for v in args.values:
            cfg = Path(d) / f"{args.config.stem}.toml"
            # keys must precede any [bundle] table
            lines = list(base)
            cut = next((i for i, ln in enumerate(lines) if ln.strip().startswith("[")), len(lines))
            lines.insert(cut, f"{args.key} = {_toml_value(v)}")
            cfg.write_text("\n".join(lines) + "\n")
            out = Path(args.out) / f"{args.key}={v}"
            code = main(["run", "--config", str(cfg), "--out", str(out), "--jobs", str(args.jobs)])
            worst = max(worst, code)
            man = out / "manifest.json"
            summary = json.loads(man.read_text())["summary"] if man.exists() else None
            print(f"{args.key}={v}: exit {code} {json.dumps(summary)}", flush=True)
    return worst


if __name__ == "__main__":
    sys.exit(run())
