"""Run every shipped config and print a one-line verdict for each.

    python3 scripts/run_all.py [--jobs K] [--out DIR] [--only a0*]
"""

import argparse
import fnmatch
import time
from pathlib import Path

from phasecalc.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=str(ROOT / "out"))
    p.add_argument("--only", default="*", help="glob on config stems")
    args = p.parse_args(argv)
    worst = 0
    for cfg in sorted((ROOT / "configs").glob("*.toml")):
        if not fnmatch.fnmatch(cfg.stem, args.only):
            continue
        t0 = time.perf_counter()
        code = main(["run", "--config", str(cfg), "--out", str(Path(args.out) / cfg.stem), "--jobs", str(args.jobs)])
        print(f"== {cfg.stem}: exit {code} in {time.perf_counter() - t0:.1f} s", flush=True)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    raise SystemExit(run())
