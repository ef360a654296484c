#!/usr/bin/env python3
"""Run the full verification suite on a config and print a readable table.

Example:
    python3 scripts/run_all_checks.py scripts/configs/two_regime.json --n-paths 20000 --n-steps 512
"""

import argparse
import json
import sys
import time

from rscontrol import load_market, run_all_checks, validate_generator


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", help="JSON configuration file (CLI schema)")
    ap.add_argument("--n-paths", type=int, default=None)
    ap.add_argument("--n-steps", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    with open(args.config) as fh:
        cfg = json.load(fh)
    gen = validate_generator(cfg["generator"])
    model = load_market({**cfg["market"], "generator": cfg["generator"]})
    numerics = dict(cfg.get("numerics", {}))
    for key in ("n_paths", "n_steps", "seed", "workers"):
        override = getattr(args, key)
        if override is not None:
            numerics[key] = override

    t0 = time.perf_counter()
    reports = run_all_checks(
        model,
        gen,
        float(cfg["problem"]["d"]),
        i0=int(cfg["problem"].get("initial_state", 1)),
        n_paths=numerics.get("n_paths", 100_000),
        n_steps=numerics.get("n_steps", 4096),
        steps_per_cell=numerics.get("steps_per_cell", 200),
        seed=numerics.get("seed", 0),
        workers=numerics.get("workers", 1),
    )
    elapsed = time.perf_counter() - t0

    width = max(len(r.check_name) for r in reports)
    for r in reports:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.check_name:<{width}}  {status:>4}  stat={r.statistic:.3e}  "
              f"thr={r.threshold:.3e}  {r.detail}")
    n_bad = sum(not r.passed for r in reports)
    print(f"\n{len(reports)} checks, {n_bad} failed  ({elapsed:.1f}s)")
    return 1 if n_bad else 0


if __name__ == "__main__":
    sys.exit(main())
