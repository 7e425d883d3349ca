"""Run the six selection x modification scenarios (true-PS correct cells) and
the paired main-effects vs interaction propensity comparison; print the
variance ratios and mean ASEs. Results are cached under results/.

    python3 scripts/run_scenarios.py --threads 1
"""

import argparse
import sys
import time

from pategen import studies
from pategen.simulation import default_threads


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=studies.GRID_REPS)
    ap.add_argument("--prop2-reps", type=int, default=studies.PROP2_REPS)
    ap.add_argument("--seed", type=int, default=studies.MASTER_SEED)
    ap.add_argument("--threads", type=int, default=default_threads())
    args = ap.parse_args(argv)
    t0 = time.time()
    print(f"{'scenario':20s} {'IPSW1/DR1':>10s} {'IPSW2/DR2':>10s}")
    for name in studies.GRID_SCENARIOS:
        res = studies.grid(name, args.reps, seed=args.seed, parallelism=args.threads)
        ese = {r.kind: r.ese for r in res.rows}
        r1 = (ese["ipsw1"] / ese["dr1"]) ** 2
        r2 = (ese["ipsw2"] / ese["dr2"]) ** 2
        print(f"{name:20s} {r1:10.3f} {r2:10.3f}", flush=True)
    print(f"{'estimator':10s} {'ASE main':>9s} {'ASE full':>9s}")
    main_res = studies.prop2("main", args.prop2_reps, seed=args.seed, parallelism=args.threads)
    full_res = studies.prop2("full", args.prop2_reps, seed=args.seed, parallelism=args.threads)
    for a, b in zip(main_res.rows, full_res.rows):
        print(f"{str(a.kind):10s} {100 * a.ase:9.3f} {100 * b.ase:9.3f}")
    print(f"done in {time.time() - t0:.0f}s", file=sys.stderr)


if __name__ == "__main__":
    main()
