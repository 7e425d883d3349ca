"""Run the moderate-selection / moderate-modification scenario (all 28 cells)
and cache the raw replicate results under results/.

    python3 scripts/run_table3.py --reps 5000 --threads 1

tests/test_acceptance.py reads the same cache; it is keyed by a fingerprint
of the numerical sources, so editing them invalidates it.
"""

import argparse
import sys
import time

from pategen import studies
from pategen.simulation import default_threads


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=studies.TABLE3_REPS)
    ap.add_argument("--seed", type=int, default=studies.MASTER_SEED)
    ap.add_argument("--threads", type=int, default=default_threads())
    ap.add_argument("--refresh", action="store_true", help="ignore an existing cache")
    args = ap.parse_args(argv)
    t0 = time.time()

    def progress(k):
        if k % 500 == 0 or k == args.reps:
            print(f"  {k}/{args.reps} replicates, {time.time() - t0:.0f}s", file=sys.stderr, flush=True)

    res = studies.table3(args.reps, seed=args.seed, parallelism=args.threads, progress=progress, refresh=args.refresh)
    print(studies.describe(res))
    print(f"truth {res.truth:g}; {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
