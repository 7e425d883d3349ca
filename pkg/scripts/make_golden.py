"""Freeze one replicate of the default scenario as a golden file for the
simulation tests (tests/fixtures/golden_replicate.json)."""

import json
from pathlib import Path

from pategen.simulation import load_scenario, replicate_seed, run_replicate

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "golden_replicate.json"
MASTER_SEED = 12345
INDEX = 0

if __name__ == "__main__":
    sc = load_scenario("table3_moderate")
    seed = replicate_seed(sc, MASTER_SEED, INDEX)
    out, errors = run_replicate(sc, seed)
    doc = {
        "scenario": sc.name,
        "master_seed": MASTER_SEED,
        "index": INDEX,
        "seed": seed,
        "cells": [c.label for c in sc.cells],
        "values": out.tolist(),
        "errors": {str(k): v for k, v in errors.items()},
    }
    OUT.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {OUT}")
