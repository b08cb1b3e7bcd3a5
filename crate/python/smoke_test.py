"""Smoke test for the coolgraph_py extension.

Build the module first (see README), then run:

    python3 python/smoke_test.py [checkpoint.json]
"""

import math
import pathlib
import random
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent))

import coolgraph_py as cg  # noqa: E402
from scipy.stats import kendalltau  # noqa: E402


def check(cond, msg):
    if not cond:
        raise AssertionError(msg)
    print("ok   ", msg)


def main():
    check([len(cg.enumerate("single", n)) for n in (3, 4)] == [13, 73], "single-split counts 13, 73")
    check(len(cg.enumerate("multi", 3)) == 9, "multi-split count 9")

    a = cg.Architecture("S;3;{[2],[0,1]}")
    check(a.key == "S;3;{[0,1],[2]}", "keys are canonical")
    check(a.family == "single" and a.n_cphx == 3, "family and size")
    check(a.vertices()[0] == "T" and len(a.edges()) == len(a.vertices()) - 1, "flat graph is a tree rooted at the tank")
    rows = a.features([16.0, 8.0, 4.0])
    check(rows[0] == [0.0, 0.0, 0.0, 1.0], "tank feature row")

    loads = [14.0, 6.0, 10.0]
    base = cg.simulate_uniform(a, loads)
    j, evals, saturated = cg.label(a, loads, max_evals=120)
    check(base > 0 and j >= base - 1e-9, f"optimized endurance {j:.1f}s >= uniform {base:.1f}s")
    check(evals > 0 and not saturated, "label bookkeeping")

    try:
        cg.label(a, [30.0, 6.0, 10.0])
    except ValueError as e:
        check("bounds" in str(e) or "shape" in str(e) or "load" in str(e), "out-of-range load raises ValueError")
    else:
        raise AssertionError("expected ValueError")

    m = cg.Model.untrained(seed=1)
    archs = cg.enumerate("single", 3)
    preds = m.predict_many(archs, loads)
    check(len(preds) == 13 and all(math.isfinite(p) for p in preds), "batched prediction")
    check(abs(preds[4] - m.predict(archs[4], loads)) < 1e-12, "batched and single predictions agree")
    check(len(m.embedding(a, loads)) == 48, "embedding width 48")

    rng = random.Random(0)
    x = [rng.randint(0, 9) for _ in range(200)]
    y = [v + rng.randint(0, 6) for v in x]
    check(abs(cg.kendall_tau(x, y) - kendalltau(x, y).statistic) < 1e-12, "tau-b matches scipy")
    check(cg.n_ol([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == 2, "N_OL hand case")
    check(cg.n_sub([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == 2, "N_sub hand case")
    check(abs(cg.j_sub([10.0, 9.0], [0.0, 1.0]) - 0.9) < 1e-15, "J_sub hand case")

    if len(sys.argv) > 1:
        trained = cg.Model.load(sys.argv[1])
        p = trained.predict_many(archs, loads)
        check(all(v > 0 for v in p), f"checkpoint {sys.argv[1]} predicts positive endurance")

    print("smoke test passed")


if __name__ == "__main__":
    main()
