#!/usr/bin/env python3
"""Shallow-vs-deep comparison: measure two random populations on the
same matching task and test whether the deep cascades separate from the
shallow ones on each landscape measure.

Both studies persist into per-level artifact stores, so an interrupted
run continues where it left off.  Full budgets on 20+20 networks take
a few hours on one core; --quick shrinks everything to a smoke run.
"""

import argparse
from pathlib import Path

import numpy as np

from tunescope.bench import (
    BenchConfig,
    TaskSpec,
    collect_reports,
    generate_task_stimuli,
    run_study,
    sample_references,
)
from tunescope.measures import MeasureReport
from tunescope.search import SearchConfig
from tunescope.seeds import derive_int
from tunescope.stats import d_prime, permutation_test
from tunescope.targets import (
    HyperRanges,
    default_l1_spec,
    default_l2_spec,
    sample_network_population,
)

QUICK_SEARCH = dict(
    optimal_runs=1,
    optimal_budget_per_dim=10,
    seed_candidates=100,
    path_budget_per_dim=4,
    subspace_runs=3,
    reconstruct_runs=1,
    reconstruct_budget_per_dim=10,
)


def run_level(name, spec, args, out):
    nets, _ = sample_network_population(
        spec, args.networks, HyperRanges(), seed=derive_int(args.seed, name))
    task_spec = TaskSpec(height=spec.input_shape[0], width=spec.input_shape[1],
                         seed=derive_int(args.seed, "task"))
    task = generate_task_stimuli(task_spec)
    references = sample_references(task, 2, seed=derive_int(args.seed, "refs"))
    search = SearchConfig(**QUICK_SEARCH) if args.quick else SearchConfig()
    config = BenchConfig(seed=derive_int(args.seed, name), search=search,
                         n_pairs=args.pairs, unit_sample=args.unit_sample,
                         store_dir=str(out / name), workers=args.workers)
    print(f"[{name}] {args.networks} networks -> {config.store_dir}")
    run_study(nets, task, references, config)
    return collect_reports(out / name)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/depth", type=Path)
    parser.add_argument("--networks", default=20, type=int)
    parser.add_argument("--pairs", default=200, type=int)
    parser.add_argument("--unit-sample", default=2, type=int)
    parser.add_argument("--workers", default=1, type=int)
    parser.add_argument("--seed", default=0, type=int)
    parser.add_argument("--quick", action="store_true",
                        help="tiny budgets, smoke-test scale")
    args = parser.parse_args()

    _, shallow = run_level("l1", default_l1_spec(), args, args.out)
    _, deep = run_level("l2", default_l2_spec(), args, args.out)

    print(f"\n{'measure':8s} {'shallow':>9s} {'deep':>9s} "
          f"{'d_prime':>8s} {'p_perm':>8s}")
    for name in MeasureReport.FIELDS:
        a = np.array([getattr(r, name) for r in shallow], dtype=float)
        b = np.array([getattr(r, name) for r in deep], dtype=float)
        if np.isnan(a).any() or np.isnan(b).any():
            print(f"{name:8s} {'-':>9s} {'-':>9s}")
            continue
        p = permutation_test(a, b, n_perm=20000, seed=args.seed)
        print(f"{name:8s} {a.mean():9.4f} {b.mean():9.4f} "
              f"{d_prime(b, a):8.2f} {p:8.4f}")


if __name__ == "__main__":
    main()
