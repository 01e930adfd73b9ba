"""Inspect one Markov persuasion task: the benchmark, then a learner's episodes.

Prints the benchmark signalling policy, then runs the full-feedback learner
on one long task and shows how per-episode regret and violation evolve as
the confidence radii shrink.

    python demos/mpp_single_task.py [--episodes 2000] [--seed 0]
"""

import argparse

import numpy as np

from metapersuasion.harness import resolve_environment
from metapersuasion.mpp.env import load_spec
from metapersuasion.mpp.learners import TaskSource, full_meta_opps, zero_kappas
from metapersuasion.mpp.programs import benchmark_opt


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = load_spec(resolve_environment("builtin:mpp_two_state")).with_overrides(m=args.episodes, T=1)
    source = TaskSource(spec, args.seed)
    task = source.task(0)
    bench = benchmark_opt(task)
    print(f"benchmark value per episode: {bench.value:.4f}")
    for w in range(spec.n_outcomes):
        print(f"  outcome {w}: recommend a1 w.p. {bench.policy[0, w, 0]:.3f}")

    for label, kappas in (("shrinkage", None), ("within-task only", zero_kappas())):
        run = full_meta_opps(source, kappas)
        r, v = run.episode_regret[0], run.episode_violation[0]
        chunks = np.array_split(np.arange(r.size), 5)
        print(f"\n{label}: mean per-episode regret / violation by fifth of the task")
        for c in chunks:
            print(f"  episodes {c[0]:>5}-{c[-1]:<5} regret {r[c].mean():+.4f}  violation {v[c].mean():.4f}")


if __name__ == "__main__":
    main()
