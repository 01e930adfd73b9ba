"""Walk through the online persuasion pipeline on the judge game.

Builds the scheme catalogue, prints the retained loss hull, then runs the
full-feedback and bandit learners for a handful of tasks and prints the
task-averaged regret of each arm.

    python demos/obp_tour.py [--tasks 10] [--seed 0]
"""

import argparse

import numpy as np

from metapersuasion.geometry import hull_vertices
from metapersuasion.harness import resolve_environment
from metapersuasion.obp.bandit import default_grid, run_bandit_baseline, run_bandit_meta
from metapersuasion.obp.full import EwooInterval, run_full_baseline, run_full_meta
from metapersuasion.obp.game import ObpTaskStream, enumerate_schemes, load_game
from metapersuasion.rng import stream


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tasks", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    game, extra = load_game(resolve_environment("builtin:obp_judge"))
    cat = enumerate_schemes(game, extra["grid_step"])
    print(f"{cat.n_candidates} candidate schemes, {cat.n_retained} persuasive, {len(cat.points)} distinct loss points")
    print("hull vertices (normalised losses per type):")
    for v in cat.points[hull_vertices(cat.point_set)]:
        print(f"  {v[0]:.3f}  {v[1]:.3f}")

    m = 5
    ts = ObpTaskStream(game, extra["tau1"], args.tasks, m, args.seed)
    cats = [enumerate_schemes(ts.game(0, t), extra["grid_step"]) for t in range(args.tasks)]
    types = [ts.types(0, t) for t in range(args.tasks)]

    iv = EwooInterval.from_bounds(0.05, 0.25, m)
    meta = run_full_meta(cats, types, iv, stream(args.seed, "arm", "meta"))
    base = run_full_baseline(cats, types, iv.midpoint, stream(args.seed, "arm", "baseline"))
    print(f"\nfull feedback, final task-averaged regret: meta {meta.task_averaged[-1]:.4f}, baseline {base.task_averaged[-1]:.4f}")
    print("step sizes picked by the meta layer:", np.round([t.eta for t in meta.tasks], 3))

    grid = default_grid(2, m, args.tasks, (0.05, 0.25))
    bmeta, diag = run_bandit_meta(cats, types, grid, stream(args.seed, "arm", "meta"))
    eta, b = grid.midpoint
    bbase = run_bandit_baseline(cats, types, eta, b, stream(args.seed, "arm", "baseline"))
    print(f"bandit feedback, final task-averaged regret: meta {bmeta.task_averaged[-1]:.4f}, baseline {bbase.task_averaged[-1]:.4f}")
    top = int(np.argmax(diag.probabilities[-1]))
    print(f"heaviest expert after {args.tasks} tasks: (eta, b) = {grid.pairs[top]} with weight {diag.probabilities[-1][top]:.3f}")


if __name__ == "__main__":
    main()
