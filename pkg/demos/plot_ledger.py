"""Draw the mean and one-standard-deviation bands from a plot JSON file.

    metapersuasion run --config configs/obp_full.json
    metapersuasion emit-plots --ledger results/obp_full/raw.csv
    python demos/plot_ledger.py results/obp_full/plot.json

Needs matplotlib, which the library itself does not depend on.
"""

import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def main(path):
    doc = json.loads(Path(path).read_text())
    x = doc["x"]
    for metric, arms in doc["series"].items():
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for arm, s in arms.items():
            ax.plot(x, s["mean"], label=arm)
            ax.fill_between(x, s["lower"], s["upper"], alpha=0.25)
        ax.set_xlabel("task")
        ax.set_ylabel(f"task-averaged {metric}")
        ax.set_title(f"{doc['family']} ({doc['replications']} replications)")
        ax.legend()
        out = Path(path).with_name(f"{metric}.png")
        fig.tight_layout()
        fig.savefig(out, dpi=120)
        print(out)


if __name__ == "__main__":
    main(sys.argv[1])
