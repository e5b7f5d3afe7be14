"""Alignment score on held-out pairs before and after contrastive-only training."""

import argparse

from _common import CONFIGS, benchmark

from slip.config import load_config
from slip.experiments import alignment_gain

parser = argparse.ArgumentParser()
parser.add_argument("--config", default=str(CONFIGS / "alignment.cfg"))
parser.add_argument("--seeds", type=int, default=3)
args = parser.parse_args()

ds = benchmark()
print("seed\tsteps\tbefore\tafter")
for seed in range(args.seeds):
    before, after, steps = alignment_gain(ds, load_config(args.config, seed=seed))
    print(f"{seed}\t{steps}\t{before:.4f}\t{after:.4f}")
