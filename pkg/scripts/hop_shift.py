"""Mean cross-modal cosine per hop group before and after graph-supervised training."""

import argparse

from _common import CONFIGS, benchmark

from slip.config import load_config
from slip.experiments import hop_shift

parser = argparse.ArgumentParser()
parser.add_argument("--config", default=str(CONFIGS / "hop_shift.cfg"))
parser.add_argument("--seeds", type=int, default=3)
parser.add_argument("--max-hop", type=int, default=3)
args = parser.parse_args()

ds = benchmark()
config = load_config(args.config)
hops = "\t".join(f"hop{h}" for h in range(args.max_hop + 1))
print(f"seed\tstage\t{hops}")
for seed in range(args.seeds):
    before, after = hop_shift(ds, config.replace(seed=seed), args.max_hop)
    for stage, means in (("init", before), ("trained", after)):
        print(f"{seed}\t{stage}\t" + "\t".join(f"{m:.4f}" for m in means))
