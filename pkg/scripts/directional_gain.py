"""Paired runs with and without graph supervision on the benchmark dataset.

    python3 scripts/directional_gain.py --seeds 10 --batch-size 256
"""

import argparse

from _common import CONFIGS, benchmark

from slip.config import load_config
from slip.experiments import compare_graph_supervision

parser = argparse.ArgumentParser()
parser.add_argument("--config", default=str(CONFIGS / "directional.cfg"))
parser.add_argument("--spec", default=str(CONFIGS / "benchmark.spec"))
parser.add_argument("--seeds", type=int, default=3)
parser.add_argument("--batch-size", type=int)
args = parser.parse_args()

overrides = {"batch_size": args.batch_size} if args.batch_size else {}
config = load_config(args.config, **overrides)
result = compare_graph_supervision(benchmark(args.spec), config, range(args.seeds))
print(result.rows(), end="")
d = result.differences
if len(d) > 1:
    print(f"gain {d.mean():+.5f}, std err {d.std(ddof=1) / len(d) ** 0.5:.5f}, positive in {(d > 0).sum()}/{len(d)}")
