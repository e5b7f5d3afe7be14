from pathlib import Path

from slip.config import read_config_file
from slip.data import SyntheticSpec, generate_synthetic

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def benchmark(path=CONFIGS / "benchmark.spec"):
    return generate_synthetic(SyntheticSpec(**read_config_file(path, SyntheticSpec)))
