"""Command-line entry point: ``slip <command> [flags]``.

Exit codes: 0 success, 1 failed check, 2 usage or config error,
3 data or format error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import NonFiniteError
from .config import ConfigError, TrainConfig, field_types, load_config, read_config_file, to_text
from .data import (
    SyntheticSpec,
    emit_stats_table,
    generate_synthetic,
    load_dataset_dir,
    write_dataset,
)
from .encoders import MissingFeatureError
from .graph import (
    FormatError,
    build_copurchase_graph,
    format_stats_table,
    graph_stats,
    load_graph,
    read_purchase_log,
    write_edge_list,
)
from .metrics import (
    average_results,
    dump_ranked_list,
    format_report,
    hop_similarity_analysis,
    write_hop_analysis,
)
from .model import SlipModel, full_loss_grad_check, load_model
from .sampling import SplitSpec
from .trainer import DivergenceError, embed_nodes, evaluate, initial_model, train

log = logging.getLogger("slip")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4
ARTIFACTS = "manifest.txt"
# synthetic-data flags share a command line with training flags (both have a seed)
SYNTH_PREFIX = "synth_"

TABLE_VARIANTS = ("wo-g", "w-g")
# successive additions: graph supervision, auxiliary head, then dropping DLR
COMPONENT_VARIANTS = {
    "clip": dict(graph_loss=False, aux_loss=False, dlr=True),
    "g": dict(graph_loss=True, aux_loss=False, dlr=True),
    "g-aux": dict(graph_loss=True, aux_loss=True, dlr=True),
    "g-aux-nodlr": dict(graph_loss=True, aux_loss=True, dlr=False),
}
STANDIN_NOTE = "# score = cosine of an item's raw image and text features (stand-in, not a learned alignment score)\n"
ABLATE_HEADER = "batch\tvariant\tseed\tmrr_i2t\tmrr_t2i\tmrr_mean\trank_median\trank_mean\tr@1\tr@5\tr@10"


class UsageError(Exception):
    pass


# -- flag helpers ------------------------------------------------------------------


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_dataclass_flags(parser: argparse.ArgumentParser, cls: type, title: str, prefix: str = "") -> None:
    group = parser.add_argument_group(title)
    defaults = cls()
    for f in fields(cls):
        kind = field_types(cls)[f.name]
        group.add_argument(
            _flag(prefix + f.name),
            dest=prefix + f.name,
            default=None,
            metavar=kind.__name__.upper(),
            type=_bool if kind is bool else kind,
            help=f"default {getattr(defaults, f.name)!r}",
        )


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {raw!r}")


def _picked(args: argparse.Namespace, cls: type, prefix: str = "") -> dict:
    found = {f.name: getattr(args, prefix + f.name, None) for f in fields(cls)}
    return {k: v for k, v in found.items() if v is not None}


def _spec_prefix(args: argparse.Namespace) -> str:
    return "" if args.command == "synth" else SYNTH_PREFIX


def _config(args: argparse.Namespace) -> TrainConfig:
    return load_config(getattr(args, "config", None), **_picked(args, TrainConfig))


def _synthetic_spec(args: argparse.Namespace) -> SyntheticSpec:
    values = read_config_file(args.spec, SyntheticSpec) if getattr(args, "spec", None) else {}
    values.update(_picked(args, SyntheticSpec, _spec_prefix(args)))
    try:
        return SyntheticSpec(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _int_list(raw: str) -> list[int]:
    try:
        return [int(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}") from None


def _str_list(raw: str) -> list[str]:
    return [x.strip() for x in raw.split(",") if x.strip()]


class _Outputs:
    """Files written under ``--out-dir``, recorded in a manifest on close."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.paths: set[str] = set()

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.paths.add(rel)
        return p

    def write(self, rel: str, text: str) -> Path:
        p = self.path(rel)
        p.write_text(text, encoding="utf-8")
        return p

    def add_tree(self, rel: str) -> None:
        base = self.root / rel
        for p in sorted(base.rglob("*")):
            if p.is_file():
                self.paths.add(p.relative_to(self.root).as_posix())

    def close(self) -> None:
        (self.root / ARTIFACTS).write_text("".join(f"{p}\n" for p in sorted(self.paths)), encoding="utf-8")


def _load_data(args: argparse.Namespace):
    if getattr(args, "data", None):
        return load_dataset_dir(args.data)
    if getattr(args, "spec", None) or _picked(args, SyntheticSpec, _spec_prefix(args)):
        return generate_synthetic(_synthetic_spec(args))
    raise UsageError("give --data DIR, --synth-spec FILE or --synth-* flags")


def _split_for(ds, config: TrainConfig):
    return ds.split(SplitSpec(config.split_train, config.split_val, config.split_test, config.seed))


def _node_subset(ds, config: TrainConfig, which: str) -> np.ndarray:
    if which == "all":
        return np.arange(ds.n)
    return getattr(_split_for(ds, config), which)


def _model_for(args, ds) -> SlipModel:
    if args.checkpoint:
        return load_model(args.checkpoint, ds.image.dim, ds.text.dim, ds.n_classes, ds.keys())
    config = _config(args)
    log.info("no checkpoint given: using the initial parameters for seed %d", config.seed)
    return initial_model(ds, config)


# -- commands ------------------------------------------------------------------


def cmd_build_graph(args) -> int:
    log_records = read_purchase_log(args.log)
    graph = build_copurchase_graph(log_records, args.min_cofreq, args.kcore, args.order)
    write_edge_list(graph, args.out)
    sys.stdout.write(format_stats_table([graph_stats(graph)]))
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = _synthetic_spec(args)
    out = _Outputs(args.out_dir)
    ds = generate_synthetic(spec)
    write_dataset(ds, out.root / "data")
    out.add_tree("data")
    out.write("spec", to_text(spec))
    out.write("stats.tsv", STANDIN_NOTE + emit_stats_table([ds]))
    out.close()
    sys.stdout.write(STANDIN_NOTE + emit_stats_table([ds]))
    return EXIT_OK


def cmd_stats(args) -> int:
    if not args.data and not args.edges:
        raise UsageError("give --data DIR and/or --edges PATH")
    rows = [graph_stats(load_graph(p)) for p in args.edges or []]
    table = format_stats_table(rows) if rows else ""
    if args.data:
        dsets = [load_dataset_dir(d) for d in args.data]
        table = STANDIN_NOTE + emit_stats_table(dsets) + "".join(table.splitlines(True)[1:])
    sys.stdout.write(table)
    return EXIT_OK


def _train_eval(ds, config: TrainConfig, out_dir=None):
    result = train(ds, config, out_dir)
    model = result.use_best()
    return result, evaluate(model, ds, result.split.test)


def cmd_train(args) -> int:
    config = _config(args)
    ds = _load_data(args)
    out = _Outputs(args.out_dir)
    result, test = _train_eval(ds, config, out.root)
    out.add_tree(".")
    out.paths.discard(ARTIFACTS)
    out.write("report.tsv", format_report(test))
    out.close()
    log.info("best epoch %d, val MRR %.4f", result.best_epoch, result.best_val)
    sys.stdout.write(format_report(test))
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = _load_data(args)
    model = load_model(args.checkpoint, ds.image.dim, ds.text.dim, ds.n_classes, ds.keys())
    nodes = _node_subset(ds, model.config, args.split)
    report = format_report(evaluate(model, ds, nodes))
    if args.out_dir:
        out = _Outputs(args.out_dir)
        out.write("report.tsv", report)
        out.close()
    sys.stdout.write(report)
    return EXIT_OK


def cmd_analyze_hops(args) -> int:
    ds = _load_data(args)
    model = _model_for(args, ds)
    nodes = _node_subset(ds, model.config, args.split)
    e_v, e_t = embed_nodes(model, ds, nodes)
    table = hop_similarity_analysis(
        e_v, e_t, ds.graph, args.max_hop, args.sample_budget or None, np.random.default_rng(args.seed), nodes
    )
    out = _Outputs(args.out_dir)
    for p in write_hop_analysis(table, out.root):
        out.paths.add(p.name)
    out.close()
    sys.stdout.write(table.summary_rows())
    return EXIT_OK


def cmd_dump_ranked(args) -> int:
    ds = _load_data(args)
    model = load_model(args.checkpoint, ds.image.dim, ds.text.dim, ds.n_classes, ds.keys())
    nodes = _node_subset(ds, model.config, args.split)
    e_v, e_t = embed_nodes(model, ds, nodes)
    ids = ds.keys(nodes)
    if args.query not in ids:
        raise UsageError(f"query {args.query!r} is not in the {args.split} split")
    rows = dump_ranked_list(e_v, e_t, ids, args.query, args.direction, args.k)
    text = "rank\titem\tscore\tis_match\n" + "".join(
        f"{r}\t{item}\t{score:.6f}\t{int(match)}\n" for r, (item, score, match) in enumerate(rows, 1)
    )
    if args.out_dir:
        out = _Outputs(args.out_dir)
        out.write("ranked.tsv", text)
        out.close()
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    err = full_loss_grad_check(args.nodes, args.dim, args.seed, args.step)
    ok = err <= args.tol
    print(f"max relative error {err:.3e} ({'ok' if ok else 'FAILED'}, tolerance {args.tol:g})")
    return EXIT_OK if ok else EXIT_CHECK


# -- ablation ------------------------------------------------------------------


def _variant_changes(variant: str) -> dict:
    if variant == "wo-g":
        return {"graph_loss": False}
    if variant == "w-g":
        return {"graph_loss": True}
    if variant in COMPONENT_VARIANTS:
        return dict(COMPONENT_VARIANTS[variant])
    raise UsageError(f"unknown variant {variant!r}; choose from {', '.join(TABLE_VARIANTS + tuple(COMPONENT_VARIANTS))}")


def _cell_row(batch: int, variant: str, seed: int | str, results) -> str:
    i2t, t2i = results
    m = average_results(results)
    r = m.recall_at
    return (
        f"{batch}\t{variant}\t{seed}\t{i2t.mrr:.4f}\t{t2i.mrr:.4f}\t{m.mrr:.4f}"
        f"\t{m.median_rank:g}\t{m.mean_rank:.1f}\t{r[1]:.4f}\t{r[5]:.4f}\t{r[10]:.4f}"
    )


def _mean_row(batch: int, variant: str, cells: list) -> str:
    cols = np.array([[float(x) for x in c.split("\t")[3:]] for c in cells])
    mean = cols.mean(axis=0)
    return f"{batch}\t{variant}\tmean\t" + "\t".join(
        [f"{mean[0]:.4f}", f"{mean[1]:.4f}", f"{mean[2]:.4f}", f"{mean[3]:g}", f"{mean[4]:.1f}"]
        + [f"{x:.4f}" for x in mean[5:]]
    )


def run_ablation_cell(job: tuple) -> tuple[tuple, str | None, str | None]:
    """One grid cell; returns the table row or an error message."""
    key, data_dir, spec, config, out_dir = job
    try:
        ds = load_dataset_dir(data_dir) if data_dir else generate_synthetic(spec)
        _, results = _train_eval(ds, config, out_dir)
        batch, variant, seed = key
        return key, _cell_row(batch, variant, seed, results), None
    except Exception as exc:  # a failed cell is reported, the grid continues
        return key, None, f"{type(exc).__name__}: {exc}"


def ablation_grid(
    base: TrainConfig,
    batch_sizes: Sequence[int],
    variants: Sequence[str],
    seeds: int,
    data_dir: str | None = None,
    spec: SyntheticSpec | None = None,
    out_dir: str | Path | None = None,
    workers: int = 1,
) -> tuple[str, list[str]]:
    """Run every (batch, variant, seed) cell; return the table text and failures."""
    jobs = []
    for b in batch_sizes:
        for v in variants:
            for s in range(seeds):
                cfg = base.replace(batch_size=b, seed=base.seed + s, **_variant_changes(v))
                cell_dir = Path(out_dir) / "cells" / f"b{b}_{v}_s{s}" if out_dir else None
                jobs.append(((b, v, s), data_dir, spec, cfg, cell_dir))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(run_ablation_cell, jobs))
    else:
        done = [run_ablation_cell(j) for j in jobs]

    by_key = {key: (row, err) for key, row, err in done}
    lines, failures = [ABLATE_HEADER], []
    for b in batch_sizes:
        for v in variants:
            rows = []
            for s in range(seeds):
                row, err = by_key[(b, v, s)]
                if err is not None:
                    failures.append(f"{b}\t{v}\t{s}\t{err}")
                    lines.append(f"{b}\t{v}\t{s}\tFAILED" + "\tNA" * 7)
                else:
                    rows.append(row)
                    lines.append(row)
            if rows and seeds > 1:
                lines.append(_mean_row(b, v, rows))
    return "\n".join(lines) + "\n", failures


def cmd_ablate(args) -> int:
    base = _config(args)
    spec = None if args.data else _synthetic_spec(args)
    workers = max(1, int(os.environ.get("SLIP_THREADS", "1") or 1))
    variants = args.variants
    for v in variants:
        _variant_changes(v)
    out = _Outputs(args.out_dir)
    table, failures = ablation_grid(
        base, args.batch_sizes, variants, args.seeds, args.data, spec, out.root, workers
    )
    out.write("ablation.tsv", table)
    out.write("base_config", base.to_text())
    if spec is not None:
        out.write("spec", to_text(spec))
    if failures:
        out.write("failures.tsv", "batch\tvariant\tseed\terror\n" + "\n".join(failures) + "\n")
    if (out.root / "cells").exists():
        out.add_tree("cells")
    out.close()
    sys.stdout.write(table)
    for f in failures:
        log.error("cell failed: %s", f)
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _data_flags(p: argparse.ArgumentParser, synthetic: bool = True) -> None:
    p.add_argument("--data", metavar="DIR", help="dataset directory (edges.tsv, image.tsv, text.tsv, labels.tsv)")
    if synthetic:
        p.add_argument("--synth-spec", dest="spec", metavar="PATH", help="synthetic spec file used when --data is absent")
        _add_dataclass_flags(p, SyntheticSpec, "synthetic data (when --data is absent)", SYNTH_PREFIX)


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value config file; flags override it")
    _add_dataclass_flags(p, TrainConfig, "training config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slip", description="Graph-supervised contrastive image-text training.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("build-graph", help="purchase log -> filtered co-purchase edge list")
    p.add_argument("--log", required=True, metavar="PATH")
    p.add_argument("--min-cofreq", type=int, default=3)
    p.add_argument("--kcore", type=int, default=5)
    p.add_argument("--order", choices=("freq-first", "core-first"), default="freq-first")
    p.add_argument("--out", required=True, metavar="PATH")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--spec", metavar="PATH", help="synthetic spec file; flags override it")
    _add_dataclass_flags(p, SyntheticSpec, "synthetic data")
    p.add_argument("--out-dir", required=True, metavar="DIR")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="node/edge counts and stand-in pair-score statistics")
    p.add_argument("--data", nargs="+", metavar="DIR")
    p.add_argument("--edges", nargs="+", metavar="PATH")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train and evaluate on the test split")
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--out-dir", required=True, metavar="DIR")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="retrieval metrics of a checkpoint")
    _data_flags(p)
    p.add_argument("--checkpoint", required=True, metavar="DIR")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--out-dir", metavar="DIR")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-hops", help="cross-modal similarity grouped by hop distance")
    _data_flags(p)
    p.add_argument("--checkpoint", metavar="DIR", help="omit to analyse the initial parameters of --config")
    _train_flags(p)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    p.add_argument("--max-hop", type=int, default=3)
    p.add_argument("--sample-budget", type=int, default=20000, help="0 keeps every pair")
    p.add_argument("--out-dir", required=True, metavar="DIR")
    p.set_defaults(func=cmd_analyze_hops)

    p = sub.add_parser("dump-ranked", help="top-k candidates for one query item")
    _data_flags(p)
    p.add_argument("--checkpoint", required=True, metavar="DIR")
    p.add_argument("--query", required=True, metavar="ITEM")
    p.add_argument("--direction", choices=("i2t", "t2i"), default="t2i")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--out-dir", metavar="DIR")
    p.set_defaults(func=cmd_dump_ranked)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    p.add_argument("--nodes", type=int, default=6)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="batch-size x variant x seed grid")
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--batch-sizes", type=_int_list, default=[64, 128, 256, 512, 1024], metavar="B1,B2,...")
    p.add_argument(
        "--variants",
        type=_str_list,
        default=list(TABLE_VARIANTS),
        metavar="V1,V2,...",
        help=f"from {', '.join(TABLE_VARIANTS + tuple(COMPONENT_VARIANTS))}",
    )
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--out-dir", required=True, metavar="DIR")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"slip {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, MissingFeatureError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"slip {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, NonFiniteError) as exc:
        print(f"slip {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
