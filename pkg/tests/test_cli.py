import random
from dataclasses import fields

import pytest

from slip.cli import EXIT_DATA, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, build_parser, main
from slip.config import TrainConfig
from slip.data import SyntheticSpec
from slip.graph import load_graph

SMALL_SYNTH = ["--n-items", "120", "--n-clusters", "6", "--feature-dim", "12", "--latent-dim", "6", "--seed", "2"]
QUICK = [
    "--batch-size", "32", "--epochs", "3", "--base-lr", "1e-2", "--warmup-steps", "2",
    "--embed-dim", "8", "--gat-hidden", "16", "--gat-heads", "2", "--seed", "4",
]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["synth", *SMALL_SYNTH, "--out-dir", str(root)]) == EXIT_OK
    return root / "data"


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    root = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(data_dir), *QUICK, "--out-dir", str(root)]) == EXIT_OK
    return root


def purchase_log(path, seed=0):
    rng = random.Random(seed)
    rows = [f"u{u}\ti{rng.randrange(25)}" for u in range(300) for _ in range(rng.randrange(2, 6))]
    path.write_text("\n".join(rows) + "\n")
    return path


def test_synth_writes_manifest(data_dir):
    listed = (data_dir.parent / "manifest.txt").read_text().split()
    assert "data/edges.tsv" in listed and "spec" in listed
    assert all((data_dir.parent / p).is_file() for p in listed)


def test_build_graph_then_stats_round_trip(tmp_path, capsys):
    log = purchase_log(tmp_path / "log.tsv")
    code, out, _ = run(capsys, "build-graph", "--log", log, "--out", tmp_path / "g.tsv")
    assert code == EXIT_OK
    code, again, _ = run(capsys, "stats", "--edges", tmp_path / "g.tsv")
    assert code == EXIT_OK and again == out
    g = load_graph(tmp_path / "g.tsv")
    assert out.splitlines()[1].startswith(f"{g.n}\t{g.num_edges}\t")


def test_stats_labels_the_stand_in_score(capsys, data_dir):
    code, out, _ = run(capsys, "stats", "--data", data_dir)
    lines = out.splitlines()
    assert code == EXIT_OK and lines[0].startswith("# score") and "stand-in" in lines[0]
    assert lines[1] == "nodes\tedges\tscore_mean\tscore_std" and lines[2].startswith("120\t")


def test_kcore_one_only_applies_frequency_filter(tmp_path, capsys):
    log = purchase_log(tmp_path / "log.tsv", seed=3)
    run(capsys, "build-graph", "--log", log, "--kcore", "1", "--min-cofreq", "4", "--out", tmp_path / "a.tsv")
    run(capsys, "build-graph", "--log", log, "--kcore", "1", "--min-cofreq", "4", "--order", "core-first",
        "--out", tmp_path / "b.tsv")
    assert load_graph(tmp_path / "a.tsv") == load_graph(tmp_path / "b.tsv")


def test_build_graph_reports_bad_line(tmp_path, capsys):
    (tmp_path / "log.tsv").write_text("u1\ti1\nbroken\n")
    code, _, err = run(capsys, "build-graph", "--log", tmp_path / "log.tsv", "--out", tmp_path / "g.tsv")
    assert code == EXIT_DATA and ":2:" in err


def test_train_outputs(run_dir):
    listed = set((run_dir / "manifest.txt").read_text().split())
    assert {"loss_log.tsv", "report.tsv", "best/meta", "last/meta", "best/config"} <= listed
    assert all((run_dir / p).is_file() for p in listed)


def test_train_is_byte_identical(tmp_path, data_dir, run_dir):
    assert main(["train", "--data", str(data_dir), *QUICK, "--out-dir", str(tmp_path)]) == EXIT_OK
    for rel in (run_dir / "manifest.txt").read_text().split():
        assert (tmp_path / rel).read_bytes() == (run_dir / rel).read_bytes(), rel


def test_eval_reproduces_train_report(capsys, data_dir, run_dir):
    code, out, _ = run(capsys, "eval", "--data", data_dir, "--checkpoint", run_dir / "best")
    assert code == EXIT_OK
    assert out == (run_dir / "report.tsv").read_text()


def test_config_file_and_flag_override(tmp_path, capsys, data_dir):
    (tmp_path / "cfg").write_text("epochs = 2\nbatch_size = 32\nwarmup_steps = 2\nembed_dim = 8\n")
    code, _, _ = run(capsys, "train", "--data", data_dir, "--config", tmp_path / "cfg", "--epochs", "1",
                     "--out-dir", tmp_path / "r")
    assert code == EXIT_OK
    saved = (tmp_path / "r" / "last" / "config").read_text()
    assert "epochs = 1\n" in saved and "embed_dim = 8\n" in saved


def test_train_from_synthetic_flags(tmp_path, capsys):
    code, out, _ = run(capsys, "train", "--synth-n-items", "80", "--synth-n-clusters", "4", *QUICK,
                       "--out-dir", tmp_path)
    assert code == EXIT_OK and out.startswith("direction\t")


def test_analyze_hops_and_initial_model(tmp_path, capsys, data_dir, run_dir):
    code, out, _ = run(capsys, "analyze-hops", "--data", data_dir, "--checkpoint", run_dir / "best",
                       "--out-dir", tmp_path / "post")
    assert code == EXIT_OK and out.startswith("hop\tcount\tmean\tstd\n")
    code, pre, _ = run(capsys, "analyze-hops", "--data", data_dir, *QUICK, "--out-dir", tmp_path / "pre")
    assert code == EXIT_OK and pre != out
    assert "histograms.tsv" in (tmp_path / "pre" / "manifest.txt").read_text()


def test_dump_ranked(capsys, data_dir, run_dir):
    query = (data_dir / "labels.tsv").read_text().split()[0]
    code, out, _ = run(capsys, "dump-ranked", "--data", data_dir, "--checkpoint", run_dir / "best",
                       "--query", query, "--split", "all", "--k", "4")
    lines = out.splitlines()
    assert code == EXIT_OK and lines[0] == "rank\titem\tscore\tis_match" and len(lines) == 5
    code, _, err = run(capsys, "dump-ranked", "--data", data_dir, "--checkpoint", run_dir / "best",
                       "--query", "nope")
    assert code == EXIT_USAGE and "nope" in err


def test_gradcheck(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == EXIT_OK and "ok" in out
    code, _, _ = run(capsys, "gradcheck", "--tol", "1e-12")
    assert code == 1


def test_single_cell_ablation_matches_train(tmp_path, capsys, data_dir, run_dir):
    code, out, _ = run(capsys, "ablate", "--data", data_dir, *QUICK, "--batch-sizes", "32",
                       "--variants", "w-g", "--seeds", "1", "--out-dir", tmp_path)
    assert code == EXIT_OK
    cell = out.splitlines()[1].split("\t")
    mean = (run_dir / "report.tsv").read_text().splitlines()[3].split("\t")
    assert cell[:3] == ["32", "w-g", "0"]
    assert float(cell[5]) == pytest.approx(float(mean[1]), abs=1e-4)


def test_ablation_records_failed_cells(tmp_path, capsys, data_dir):
    # batch 16 on ~70 training nodes gives enough steps; batch 64 gives 3 steps <= warmup 4
    code, out, _ = run(capsys, "ablate", "--data", data_dir, *QUICK, "--warmup-steps", "4", "--epochs", "1",
                       "--batch-sizes", "16,64", "--variants", "wo-g,w-g", "--seeds", "2", "--out-dir", tmp_path)
    assert code == EXIT_OK
    rows = [line.split("\t") for line in out.splitlines()[1:]]
    assert [r[2] for r in rows if r[0] == "16"] == ["0", "1", "mean", "0", "1", "mean"]
    assert all(r[3] == "FAILED" for r in rows if r[0] == "64")
    assert len((tmp_path / "failures.tsv").read_text().splitlines()) == 1 + 4


def test_ablation_parallel_matches_serial(tmp_path, capsys, data_dir, monkeypatch):
    argv = ["ablate", "--data", data_dir, *QUICK, "--epochs", "1", "--batch-sizes", "16",
            "--variants", "clip,g", "--seeds", "1"]
    _, serial, _ = run(capsys, *argv, "--out-dir", tmp_path / "a")
    monkeypatch.setenv("SLIP_THREADS", "2")
    _, parallel, _ = run(capsys, *argv, "--out-dir", tmp_path / "b")
    assert serial == parallel


def test_unknown_flag_and_variant_are_rejected(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["train", "--bogus", "1", "--out-dir", str(tmp_path)])
    assert info.value.code == EXIT_USAGE
    code, _, err = run(capsys, "ablate", "--variants", "nope", "--out-dir", tmp_path)
    assert code == EXIT_USAGE and "nope" in err


def test_bad_config_value_is_usage_error(tmp_path, capsys):
    (tmp_path / "cfg").write_text("epochs = many\n")
    code, _, err = run(capsys, "train", "--synth-n-items", "40", "--config", tmp_path / "cfg", "--out-dir", tmp_path)
    assert code == EXIT_USAGE and "cfg:1" in err


def test_missing_data_is_data_error(tmp_path, capsys):
    code, _, _ = run(capsys, "eval", "--data", tmp_path / "none", "--checkpoint", tmp_path)
    assert code == EXIT_DATA


def test_divergence_exit_code(tmp_path, capsys, data_dir):
    code, _, err = run(capsys, "train", "--data", data_dir, *QUICK, "--base-lr", "1e300", "--graph-lr", "1e300",
                       "--out-dir", tmp_path)
    assert code == EXIT_DIVERGED and "diverged" in err


def test_help_lists_every_config_flag():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    train_help = sub["train"].format_help()
    for f in fields(TrainConfig):
        assert "--" + f.name.replace("_", "-") in train_help
    for f in fields(SyntheticSpec):
        assert "--synth-" + f.name.replace("_", "-") in train_help
        assert "--" + f.name.replace("_", "-") in sub["synth"].format_help()
