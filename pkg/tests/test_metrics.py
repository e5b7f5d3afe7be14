import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slip.graph import InstanceGraph
from slip.metrics import (
    HIST_BINS,
    REPORT_HEADER,
    RetrievalResult,
    dump_ranked_list,
    format_report,
    hop_similarity_analysis,
    retrieval_eval,
    summarize_ranks,
    true_match_ranks,
    write_hop_analysis,
)


def unit(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def sort_oracle(sims):
    """Rank by stable descending sort with the true match placed after its ties."""
    ranks = []
    for i, row in enumerate(sims):
        order = sorted(range(len(row)), key=lambda j: (-row[j], j == i))
        ranks.append(order.index(i) + 1)
    ranks = np.array(ranks)
    srt = sorted(ranks.tolist())
    return {
        "mrr": sum(1.0 / r for r in ranks) / len(ranks),
        "r": {k: sum(r <= k for r in ranks) / len(ranks) for k in (1, 5, 10)},
        "mean": sum(ranks) / len(ranks),
        "median": srt[(len(srt) - 1) // 2],
        "ranks": ranks,
    }


def assert_matches(res: RetrievalResult, ref):
    assert np.array_equal(res.ranks, ref["ranks"])
    assert res.mrr == pytest.approx(ref["mrr"], abs=1e-15)
    assert res.recall_at == pytest.approx(ref["r"], abs=0)
    assert res.mean_rank == pytest.approx(ref["mean"], abs=1e-12)
    assert res.median_rank == ref["median"]


def test_perfect_retrieval():
    e = np.eye(6)
    for res in retrieval_eval(e, e):
        assert res.mrr == 1.0 and res.recall_at[1] == 1.0 and res.mean_rank == 1.0


def test_two_pair_example():
    sims = np.array([[0.1, 0.9], [0.8, 0.2]])
    ranks = true_match_ranks(sims)
    assert ranks.tolist() == [2, 2]
    res = summarize_ranks("i2t", ranks)
    assert res.mrr == 0.5 and res.recall_at[1] == 0.0


def test_ties_count_against_the_query():
    sims = np.array([[0.5, 0.5, 0.1], [0.0, 1.0, 0.0], [0.3, 0.3, 0.3]])
    assert true_match_ranks(sims).tolist() == [2, 1, 3]


@pytest.mark.parametrize("seed", range(5))
def test_random_sets_match_sort_oracle(seed):
    rng = np.random.default_rng(seed)
    ev, et = unit(rng, 100, 8), unit(rng, 100, 8)
    i2t, t2i = retrieval_eval(ev, et)
    sims = ev @ et.T
    assert_matches(i2t, sort_oracle(sims))
    assert_matches(t2i, sort_oracle(sims.T))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_quantised_sims_match_oracle(n, seed):
    # coarse values force many ties
    rng = np.random.default_rng(seed)
    ev = np.round(rng.normal(size=(n, 2)))
    et = np.round(rng.normal(size=(n, 2)))
    i2t, _ = retrieval_eval(ev, et)
    assert_matches(i2t, sort_oracle(ev @ et.T))


def test_retrieval_rejects_bad_input():
    with pytest.raises(ValueError):
        retrieval_eval(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        retrieval_eval(np.eye(3), np.eye(2))


def test_report_layout():
    res = retrieval_eval(np.eye(3), np.eye(3))
    lines = format_report(res).splitlines()
    assert lines[0] == REPORT_HEADER
    assert [line.split("\t")[0] for line in lines[1:]] == ["i2t", "t2i", "mean"]
    assert lines[1].split("\t")[1] == "1.000000"


def test_ranked_list_orders_ties_with_match_last():
    ev = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    et = ev.copy()
    top = dump_ranked_list(ev, et, ["a", "b", "c"], "a", "t2i", k=3)
    assert [t[0] for t in top] == ["b", "a", "c"]
    assert [t[2] for t in top] == [False, True, False]
    with pytest.raises(KeyError):
        dump_ranked_list(ev, et, ["a", "b", "c"], "zz")
    with pytest.raises(ValueError):
        dump_ranked_list(ev, et, ["a", "b", "c"], 0, "x2y")


def path_graph(n):
    return InstanceGraph.from_edges([f"p{i}" for i in range(n)], [(i, i + 1, 1) for i in range(n - 1)])


def test_hop_groups_partition_pairs():
    rng = np.random.default_rng(0)
    g = path_graph(6)
    ev, et = unit(rng, 6, 3), unit(rng, 6, 3)
    table = hop_similarity_analysis(ev, et, g, max_hop=3, sample_budget=None)
    sizes = {h: grp.similarities.size for h, grp in table.groups.items()}
    assert sizes == {0: 6, 1: 10, 2: 8, 3: 6}
    for h, grp in table.groups.items():
        for (i, j), s in zip(grp.pairs, grp.similarities):
            assert abs(i - j) == h
            assert s == pytest.approx(ev[i] @ et[j])


def test_hop_budget_subsamples():
    g = path_graph(40)
    rng = np.random.default_rng(1)
    e = unit(rng, 40, 4)
    table = hop_similarity_analysis(e, e, g, max_hop=3, sample_budget=5, rng=np.random.default_rng(0))
    assert table.groups[2].similarities.size == 5
    assert table.groups[1].similarities.size == 78


def test_hop_files(tmp_path):
    g = path_graph(5)
    e = unit(np.random.default_rng(2), 5, 3)
    table = hop_similarity_analysis(e, e, g, max_hop=2, sample_budget=None)
    written = write_hop_analysis(table, tmp_path)
    assert {p.name for p in written} == {"hop0.tsv", "hop1.tsv", "hop2.tsv", "histograms.tsv", "summary.tsv"}
    hist = (tmp_path / "histograms.tsv").read_text().splitlines()
    assert len(hist) == 1 + 3 * HIST_BINS
    counts = [int(line.split("\t")[3]) for line in hist[1:] if line.startswith("0\t")]
    assert sum(counts) == 5
    assert (tmp_path / "summary.tsv").read_text().startswith("hop\tcount\tmean\tstd\n")


def test_hop_analysis_requires_matching_rows():
    with pytest.raises(ValueError):
        hop_similarity_analysis(np.eye(3), np.eye(3), path_graph(4))
