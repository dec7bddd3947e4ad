import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from event_retriever.errors import FusionError, SubmissionError
from event_retriever.fusion import RunSet, fuse_submissions, rrf_fuse, rrf_scores
from event_retriever.submission import SubmissionTable


def exact_rrf(runs, qid, k=60):
    """Rational-arithmetic oracle for the fused order."""
    scores = {}
    for run in runs:
        for rank, item in enumerate([i for i in run[qid] if i != "#"], start=1):
            scores[item] = scores.get(item, Fraction(0)) + Fraction(1, k + rank)
    return sorted(scores, key=lambda i: (-scores[i], i)), scores


def test_single_run_scores_and_order():
    rs = RunSet(({"q": ["a", "b", "c"]},))
    assert rrf_scores(rs, "q") == {"a": 1 / 61, "b": 1 / 62, "c": 1 / 63}
    assert rrf_fuse(rs, "q", output_len=3) == ["a", "b", "c"]


def test_consensus_promoted():
    rs = RunSet(({"q": ["x", "g", "p"]}, {"q": ["y", "g", "r"]}))
    scores = rrf_scores(rs, "q")
    assert scores["g"] == pytest.approx(2 / 62)
    assert scores["x"] == scores["y"] == pytest.approx(1 / 61)
    assert scores["g"] > scores["x"]
    assert rrf_fuse(rs, "q")[:3] == ["g", "x", "y"]


def test_padding():
    rs = RunSet(({"q": ["a", "b"]}, {"q": ["b", "a"]}, {"q": ["a"]}))
    assert rrf_fuse(rs, "q", output_len=10) == ["a", "b"] + ["#"] * 8


def test_pads_in_input_ignored():
    rs = RunSet(({"q": ["a", "#", "#"]},))
    assert rrf_scores(rs, "q") == {"a": 1 / 61}


def test_disjoint_runs_interleave():
    rs = RunSet(({"q": ["m1", "m2"]}, {"q": ["k1", "k2"]}))
    assert rrf_fuse(rs, "q", output_len=4) == ["k1", "m1", "k2", "m2"]


def test_missing_query():
    with pytest.raises(FusionError) as info:
        RunSet(({"q1": ["a"]}, {"q2": ["a"]}))
    assert info.value.query_id == "q1"


def test_duplicate_within_run():
    with pytest.raises(FusionError, match="twice"):
        rrf_scores(RunSet(({"q": ["a", "a"]},)), "q")


def test_bad_rrf_k():
    with pytest.raises(FusionError):
        RunSet(({"q": ["a"]},), rrf_k=0)


def test_fuse_with_itself_keeps_order():
    t = SubmissionTable({"q1": ["c", "a", "b"], "q2": ["z"]}, output_len=5)
    fused = fuse_submissions([t, t], output_len=5)
    assert fused == t


def test_fuse_inconsistent_queries_named():
    a = SubmissionTable({"q1": ["x"], "q2": ["y"]}, output_len=3)
    b = SubmissionTable({"q1": ["x"]}, output_len=3)
    with pytest.raises(FusionError, match="q2"):
        fuse_submissions([a, b])


_ids = st.lists(st.sampled_from([f"i{n}" for n in range(15)]), unique=True, max_size=10)


@settings(max_examples=100, deadline=None)
@given(st.lists(_ids, min_size=1, max_size=6), st.integers(0, 2**32 - 1))
def test_matches_rational_oracle_and_permutation_invariant(lists, seed):
    runs = [{"q": ids} for ids in lists]
    expected, scores = exact_rrf(runs, "q")
    fused = rrf_fuse(RunSet(tuple(runs)), "q", output_len=10)
    assert [i for i in fused if i != "#"] == expected[:10]
    assert len(fused) == 10
    shuffled = runs[:]
    random.Random(seed).shuffle(shuffled)
    assert rrf_fuse(RunSet(tuple(shuffled)), "q", output_len=10) == fused
    bound = len(runs) / 61
    assert all(0 < float(s) <= bound for s in scores.values())


@settings(max_examples=100, deadline=None)
@given(st.lists(_ids, min_size=1, max_size=5), st.data())
def test_dominance(lists, data):
    runs = [{"q": ids} for ids in lists]
    scores = rrf_scores(RunSet(tuple(runs)), "q")
    fused = rrf_fuse(RunSet(tuple(runs)), "q", output_len=len(scores) or 1)
    ids = sorted(scores)
    if len(ids) < 2:
        return
    a, b = data.draw(st.sampled_from(ids)), data.draw(st.sampled_from(ids))
    if a == b:
        return
    pos = [{i: r for r, i in enumerate(run["q"])} for run in runs]
    in_a = {n for n, p in enumerate(pos) if a in p}
    in_b = {n for n, p in enumerate(pos) if b in p}
    if not in_b <= in_a:
        return
    if not all(pos[n][a] <= pos[n][b] for n in in_b):
        return
    strict = any(pos[n][a] < pos[n][b] for n in in_b) or in_a > in_b
    if strict:
        assert fused.index(a) < fused.index(b)


# -- submission table -----------------------------------------------------------

def test_submission_csv_round_trip():
    t = SubmissionTable({"q1": ["a", "b"], "q2": []}, output_len=4)
    text = t.to_csv()
    assert text == "query_id,id1,id2,id3,id4\nq1,a,b,#,#\nq2,#,#,#,#\n"
    assert SubmissionTable.from_csv(text) == t


def test_submission_csv_without_header():
    t = SubmissionTable.from_csv("q1,a,b,#\n")
    assert t.row("q1") == ["a", "b", "#"]


def test_submission_rejects_bad_rows():
    with pytest.raises(SubmissionError):
        SubmissionTable({"q": ["a", "#", "b"]}, output_len=3)
    with pytest.raises(SubmissionError):
        SubmissionTable({"q": ["a", "a"]}, output_len=3)
    with pytest.raises(SubmissionError):
        SubmissionTable({"q": ["a", "b", "c", "d"]}, output_len=3)
