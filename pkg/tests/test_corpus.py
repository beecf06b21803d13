import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revfix.corpus import (
    NOISE_COMMENTS,
    ReviewTriple,
    SplitManifest,
    chronological_split,
    dedup,
    extract_triples,
    is_noise,
    normalize_comment,
)


def test_noise_list_matches_after_normalization():
    assert is_noise("Same as above.")
    assert is_noise("Done")
    assert is_noise("Done!")
    assert is_noise("  nit  ")
    assert is_noise("DITTO")
    assert is_noise("ok, fixed with next update")
    assert is_noise("yes, you are right")


def test_noise_is_exact_not_substring():
    assert not is_noise("thanks, but also fix the null check")
    assert not is_noise("same as above, plus rename the field")
    assert not is_noise("rename this to userId")


def test_empty_comment_is_noise():
    assert is_noise("   ")


@given(st.sampled_from(sorted(NOISE_COMMENTS)), st.sampled_from(["", ".", "!", "?", "..."]))
def test_every_list_entry_discarded_with_terminal_punct(entry, punct):
    assert is_noise(entry + punct)
    assert is_noise(entry.upper() + punct)


@given(st.text(max_size=60))
@settings(max_examples=300, deadline=None)
def test_identifier_like_comments_never_discarded(comment):
    normalized = normalize_comment(comment)
    if normalized and any(ch not in "abcdefghijklmnopqrstuvwxyz ,.'!?" for ch in normalized):
        assert not is_noise(comment)


def _triple(project="p", before="a\nb", after="a\nc", comment="fix b", line=2, ts=100, cid="c1"):
    return ReviewTriple(project, before, after, comment, line, ts, cid)


def test_dedup_keeps_single_copy():
    t = _triple()
    assert len(dedup([t, t])) == 1


def test_dedup_key_includes_comment():
    a = _triple(comment="fix b")
    b = _triple(comment="rename b")
    assert len(dedup([a, b])) == 2


def test_dedup_empty():
    assert dedup([]) == []


def test_dedup_keeps_earliest_timestamp():
    late = _triple(ts=500, cid="late")
    early = _triple(ts=100, cid="early")
    kept = dedup([late, early])
    assert len(kept) == 1 and kept[0].change_id == "early"


def _corpus(counts_by_project):
    out = []
    for p, n in counts_by_project.items():
        for i in range(n):
            out.append(
                _triple(project=p, comment=f"fix {p}{i}", ts=1000 + i, cid=f"{p}-{i:03d}")
            )
    return out


def test_split_100_triples():
    split = chronological_split(_corpus({"p": 100}))
    assert len(split.test) == 5 and len(split.train) == 95
    assert split.per_project_counts["p"] == (95, 5)


def test_split_single_triple_goes_to_test():
    split = chronological_split(_corpus({"p": 1}))
    assert len(split.test) == 1 and len(split.train) == 0


def test_split_two_projects_40_60():
    split = chronological_split(_corpus({"a": 40, "b": 60}))
    assert split.per_project_counts["a"] == (38, 2)
    assert split.per_project_counts["b"] == (57, 3)


def test_split_no_overlap_and_no_leakage():
    triples = _corpus({"a": 23, "b": 7})
    split = chronological_split(triples)
    assert not set(split.train) & set(split.test)
    by_id = {t.triple_id: t for t in triples}
    for project in ("a", "b"):
        train_ts = [by_id[i].timestamp for i in split.train if by_id[i].project == project]
        test_ts = [by_id[i].timestamp for i in split.test if by_id[i].project == project]
        assert max(train_ts) <= min(test_ts)


@given(st.permutations(range(30)))
@settings(max_examples=50, deadline=None)
def test_split_deterministic_under_input_order(order):
    triples = _corpus({"a": 18, "b": 12})
    shuffled = [triples[i] for i in order]
    assert chronological_split(shuffled).to_dict() == chronological_split(triples).to_dict()


def test_split_tie_broken_by_change_id():
    a = _triple(comment="x1", ts=100, cid="b-change")
    b = _triple(comment="x2", ts=100, cid="a-change")
    split = chronological_split([a, b], test_fraction=0.5)
    # equal timestamps: ascending change_id ranks first in the recency order
    assert split.test == [b.triple_id]


def test_split_fraction_float_safety():
    # ceil must use exact arithmetic: 0.05 * 60 is 3.0000000000000004 in floats
    split = chronological_split(_corpus({"p": 60}))
    assert len(split.test) == 3


def test_split_manifest_round_trip():
    split = chronological_split(_corpus({"a": 10}))
    assert SplitManifest.from_dict(split.to_dict()).to_dict() == split.to_dict()


def test_extract_triples_filters():
    base = {
        "project": "p",
        "change_id": "c",
        "file_path": "A.java",
        "comment_line": 1,
        "patchset_before": 1,
        "patchset_after": 2,
        "file_before": "a\nb",
        "timestamp": 10,
    }
    events = [
        dict(base, comment_text="fix this", file_after="a\nc", no_change=False),
        dict(base, comment_text="Done", file_after="a\nd", no_change=False),
        dict(base, comment_text="fix this", file_after="a\nb", no_change=True),
        dict(base, comment_text="   ", file_after="a\ne", no_change=False),
    ]
    triples, report = extract_triples(events)
    assert len(triples) == 1
    assert report.kept == 1 and report.noise == 1
    assert report.no_change == 1 and report.empty_comment == 1
