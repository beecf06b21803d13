import numpy as np
import pytest

from revfix.infer import (
    FixSuggestion,
    Hypothesis,
    beam_search,
    hypotheses_to_suggestions,
    hypothesis_tokens_to_text,
)
from revfix.linediff import EditRegion
from revfix.neural.model import ModelConfig, PointerGenerator
from revfix.seqbuild import DualVocabulary, EncodedSample, END_ID, SPECIALS, build_vocab
from collections import Counter

VT_WORDS = ["alpha", "beta", "gamma"]


def small_model(seed=3, max_target_len=4, coverage=False, vt_extra=0):
    vt = len(SPECIALS) + len(VT_WORDS) + vt_extra
    cfg = ModelConfig(
        source_vocab_size=vt + 4,
        target_vocab_size=vt,
        embed_dim=6,
        encoder_hidden=3,
        decoder_hidden=6,
        max_source_len=8,
        max_target_len=max_target_len,
        coverage_enabled=coverage,
        precision="double",
        seed=seed,
    )
    return PointerGenerator(cfg)


def encode_simple(model, src_ids, src_ext, n_ext):
    src = np.array([src_ids])
    mask = np.ones_like(src, dtype=model.config.dtype)
    return model.encode(src, mask, np.array([src_ext]), n_ext)


def enumerate_all(model, enc, max_len):
    """Exhaustive scoring of every sequence, mirroring beam semantics."""
    V = model.config.target_vocab_size + enc.ext_size
    ended, truncated = [], []

    def walk(prefix, logp, state):
        prev = np.array([prefix[-1] if prefix else 2])
        dist, _, nxt = model.decode_step(state, prev, enc)
        ld = np.log(np.maximum(dist[0], 1e-300))
        for tok in range(V):
            lp = logp + float(ld[tok])
            if tok == END_ID:
                ended.append((tuple(prefix), lp))
            elif len(prefix) + 1 >= max_len:
                truncated.append((tuple(prefix) + (tok,), lp))
            else:
                walk(prefix + [tok], lp, nxt)

    walk([], 0.0, model.initial_state(enc))
    ended.sort(key=lambda e: (-e[1], e[0]))
    truncated.sort(key=lambda e: (-e[1], e[0]))
    return ended, truncated


def test_beam_one_is_greedy():
    model = small_model()
    enc = encode_simple(model, [4, 8, 11], [5, 12, 7], 0)
    (hyp,) = beam_search(model, enc, k=1, n=1, max_len=4)
    state = model.initial_state(enc)
    prev = 2
    greedy = []
    for _ in range(4):
        dist, _, state = model.decode_step(state, np.array([prev]), enc)
        tok = int(np.argmax(dist[0]))
        if tok == END_ID:
            break
        greedy.append(tok)
        prev = tok if tok < model.config.target_vocab_size else 1
    assert list(hyp.tokens) == greedy


def test_beam_covering_width_equals_enumeration():
    model = small_model(seed=5, max_target_len=3)
    enc = encode_simple(model, [4, 8, 11, 6], [5, 12, 7, 14], 1)
    V = model.config.target_vocab_size + 1
    ended, _ = enumerate_all(model, enc, 3)
    hyps = beam_search(model, enc, k=V ** 3, n=V ** 3, max_len=3)
    got = [(h.tokens, h.logp) for h in hyps if h.ended]
    assert len(got) == len(ended)
    for (t1, l1), (t2, l2) in zip(ended, got):
        assert t1 == t2 and abs(l1 - l2) < 1e-9


def test_beam_small_k_is_prefix_consistent_subset():
    model = small_model(seed=9, max_target_len=3)
    enc = encode_simple(model, [4, 8, 11, 6], [5, 12, 7, 14], 1)
    ended, _ = enumerate_all(model, enc, 3)
    order = [t for t, _ in ended]
    scores = dict(ended)
    hyps = beam_search(model, enc, k=4, n=4, max_len=3)
    positions = [order.index(h.tokens) for h in hyps if h.ended]
    assert positions == sorted(positions)
    for h in hyps:
        if h.ended:
            assert abs(scores[h.tokens] - h.logp) < 1e-9


def test_equal_scores_tie_break_lexicographic():
    model = small_model()
    # degenerate generator: uniform distribution, gate shut
    model.params["gen_W"][:] = 0.0
    model.params["gen_b"][:] = 0.0
    model.params["copy_b"][0] = 60.0
    enc = encode_simple(model, [4, 8], [5, 12], 0)
    hyps = beam_search(model, enc, k=3, n=3, max_len=2)
    # every candidate ties at each step, so the pool keeps the
    # lexicographically smallest token sequences
    assert [h.tokens for h in hyps] == [(0, 0), (0, 1), (0, 2)]
    assert len({round(h.logp, 9) for h in hyps}) == 1


def test_beam_validates_arguments():
    model = small_model()
    enc = encode_simple(model, [4], [5], 0)
    with pytest.raises(ValueError):
        beam_search(model, enc, k=0)
    with pytest.raises(ValueError):
        beam_search(model, enc, k=2, n=3)


def test_truncation_fallback_when_nothing_ends():
    model = small_model()
    model.params["gen_b"][END_ID] = -1e3  # END never competitive
    enc = encode_simple(model, [4, 8], [5, 12], 0)
    hyps = beam_search(model, enc, k=3, n=3, max_len=2)
    assert len(hyps) == 3 and all(h.truncated and not h.ended for h in hyps)
    assert all(len(h.tokens) == 2 for h in hyps)


def _vocab():
    vocab, _ = build_vocab(
        Counter({"int": 9, "x": 8, "=": 7, "0": 6, ";": 5, "<|ws:sp:1|>": 4}),
        Counter({"rename": 3}),
        code_size=10,
        comment_size=5,
    )
    return vocab


def _tid(vocab, s):
    tid = vocab.target_index(s)
    assert tid is not None
    return tid


def test_hypothesis_resolution_rejoins_copied_fragments():
    vocab = _vocab()
    ext = ["foo", "Bar"]
    ts = vocab.target_size
    tokens = (ts + 0, ts + 1, _tid(vocab, "<|ws:sp:1|>"), _tid(vocab, "="))
    text, saw_unk = hypothesis_tokens_to_text(tokens, vocab, ext)
    assert text == "fooBar =" and not saw_unk


def test_hypothesis_resolution_failures():
    vocab = _vocab()
    with pytest.raises(ValueError, match="unresolvable"):
        hypothesis_tokens_to_text((vocab.target_size + 5,), vocab, [])
    with pytest.raises(ValueError, match="control"):
        hypothesis_tokens_to_text((0,), vocab, [])


CODE = "\n".join(f"l{i}" for i in range(1, 11))


def _sugg_setup():
    vocab = _vocab()
    sample = EncodedSample("s", [], [], ["foo"], [], 0)
    region = EditRegion("delete", 6, 3, ("<|del|>",))
    return vocab, sample, region


def test_del_hypothesis_shortens_file():
    vocab, sample, region = _sugg_setup()
    del_id = vocab.target_index("<|del|>")
    hyp = Hypothesis((del_id,), -0.1, None, ended=True)
    (sugg,) = hypotheses_to_suggestions([hyp], sample, vocab, CODE, region)
    assert sugg.target_text == "<|del|>"
    assert len(sugg.fixed_file.split("\n")) == 7


def test_gold_tokens_reproduce_code_after():
    vocab = _vocab()
    region = EditRegion("update", 2, 1, ("int x = 0;",))
    sample = EncodedSample("s", [], [], [], [], 0)
    ids = tuple(
        _tid(vocab, s) for s in ("int", "<|ws:sp:1|>", "x", "<|ws:sp:1|>", "=", "<|ws:sp:1|>", "0", ";")
    )
    hyp = Hypothesis(ids, -0.5, None, ended=True)
    (sugg,) = hypotheses_to_suggestions([hyp], sample, vocab, CODE, region)
    lines = sugg.fixed_file.split("\n")
    assert lines[1] == "int x = 0;"
    assert lines[0] == "l1" and lines[2:] == CODE.split("\n")[2:]


def test_patch_locality():
    vocab, sample, _ = _sugg_setup()
    region = EditRegion("update", 5, 1, ("l5",))
    ids = (_tid(vocab, "x"),)
    hyp = Hypothesis(ids, -0.5, None, ended=True)
    (sugg,) = hypotheses_to_suggestions([hyp], sample, vocab, CODE, region)
    before_lines = CODE.split("\n")
    after_lines = sugg.fixed_file.split("\n")
    assert after_lines[4] == "x"
    assert after_lines[:4] == before_lines[:4] and after_lines[5:] == before_lines[5:]


def test_duplicate_texts_merged_keeping_better_score():
    vocab, sample, region = _sugg_setup()
    x = _tid(vocab, "x")
    del_id = vocab.target_index("<|del|>")
    hyps = [
        Hypothesis((x,), -0.2, None, ended=True),
        Hypothesis((x,), -0.9, None, ended=True),
        Hypothesis((del_id,), -1.5, None, ended=True),
    ]
    suggs = hypotheses_to_suggestions(hyps, sample, vocab, CODE, region)
    assert [s.rank for s in suggs] == [1, 2]
    assert suggs[0].target_text == "x" and suggs[0].score == -0.2


def test_unknown_placeholder_demotes_suggestion():
    vocab, sample, region = _sugg_setup()
    x = _tid(vocab, "x")
    hyps = [
        Hypothesis((1,), -0.1, None, ended=True),  # UNK, best raw score
        Hypothesis((x,), -2.0, None, ended=True),
    ]
    suggs = hypotheses_to_suggestions(hyps, sample, vocab, CODE, region)
    assert suggs[0].target_text == "x" and not suggs[0].has_placeholder
    assert suggs[1].has_placeholder and "<|unk|>" in suggs[1].target_text


def test_unresolvable_hypothesis_dropped_and_ranks_compact():
    vocab, sample, region = _sugg_setup()
    x = _tid(vocab, "x")
    hyps = [
        Hypothesis((vocab.target_size + 9,), -0.1, None, ended=True),
        Hypothesis((x,), -1.0, None, ended=True),
    ]
    suggs = hypotheses_to_suggestions(hyps, sample, vocab, CODE, region)
    assert len(suggs) == 1 and suggs[0].rank == 1


def test_soft_mode_suggestions_join_tokens():
    vocab, sample, region = _sugg_setup()
    ids = (_tid(vocab, "int"), _tid(vocab, "x"))
    hyp = Hypothesis(ids, -0.3, None, ended=True)
    (sugg,) = hypotheses_to_suggestions([hyp], sample, vocab, CODE, region, mode="soft")
    assert sugg.target_text == "int x" and sugg.fixed_file == ""


def test_length_normalized_scores():
    h = Hypothesis((5, 6, 7), -3.0, None, ended=True)
    assert h.score() == -3.0
    assert h.score(length_normalize=True) == -1.0
