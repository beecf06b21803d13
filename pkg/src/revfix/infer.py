"""Beam-search decoding and patch assembly.

Beam search expands every live hypothesis by its k best next tokens, prunes
the pool back to k by cumulative log-probability (ties broken by the token-id
sequence), sets finished hypotheses aside, and finally returns the N best
finished ones, falling back to unfinished truncations when fewer than N
finish.  Scores are plain sums of log-probabilities; length normalization is
available behind a flag but off by default.

Decoded hypotheses resolve copy indices back to source surfaces, detokenize
into replacement text, and embed into the reviewed file, producing complete
fixed files that differ from the original only inside the focus span.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .linediff import EditRegion, apply_edit
from .neural.model import DecoderState, EncoderOutput, PointerGenerator
from .seqbuild import DualVocabulary, EncodedSample, END_ID, PAD_ID, START_ID, UNK_ID, UNK
from .tokenizer import DELETE, DetokenizeError, detokenize

log = logging.getLogger(__name__)


@dataclass
class Hypothesis:
    tokens: Tuple[int, ...]  # extended-space ids, END not included
    logp: float
    state: Optional[DecoderState]
    ended: bool = False  # emitted the end token
    truncated: bool = False  # hit max_target_len without ending

    @property
    def finished(self) -> bool:
        return self.ended or self.truncated

    def score(self, length_normalize: bool = False) -> float:
        if length_normalize:
            return self.logp / max(1, len(self.tokens))
        return self.logp


def beam_search(
    model: PointerGenerator,
    enc: EncoderOutput,
    k: int = 10,
    n: int = 10,
    max_len: Optional[int] = None,
    length_normalize: bool = False,
) -> List[Hypothesis]:
    """Decode one encoded sample (batch row 0 of ``enc``)."""
    if k < 1:
        raise ValueError("beam width must be >= 1")
    if n > k:
        raise ValueError("cannot return more hypotheses than the beam width")
    max_len = max_len if max_len is not None else model.config.max_target_len

    # One pooled decoder state covers the whole live set; hypotheses are
    # (tokens, logp) rows into it.
    live_tokens: List[Tuple[int, ...]] = [()]
    live_logp: List[float] = [0.0]
    state = model.initial_state(enc)
    done: List[Hypothesis] = []
    truncated: List[Hypothesis] = []

    for _ in range(max_len):
        if not live_tokens:
            break
        pool_enc = _tile_encoder(enc, len(live_tokens))
        prev = np.array(
            [t[-1] if t else START_ID for t in live_tokens], dtype=np.int64
        )
        dist, _, new_state = model.decode_step(state, prev, pool_enc)
        logdist = np.log(np.maximum(dist, 1e-300))
        width = min(k, logdist.shape[1])
        candidates = []
        for row in range(len(live_tokens)):
            cols = np.argpartition(-logdist[row], width - 1)[:width]
            cols.sort()  # ties inside a row prefer the lower token id
            cols = cols[np.argsort(-logdist[row][cols], kind="stable")]
            base = live_logp[row]
            for col in cols:
                candidates.append((base + float(logdist[row, col]), row, int(col)))
        candidates.sort(key=lambda c: (-c[0], live_tokens[c[1]] + (c[2],)))
        survivors: List[Tuple[Tuple[int, ...], float, int]] = []
        for logp, row, col in candidates[:k]:
            tokens = live_tokens[row]
            if col == END_ID:
                done.append(Hypothesis(tokens, logp, None, ended=True))
            elif len(tokens) + 1 >= max_len:
                truncated.append(
                    Hypothesis(tokens + (col,), logp, None, truncated=True)
                )
            else:
                survivors.append((tokens + (col,), logp, row))
        live_tokens = [t for t, _, _ in survivors]
        live_logp = [lp for _, lp, _ in survivors]
        if survivors:
            state = new_state.select([row for _, _, row in survivors])

    key = lambda h: (-h.score(length_normalize), h.tokens)
    done.sort(key=key)
    if len(done) < n:
        truncated.sort(key=key)
        done = done + truncated
    return done[:n]


def _tile_encoder(enc: EncoderOutput, rows: int) -> EncoderOutput:
    if enc.enc_h.shape[0] == rows:
        return enc
    rep = lambda a: np.repeat(a[:1], rows, axis=0)
    return EncoderOutput(
        enc_h=rep(enc.enc_h),
        keys=rep(enc.keys),
        src_mask=rep(enc.src_mask),
        src_ext=rep(enc.src_ext),
        ext_size=enc.ext_size,
        dec_h0=rep(enc.dec_h0),
        dec_c0=rep(enc.dec_c0),
    )


@dataclass
class FixSuggestion:
    rank: int
    target_text: str
    fixed_file: str
    score: float
    has_placeholder: bool = False

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "score": round(self.score, 6),
            "target_text": self.target_text,
            "has_placeholder": self.has_placeholder,
        }


def _resolve_surfaces(
    tokens: Sequence[int], vocab: DualVocabulary, ext_surfaces: Sequence[str]
) -> Tuple[List[str], bool]:
    surfaces = []
    saw_unk = False
    for tid in tokens:
        if tid < vocab.target_size:
            if tid in (PAD_ID, START_ID, END_ID):
                raise ValueError(f"control token {tid} inside hypothesis")
            if tid == UNK_ID:
                saw_unk = True
                surfaces.append(UNK)
                continue
            surfaces.append(vocab.surface(tid))
        else:
            j = tid - vocab.target_size
            if j >= len(ext_surfaces):
                raise ValueError(f"unresolvable copy index {tid}")
            surfaces.append(ext_surfaces[j])
    return surfaces, saw_unk


def hypothesis_tokens_to_text(
    tokens: Sequence[int], vocab: DualVocabulary, ext_surfaces: Sequence[str]
) -> Tuple[str, bool]:
    """Resolve extended ids to surfaces and detokenize.

    Returns (text, saw_unknown).  Failures (unresolvable copy index, control
    tokens, malformed whitespace tokens) raise ValueError so callers can drop
    the hypothesis.
    """
    surfaces, saw_unk = _resolve_surfaces(tokens, vocab, ext_surfaces)
    try:
        return detokenize(surfaces), saw_unk
    except DetokenizeError as e:
        raise ValueError(str(e)) from e


def hypotheses_to_suggestions(
    hypotheses: Sequence[Hypothesis],
    sample: EncodedSample,
    vocab: DualVocabulary,
    code_before: str,
    region: EditRegion,
    merge_duplicates: bool = True,
    limit: Optional[int] = None,
    length_normalize: bool = False,
    mode: str = "hard",
) -> List[FixSuggestion]:
    """Ranked fix suggestions from finished hypotheses.

    Unresolvable hypotheses are dropped (remaining ranks compact); duplicate
    target texts keep the better score; suggestions containing the visible
    unknown placeholder sort below every fully resolved one.  Soft-mode runs
    have no detokenizer, so their suggestion text is the space-joined token
    sequence and no fixed file is assembled.
    """
    resolved = []
    for hyp in hypotheses:
        try:
            if mode == "soft":
                surfaces, saw_unk = _resolve_surfaces(hyp.tokens, vocab, sample.ext_surfaces)
                text = " ".join(surfaces)
            else:
                text, saw_unk = hypothesis_tokens_to_text(
                    hyp.tokens, vocab, sample.ext_surfaces
                )
        except ValueError as e:
            log.debug("dropping hypothesis for %s: %s", sample.sample_id, e)
            continue
        resolved.append((saw_unk, -hyp.score(length_normalize), hyp, text))
    resolved.sort(key=lambda r: (r[0], r[1], r[2].tokens))
    out: List[FixSuggestion] = []
    seen: Dict[str, int] = {}
    for saw_unk, _, hyp, text in resolved:
        if merge_duplicates and text in seen:
            continue
        seen[text] = 1
        if mode == "soft":
            fixed = ""
        else:
            target_lines = tuple(text.split("\n")) if text != DELETE else (DELETE,)
            patched_region = EditRegion(
                region.kind, region.focus_start, region.focus_len, target_lines
            )
            fixed = apply_edit(code_before, patched_region)
        out.append(
            FixSuggestion(
                rank=len(out) + 1,
                target_text=text,
                fixed_file=fixed,
                score=hyp.score(length_normalize),
                has_placeholder=saw_unk,
            )
        )
        if limit is not None and len(out) >= limit:
            break
    return out
