"""Model-ready sequence construction.

Turns a localized triple into framed source/target token sequences:

    <|startcomment|> comment ... <|endcomment|>          (cc variant only)
    <|startcode|> context <|startfocus|> focus <|endfocus|> context <|endcode|>

The code context around the focus honors a token budget: the whole enclosing
function when it fits, otherwise half the budget on each side of the focus
within the function (or within the file for focus in global scope).  Also
owns the dual code/comment vocabulary and the per-sample extended ids that
let the decoder copy out-of-vocabulary source tokens.
"""

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .linediff import EditRegion, INSERT_AT_HEAD
from .storage import atomic_write_text
from .tokenizer import (
    DELETE,
    END_CODE,
    END_COMMENT,
    END_FOCUS,
    MARKERS,
    START_CODE,
    START_COMMENT,
    START_FOCUS,
    tokenize,
)

PAD = "<|pad|>"
UNK = "<|unk|>"
START = "<|start|>"
END = "<|end|>"

# Fixed index layout: specials first, then code vocabulary, then comment
# vocabulary (source side only).
SPECIALS = (
    PAD,
    UNK,
    START,
    END,
    START_FOCUS,
    END_FOCUS,
    START_CODE,
    END_CODE,
    START_COMMENT,
    END_COMMENT,
    DELETE,
)
PAD_ID, UNK_ID, START_ID, END_ID = 0, 1, 2, 3


class SampleRejected(Exception):
    """A sample cannot be framed; carries a machine-readable reason."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def function_token_regions(tokens: Sequence[str]) -> List[Tuple[int, int]]:
    """Token index ranges of function bodies (incl. signatures).

    A function body is a ``{...}`` block opened directly inside a type body
    (brace depth 1) whose statement saw a closed ``(...)`` group, which
    covers methods and constructors.  The scan is token-based and
    string-literal-blind; anything ambiguous simply falls back to
    file-global context selection.
    """
    regions: List[Tuple[int, int]] = []
    depth = 0
    paren_depth = 0
    paren_seen = False
    stmt_start = 0
    stack: List[Tuple[bool, int]] = []
    for i, tok in enumerate(tokens):
        if tok == "(":
            paren_depth += 1
        elif tok == ")":
            if paren_depth > 0:
                paren_depth -= 1
                if paren_depth == 0 and depth == 1:
                    paren_seen = True
        elif paren_depth == 0:
            if tok == ";":
                if depth == 1:
                    stmt_start = i + 1
                    paren_seen = False
            elif tok == "{":
                is_function = depth == 1 and paren_seen
                stack.append((is_function, stmt_start))
                depth += 1
                if depth == 1:
                    stmt_start = i + 1
                paren_seen = False
            elif tok == "}":
                if depth > 0:
                    depth -= 1
                    is_function, start = stack.pop()
                    if is_function and depth == 1:
                        regions.append((start, i + 1))
                    if depth == 1:
                        stmt_start = i + 1
                        paren_seen = False
    return regions


def build_context(
    code_tokens: Sequence[str],
    focus_span: Tuple[int, int],
    budget: int = 400,
    regions: Optional[List[Tuple[int, int]]] = None,
) -> List[str]:
    """Window ``code_tokens`` around a focus token span and wrap the focus
    with markers.  The markers are excluded from the budget.

    Rules: (1) enclosing function fits the budget -> whole function; (2) it
    does not -> up to budget/2 tokens before the focus plus budget/2 from the
    focus onward, inside the function; (3) no enclosing function -> the same
    half split over the whole file.  The focus itself is never truncated;
    a focus longer than the budget rejects the sample.
    """
    fs, fe = focus_span
    if not (0 <= fs <= fe <= len(code_tokens)):
        raise ValueError(f"focus span {focus_span} outside token stream")
    flen = fe - fs
    if flen > budget:
        raise SampleRejected("focus-too-large")
    if regions is None:
        regions = function_token_regions(code_tokens)
    enclosing = None
    for rs, re_ in regions:
        if rs <= fs and fe <= re_:
            enclosing = (rs, re_)
            break
    if enclosing is not None and enclosing[1] - enclosing[0] <= budget:
        lo, hi = enclosing
    else:
        scope_lo, scope_hi = enclosing if enclosing is not None else (0, len(code_tokens))
        half = budget // 2
        hi = min(scope_hi, fs + max(half, flen))
        before_budget = min(half, budget - (hi - fs))
        lo = max(scope_lo, fs - before_budget)
    return (
        list(code_tokens[lo:fs])
        + [START_FOCUS]
        + list(code_tokens[fs:fe])
        + [END_FOCUS]
        + list(code_tokens[fe:hi])
    )


def frame_sample(
    context_tokens: Sequence[str],
    comment_tokens: Optional[Sequence[str]],
    variant: str,
    comment_limit: int = 200,
) -> List[str]:
    """Concatenate comment and code regions into one marked-up source stream.

    The cc variant keeps the first ``comment_limit`` comment tokens; the c
    variant ignores the comment entirely.
    """
    if variant == "c":
        return [START_CODE] + list(context_tokens) + [END_CODE]
    if variant != "cc":
        raise ValueError(f"unknown variant: {variant!r}")
    if comment_tokens is None:
        raise ValueError("cc variant needs comment tokens")
    head = list(comment_tokens[:comment_limit])
    return (
        [START_COMMENT]
        + head
        + [END_COMMENT]
        + [START_CODE]
        + list(context_tokens)
        + [END_CODE]
    )


def build_target(target_lines: Sequence[str], limit: int = 100, mode: str = "hard") -> List[str]:
    """Tokenized replacement text; a pure deletion is the single <|del|>."""
    if list(target_lines) == [DELETE]:
        return [DELETE]
    toks = [t.text for t in tokenize("\n".join(target_lines), mode)]
    if len(toks) > limit:
        raise SampleRejected("target-too-large")
    return toks


def focus_chunks(code_before: str, region: EditRegion) -> Tuple[str, str, str]:
    """Split a file into (prefix, focus text, suffix) around an edit region."""
    segments = code_before.split("\n")
    fs, fl = region.focus_start, region.focus_len
    start = sum(len(s) + 1 for s in segments[: fs - 1])
    focus = "\n".join(segments[fs - 1 : fs - 1 + fl])
    return code_before[:start], focus, code_before[start + len(focus) :]


@dataclass(frozen=True)
class TrainingSample:
    sample_id: str
    variant: str
    source_tokens: Tuple[str, ...]
    target_tokens: Tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "variant": self.variant,
            "source_tokens": list(self.source_tokens),
            "target_tokens": list(self.target_tokens),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingSample":
        return cls(
            d["sample_id"], d["variant"], tuple(d["source_tokens"]), tuple(d["target_tokens"])
        )

    def comment_region(self) -> List[str]:
        return _region(self.source_tokens, START_COMMENT, END_COMMENT)

    def code_region(self) -> List[str]:
        return _region(self.source_tokens, START_CODE, END_CODE)


def _region(tokens: Sequence[str], start: str, end: str) -> List[str]:
    try:
        i = tokens.index(start)
        j = tokens.index(end)
    except ValueError:
        return []
    return [t for t in tokens[i + 1 : j] if t not in MARKERS]


def build_training_sample(
    sample_id: str,
    code_before: str,
    review_comment: str,
    region: EditRegion,
    variant: str,
    mode: str = "hard",
    window: int = 400,
    comment_limit: int = 200,
    target_limit: int = 100,
    include_insert_at_head: bool = False,
) -> TrainingSample:
    """Full per-sample construction; raises SampleRejected with a reason.

    The framed source obeys the hard cap of ``window`` tokens (c) or
    ``window + comment_limit`` tokens (cc) including every marker, so the
    code context budget is the window minus the framing overhead.
    """
    if region.kind == INSERT_AT_HEAD and not include_insert_at_head:
        raise SampleRejected("insert-at-head")
    overhead = 6 if variant == "cc" else 4
    prefix, focus, suffix = focus_chunks(code_before, region)
    pre_toks = [t.text for t in tokenize(prefix, mode)]
    focus_toks = [t.text for t in tokenize(focus, mode)]
    suf_toks = [t.text for t in tokenize(suffix, mode)]
    code_tokens = pre_toks + focus_toks + suf_toks
    span = (len(pre_toks), len(pre_toks) + len(focus_toks))
    context = build_context(code_tokens, span, budget=window - overhead)
    comment_tokens = None
    if variant == "cc":
        comment_tokens = [t.text for t in tokenize(review_comment, mode)]
    source = frame_sample(context, comment_tokens, variant, comment_limit)
    cap = window + comment_limit if variant == "cc" else window
    assert len(source) <= cap, f"framed source {len(source)} exceeds cap {cap}"
    target = build_target(region.target_lines, target_limit, mode)
    return TrainingSample(sample_id, variant, tuple(source), tuple(target))


# ---------------------------------------------------------------------------
# Dual vocabulary


@dataclass
class DualVocabulary:
    code: List[str]
    comment: List[str]

    def __post_init__(self):
        self._target_index: Dict[str, int] = {}
        for i, s in enumerate(SPECIALS):
            self._target_index[s] = i
        for i, s in enumerate(self.code):
            self._target_index[s] = len(SPECIALS) + i
        self._comment_index: Dict[str, int] = {}
        base = len(SPECIALS) + len(self.code)
        for i, s in enumerate(self.comment):
            self._comment_index[s] = base + i
        self._surfaces = list(SPECIALS) + list(self.code) + list(self.comment)

    @property
    def target_size(self) -> int:
        return len(SPECIALS) + len(self.code)

    def source_size(self, variant: str) -> int:
        return self.target_size + (len(self.comment) if variant == "cc" else 0)

    def source_index(self, surface: str, variant: str) -> Optional[int]:
        idx = self._target_index.get(surface)
        if idx is not None:
            return idx
        if variant == "cc":
            return self._comment_index.get(surface)
        return None

    def target_index(self, surface: str) -> Optional[int]:
        return self._target_index.get(surface)

    def surface(self, idx: int) -> str:
        return self._surfaces[idx]

    def save(self, path: Path) -> None:
        header = {
            "code_size": len(self.code),
            "comment_size": len(self.comment),
            "specials": {s: i for i, s in enumerate(SPECIALS)},
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines.extend(self.code)
        lines.extend(self.comment)
        atomic_write_text(Path(path), "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: Path) -> "DualVocabulary":
        raw = Path(path).read_text(encoding="utf-8").split("\n")
        header = json.loads(raw[0])
        n_code = header["code_size"]
        n_comment = header["comment_size"]
        body = raw[1 : 1 + n_code + n_comment]
        if len(body) != n_code + n_comment:
            raise ValueError(f"vocabulary file {path} is truncated")
        return cls(code=body[:n_code], comment=body[n_code:])


def _top_surfaces(counts: Counter, size: int, exclude=frozenset()) -> List[str]:
    ranked = sorted(
        (s for s in counts if s not in exclude),
        key=lambda s: (-counts[s], s),
    )
    return ranked[:size]


@dataclass
class VocabReport:
    code_total: int
    code_covered: int
    comment_total: int
    comment_covered: int

    def to_dict(self) -> dict:
        def pct(c, t):
            return round(100.0 * c / t, 2) if t else 100.0

        return {
            "code_total": self.code_total,
            "code_covered": self.code_covered,
            "code_coverage_pct": pct(self.code_covered, self.code_total),
            "comment_total": self.comment_total,
            "comment_covered": self.comment_covered,
            "comment_coverage_pct": pct(self.comment_covered, self.comment_total),
        }


def collect_token_counts(samples: Iterable[TrainingSample]) -> Tuple[Counter, Counter]:
    """Code-side counts come from the code region plus the target; comment
    side from the comment region.  Markers and other specials never count."""
    code_counts: Counter = Counter()
    comment_counts: Counter = Counter()
    specials = set(SPECIALS)
    for sample in samples:
        for t in sample.code_region():
            if t not in specials:
                code_counts[t] += 1
        for t in sample.target_tokens:
            if t not in specials:
                code_counts[t] += 1
        for t in sample.comment_region():
            if t not in specials:
                comment_counts[t] += 1
    return code_counts, comment_counts


def build_vocab(
    code_counts: Counter,
    comment_counts: Counter,
    code_size: int = 2000,
    comment_size: int = 8000,
) -> Tuple[DualVocabulary, VocabReport]:
    """Frequency-ranked dual vocabulary (ties broken lexicographically).

    A surface frequent on both sides is assigned once, on the code side.
    """
    code = _top_surfaces(code_counts, code_size)
    comment = _top_surfaces(comment_counts, comment_size, exclude=set(code))
    vocab = DualVocabulary(code=code, comment=comment)
    in_source = set(code) | set(comment)
    report = VocabReport(
        code_total=sum(code_counts.values()),
        code_covered=sum(c for s, c in code_counts.items() if s in set(code)),
        comment_total=sum(comment_counts.values()),
        comment_covered=sum(c for s, c in comment_counts.items() if s in in_source),
    )
    return vocab, report


# ---------------------------------------------------------------------------
# Numericalization with per-sample extended vocabulary


@dataclass
class EncodedSample:
    sample_id: str
    src_ids: List[int]  # source-vocab ids (UNK for out-of-vocab)
    src_ext_ids: List[int]  # target vocab id, or target_size+copy index
    ext_surfaces: List[str]  # copy index -> surface
    tgt_ext_ids: List[int]  # gold target in the extended space
    unreachable_targets: int  # gold tokens mapped to UNK


def encode_sample(sample: TrainingSample, vocab: DualVocabulary) -> EncodedSample:
    """Ids for one sample.

    Every distinct source surface outside the *target* vocabulary gets a
    temporary copy index so the decoder can emit it; that includes
    comment-vocabulary words, which are encodable but not generatable.
    """
    src_ids: List[int] = []
    src_ext_ids: List[int] = []
    ext_surfaces: List[str] = []
    ext_map: Dict[str, int] = {}
    for s in sample.source_tokens:
        sid = vocab.source_index(s, sample.variant)
        src_ids.append(sid if sid is not None else UNK_ID)
        tid = vocab.target_index(s)
        if tid is None:
            if s not in ext_map:
                ext_map[s] = len(ext_surfaces)
                ext_surfaces.append(s)
            src_ext_ids.append(vocab.target_size + ext_map[s])
        else:
            src_ext_ids.append(tid)
    tgt: List[int] = []
    unreachable = 0
    for s in sample.target_tokens:
        tid = vocab.target_index(s)
        if tid is not None:
            tgt.append(tid)
        elif s in ext_map:
            tgt.append(vocab.target_size + ext_map[s])
        else:
            tgt.append(UNK_ID)
            unreachable += 1
    return EncodedSample(
        sample_id=sample.sample_id,
        src_ids=src_ids,
        src_ext_ids=src_ext_ids,
        ext_surfaces=ext_surfaces,
        tgt_ext_ids=tgt,
        unreachable_targets=unreachable,
    )


def extended_vocab_map(sample: TrainingSample, vocab: DualVocabulary) -> Dict[str, int]:
    """Surface -> temporary copy id for source surfaces the generator cannot
    produce (exactly the per-sample extension of the target vocabulary)."""
    enc = encode_sample(sample, vocab)
    return {s: vocab.target_size + i for i, s in enumerate(enc.ext_surfaces)}
