"""Line-level diffing and review-comment change localization.

Files are treated as the list of segments produced by ``text.split("\\n")``,
so CRLF endings and missing trailing newlines survive untouched inside the
segments and ``"\\n".join`` reconstructs the exact bytes.  All line numbers
are 1-based over those segments.

A review comment is paired with the nearest diff hunk whose anchor line lies
within a fixed window (default 5 lines); samples whose nearest change starts
outside the window are discarded.  The hunk is then turned into an edit
region: a focus span in the old file plus the target text that replaces it,
with a lone ``<|del|>`` marking pure deletion.
"""

from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .tokenizer import DELETE

NEAR_WINDOW = 5  # max |review_line - hunk anchor| for a usable sample

INSERT = "insert"
DELETE_KIND = "delete"
UPDATE = "update"
INSERT_AT_HEAD = "insert_at_head"


class ApplyError(ValueError):
    """An edit region does not fit the file it is applied to."""


@dataclass(frozen=True, slots=True)
class Span:
    start: int  # 1-based first line; for zero-length spans, the preceding line
    length: int


@dataclass(frozen=True, slots=True)
class LineDiffHunk:
    kind: str  # insert | delete | update
    before_span: Span
    after_span: Span

    @property
    def anchor(self) -> int:
        """Line of the old file the hunk hangs off (insertion point's
        preceding line for inserts, first changed line otherwise)."""
        return self.before_span.start


@dataclass(frozen=True)
class EditRegion:
    kind: str  # insert | delete | update | insert_at_head
    focus_start: int
    focus_len: int
    target_lines: Tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "focus_start": self.focus_start,
            "focus_len": self.focus_len,
            "target_lines": list(self.target_lines),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EditRegion":
        return cls(d["kind"], d["focus_start"], d["focus_len"], tuple(d["target_lines"]))


def _myers_ops(a: Sequence[int], b: Sequence[int]) -> List[Tuple[str, int, int]]:
    """Minimal edit script via the greedy O(ND) shortest-edit algorithm.

    Returns ops in order: ("equal"|"del"|"ins", before_index, after_index),
    one op per line, indices 0-based.
    """
    n, m = len(a), len(b)
    v = {1: 0}
    trace = []
    d_end = None
    for d in range(n + m + 1):
        trace.append(dict(v))
        for k in range(-d, d + 1, 2):
            if k == -d or (k != d and v.get(k - 1, -1) < v.get(k + 1, -1)):
                x = v[k + 1]
            else:
                x = v[k - 1] + 1
            y = x - k
            while x < n and y < m and a[x] == b[y]:
                x += 1
                y += 1
            v[k] = x
            if x >= n and y >= m:
                d_end = d
                break
        if d_end is not None:
            break
    assert d_end is not None

    ops: List[Tuple[str, int, int]] = []
    x, y = n, m
    for d in range(d_end, -1, -1):
        vprev = trace[d]
        k = x - y
        if d == 0:
            px, py = 0, 0
        else:
            if k == -d or (k != d and vprev.get(k - 1, -1) < vprev.get(k + 1, -1)):
                pk = k + 1
            else:
                pk = k - 1
            px = vprev[pk]
            py = px - pk
        # trailing diagonal of this step
        while x > px and y > py:
            x -= 1
            y -= 1
            ops.append(("equal", x, y))
        if d > 0:
            if x == px:  # vertical move: insertion of b[py]
                y -= 1
                ops.append(("ins", x, y))
            else:  # horizontal move: deletion of a[px]
                x -= 1
                ops.append(("del", x, y))
    ops.reverse()
    return ops


def _intern_lines(*line_lists: Sequence[str]) -> List[List[int]]:
    table: Dict[str, int] = {}
    out = []
    for lines in line_lists:
        ids = []
        for line in lines:
            ids.append(table.setdefault(line, len(table)))
        out.append(ids)
    return out


def line_diff(before: str, after: str) -> List[LineDiffHunk]:
    """Minimal line edit script between two texts, grouped into hunks."""
    a = before.split("\n")
    b = after.split("\n")
    ia, ib = _intern_lines(a, b)
    ops = _myers_ops(ia, ib)

    hunks: List[LineDiffHunk] = []
    i = 0
    bpos = 0  # lines of `before` consumed so far
    apos = 0
    while i < len(ops):
        op = ops[i][0]
        if op == "equal":
            bpos += 1
            apos += 1
            i += 1
            continue
        # group a maximal run of del/ins ops
        dels = 0
        inss = 0
        j = i
        while j < len(ops) and ops[j][0] != "equal":
            if ops[j][0] == "del":
                dels += 1
            else:
                inss += 1
            j += 1
        if dels and inss:
            kind = UPDATE
        elif dels:
            kind = DELETE_KIND
        else:
            kind = INSERT
        before_span = Span(bpos + 1, dels) if dels else Span(bpos, 0)
        after_span = Span(apos + 1, inss) if inss else Span(apos, 0)
        hunks.append(LineDiffHunk(kind, before_span, after_span))
        bpos += dels
        apos += inss
        i = j
    return hunks


def apply_hunks(before: str, after: str, hunks: Sequence[LineDiffHunk]) -> str:
    """Replay hunks (in reverse order) onto ``before`` using lines of
    ``after``; used as the diff round-trip check."""
    src = before.split("\n")
    dst = after.split("\n")
    out = list(src)
    for h in sorted(hunks, key=lambda h: h.before_span.start, reverse=True):
        bs, bl = h.before_span.start, h.before_span.length
        asp, al = h.after_span.start, h.after_span.length
        repl = dst[asp - 1 : asp - 1 + al] if al else []
        lo = bs - 1 if bl else bs
        out[lo : lo + bl] = repl
    return "\n".join(out)


def select_relevant_hunk(
    hunks: Sequence[LineDiffHunk], review_line: int, window: int = NEAR_WINDOW
) -> Optional[LineDiffHunk]:
    """Nearest hunk to the review line, or None when the nearest anchor is
    more than ``window`` lines away.  Equal distances prefer the hunk at or
    after the review line (reviewers comment above the code they discuss)."""
    best = None
    best_key = None
    for h in hunks:
        dist = abs(h.anchor - review_line)
        key = (dist, 0 if h.anchor >= review_line else 1, h.anchor)
        if best_key is None or key < best_key:
            best, best_key = h, key
    if best is None or best_key[0] > window:
        return None
    return best


def hunk_distance(hunk: LineDiffHunk, review_line: int) -> int:
    return abs(hunk.anchor - review_line)


def extract_edit_region(hunk: LineDiffHunk, before: str, after: str) -> EditRegion:
    """Turn a hunk into (focus span in `before`, replacement target lines).

    update: focus = changed lines, target = their replacements.
    delete: focus = removed lines, target = the <|del|> marker.
    insert: focus = the line preceding the insertion point, target = that
    line followed by the inserted lines; an insertion before line 1 has no
    preceding line and becomes an ``insert_at_head`` region with an empty
    focus.
    """
    a = before.split("\n")
    b = after.split("\n")
    bs, bl = hunk.before_span.start, hunk.before_span.length
    asp, al = hunk.after_span.start, hunk.after_span.length
    if hunk.kind == UPDATE:
        return EditRegion(UPDATE, bs, bl, tuple(b[asp - 1 : asp - 1 + al]))
    if hunk.kind == DELETE_KIND:
        return EditRegion(DELETE_KIND, bs, bl, (DELETE,))
    if hunk.kind == INSERT:
        inserted = tuple(b[asp - 1 : asp - 1 + al])
        if bs == 0:
            return EditRegion(INSERT_AT_HEAD, 1, 0, inserted)
        return EditRegion(INSERT, bs, 1, (a[bs - 1],) + inserted)
    raise ValueError(f"unknown hunk kind: {hunk.kind!r}")


def apply_edit(before: str, region: EditRegion) -> str:
    """Replace the focus lines with the target lines (``<|del|>`` removes
    them); every other line is untouched."""
    lines = before.split("\n")
    fs, fl = region.focus_start, region.focus_len
    if fs < 1 or fs - 1 + fl > len(lines) or (fl == 0 and fs - 1 > len(lines)):
        raise ApplyError(
            f"focus ({fs},{fl}) out of bounds for a {len(lines)}-line file"
        )
    if list(region.target_lines) == [DELETE]:
        repl: List[str] = []
    else:
        repl = list(region.target_lines)
    out = lines[: fs - 1] + repl + lines[fs - 1 + fl :]
    return "\n".join(out)


def distance_histogram(distances: Sequence[int]) -> Dict[int, int]:
    """Report-only histogram of review-line-to-change distances."""
    return dict(sorted(Counter(distances).items()))
