"""Clean review triples out of raw mined events.

Three responsibilities: drop boilerplate review comments that carry no
signal, deduplicate identical (code before, comment, code after) tuples, and
cut a leakage-free chronological train/test split per project.
"""

import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Sequence, Tuple

TAXONOMY_LABELS = ("bug-fix", "refactoring", "stylistic", "non-code", "unlabeled")

# Boilerplate comments that never carry actionable signal.  Matching is exact
# after normalization (lowercase, trim, strip terminal punctuation), never
# substring: "same as above, thanks" is noise but "thanks, but also fix the
# null check" is not.
NOISE_COMMENTS = frozenset(
    [
        "same as above",
        "same as the above",
        "same here",
        "see comment above",
        "same question here",
        "perhaps this as well",
        "as discussed",
        "new comment as above",
        "same",
        "see above",
        "similar to above",
        "same concern as above",
        "same comment as above",
        "and here",
        "here too",
        "same comments as above",
        "same thing",
        "same complaint here",
        "same as below",
        "nit",
        "ditto",
        "thanks",
        "fixed with the next upload",
        "uh no",
        "nice",
        "nice thanks",
        "love it",
        "ok, fixed with next update",
        "yes, you are right",
        "done",
        "likewise",
        "i see",
        "and again",
    ]
)

_TERMINAL_PUNCT = ".,;:!?…"
_PLAIN_CHARS = frozenset("abcdefghijklmnopqrstuvwxyz ,.'!?")


def normalize_comment(comment: str) -> str:
    s = comment.strip().lower()
    while s and (s[-1] in _TERMINAL_PUNCT or s[-1].isspace()):
        s = s[:-1]
    return s


def is_noise(comment: str) -> bool:
    """True when the comment should be discarded as boilerplate.

    A normalized comment containing any character outside the plain
    conversational set (so: digits, underscores, braces, ...) looks like it
    names code and is always kept.
    """
    s = normalize_comment(comment)
    if not s:
        return True
    if any(ch not in _PLAIN_CHARS for ch in s):
        return False
    return s in NOISE_COMMENTS


@dataclass(frozen=True)
class ReviewTriple:
    project: str
    code_before: str
    code_after: str
    review_comment: str
    review_line: int
    timestamp: int
    change_id: str = ""  # breaks timestamp ties in the split
    taxonomy_label: str = "unlabeled"

    @property
    def triple_id(self) -> str:
        h = hashlib.sha256()
        for part in (
            self.project,
            self.code_before,
            self.review_comment,
            self.code_after,
            str(self.review_line),
            str(self.timestamp),
        ):
            h.update(part.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "triple_id": self.triple_id,
            "project": self.project,
            "code_before": self.code_before,
            "code_after": self.code_after,
            "review_comment": self.review_comment,
            "review_line": self.review_line,
            "timestamp": self.timestamp,
            "change_id": self.change_id,
            "taxonomy_label": self.taxonomy_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewTriple":
        return cls(
            project=d["project"],
            code_before=d["code_before"],
            code_after=d["code_after"],
            review_comment=d["review_comment"],
            review_line=d["review_line"],
            timestamp=d["timestamp"],
            change_id=d.get("change_id", ""),
            taxonomy_label=d.get("taxonomy_label", "unlabeled"),
        )


@dataclass
class ExtractReport:
    kept: int = 0
    no_change: int = 0
    noise: int = 0
    empty_comment: int = 0

    def to_dict(self) -> dict:
        return {
            "kept": self.kept,
            "no_change": self.no_change,
            "noise": self.noise,
            "empty_comment": self.empty_comment,
        }


def extract_triples(events: Iterable[dict]) -> Tuple[List[ReviewTriple], ExtractReport]:
    """Raw mined events -> candidate triples (noise and no-change dropped)."""
    report = ExtractReport()
    out = []
    for ev in events:
        if ev.get("no_change") or ev["file_before"] == ev["file_after"]:
            report.no_change += 1
            continue
        comment = ev["comment_text"]
        if not comment.strip():
            report.empty_comment += 1
            continue
        if is_noise(comment):
            report.noise += 1
            continue
        out.append(
            ReviewTriple(
                project=ev["project"],
                code_before=ev["file_before"],
                code_after=ev["file_after"],
                review_comment=comment,
                review_line=ev["comment_line"],
                timestamp=ev["timestamp"],
                change_id=ev.get("change_id", ""),
            )
        )
        report.kept += 1
    return out, report


def dedup(triples: Sequence[ReviewTriple]) -> List[ReviewTriple]:
    """Keep the first occurrence (by timestamp, then input order) of each
    identical (code_before, review_comment, code_after) tuple."""
    winners: Dict[Tuple[str, str, str], Tuple[int, int]] = {}
    for idx, t in enumerate(triples):
        key = (t.code_before, t.review_comment, t.code_after)
        cand = (t.timestamp, idx)
        if key not in winners or cand < winners[key]:
            winners[key] = cand
    keep = {idx for (_, idx) in winners.values()}
    return [t for i, t in enumerate(triples) if i in keep]


@dataclass
class SplitManifest:
    train: List[str]
    test: List[str]
    per_project_counts: Dict[str, Tuple[int, int]]  # project -> (train, test)

    def to_dict(self) -> dict:
        return {
            "train": self.train,
            "test": self.test,
            "per_project_counts": {
                p: {"train": tr, "test": te}
                for p, (tr, te) in sorted(self.per_project_counts.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitManifest":
        return cls(
            train=list(d["train"]),
            test=list(d["test"]),
            per_project_counts={
                p: (v["train"], v["test"]) for p, v in d["per_project_counts"].items()
            },
        )


def chronological_split(
    triples: Sequence[ReviewTriple], test_fraction: float = 0.05
) -> SplitManifest:
    """Most recent ceil(fraction * n) triples of each project go to test.

    Deterministic for any input order: per project, triples are totally
    ordered by (timestamp desc, change_id, triple_id).
    """
    frac = Fraction(str(test_fraction))
    by_project: Dict[str, List[ReviewTriple]] = {}
    for t in triples:
        by_project.setdefault(t.project, []).append(t)

    train: List[str] = []
    test: List[str] = []
    counts: Dict[str, Tuple[int, int]] = {}
    for project in sorted(by_project):
        rows = sorted(
            by_project[project],
            key=lambda t: (-t.timestamp, t.change_id, t.triple_id),
        )
        n = len(rows)
        if n == 0:
            continue
        n_test = math.ceil(frac * n)
        test.extend(t.triple_id for t in rows[:n_test])
        train.extend(t.triple_id for t in rows[n_test:])
        counts[project] = (n - n_test, n_test)
    return SplitManifest(train=train, test=test, per_project_counts=counts)
