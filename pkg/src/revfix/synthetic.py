"""Seeded generators for demo fixtures and test corpora.

Everything here is deterministic in the seed, so committed artifacts
(recorded review-server responses, the tokenizer stress corpus, golden
manifests) can be regenerated bit-for-bit by the scripts in ``scripts/``.
"""

import json
from pathlib import Path
from typing import Dict, List, Tuple
from urllib.parse import quote

import numpy as np

from .corpus import ReviewTriple

_ATOMS = [
    "account", "parse", "buffer", "cache", "token", "index", "handler", "stream",
    "config", "value", "count", "remote", "local", "client", "server", "widget",
    "update", "delete", "insert", "request", "response", "message", "filter",
    "batch", "order", "field", "group", "input", "output", "status", "worker",
    "queue", "state", "event", "item", "node", "graph", "map", "list", "entry",
    "policy", "limit", "retry", "audit", "merge", "split", "flush", "probe",
]
_ACRONYMS = ["HTTP", "XML", "JSON", "URL", "API", "UUID", "SQL", "IO", "DNS"]
_TYPES = ["int", "long", "String", "boolean", "double", "Object"]
_STRING_WORDS = [
    "missing", "value", "for", "key", "unexpected", "state", "retrying", "connection",
    "closed", "input", "must", "not", "be", "null", "timeout", "while", "reading",
]
_COMMENT_WORDS = [
    "keeps", "track", "of", "the", "pending", "entries", "until", "they", "are",
    "flushed", "downstream", "callers", "must", "hold", "lock", "before", "use",
]
_UNICODE_ATOMS = ["über", "müll", "péage", "λambda", "naïve"]


def _camel(rng: np.random.Generator, n_parts: int, unicode_ok: bool = False) -> str:
    pool = _ATOMS + (_UNICODE_ATOMS if unicode_ok else [])
    parts = [pool[rng.integers(len(pool))] for _ in range(n_parts)]
    if rng.random() < 0.15:
        parts.insert(1 if len(parts) > 1 else 0, _ACRONYMS[rng.integers(len(_ACRONYMS))])
    word = parts[0] + "".join(p if p in _ACRONYMS else p.capitalize() for p in parts[1:])
    if rng.random() < 0.1:
        word += str(rng.integers(10))
    return word


def _snake(rng: np.random.Generator, n_parts: int) -> str:
    return "_".join(_ATOMS[rng.integers(len(_ATOMS))] for _ in range(n_parts))


def _identifier(rng: np.random.Generator, unicode_ok: bool = False) -> str:
    n = int(rng.integers(2, 5))
    if rng.random() < 0.2:
        return _snake(rng, n)
    return _camel(rng, n, unicode_ok)


def _string_literal(rng: np.random.Generator) -> str:
    n = int(rng.integers(1, 5))
    words = [_STRING_WORDS[rng.integers(len(_STRING_WORDS))] for _ in range(n)]
    body = " ".join(words)
    if rng.random() < 0.2:
        body += " {}"
    if rng.random() < 0.15:
        body += "\\n"
    return '"' + body + '"'


def java_file(rng: np.random.Generator, unicode_ok: bool = False) -> str:
    """One synthetic Java-ish source file with varied formatting."""
    indent_unit = ["    ", "\t", "  "][rng.integers(3)]
    crlf = rng.random() < 0.1
    trailing_newline = rng.random() > 0.1
    lines: List[str] = []

    pkg = ".".join(_ATOMS[rng.integers(len(_ATOMS))] for _ in range(3))
    lines.append(f"package {pkg};")
    lines.append("")
    for _ in range(int(rng.integers(0, 3))):
        lines.append(f"import java.util.{_camel(rng, 1).capitalize()};")
    lines.append("")
    if rng.random() < 0.5:
        lines.append("/**")
        words = [_COMMENT_WORDS[rng.integers(len(_COMMENT_WORDS))] for _ in range(6)]
        lines.append(" * " + " ".join(words) + ("." if rng.random() < 0.5 else ""))
        lines.append(" */")
    cls = _camel(rng, int(rng.integers(2, 4))).capitalize()
    lines.append(f"public class {cls} {{")

    for _ in range(int(rng.integers(1, 4))):
        typ = _TYPES[rng.integers(len(_TYPES))]
        name = _identifier(rng, unicode_ok)
        init = (
            str(rng.integers(100))
            if typ in ("int", "long", "double")
            else _string_literal(rng)
            if typ == "String"
            else "null"
        )
        mod = "private " if rng.random() < 0.6 else "static final "
        lines.append(f"{indent_unit}{mod}{typ} {name} = {init};")
    lines.append("")

    for _ in range(int(rng.integers(1, 4))):
        method = _identifier(rng, unicode_ok)
        arg = _identifier(rng)
        typ = _TYPES[rng.integers(len(_TYPES))]
        lines.append(f"{indent_unit}public {typ} {method}({typ} {arg}) {{")
        body_len = int(rng.integers(1, 5))
        for _ in range(body_len):
            roll = rng.random()
            v = _identifier(rng, unicode_ok)
            if roll < 0.3:
                lines.append(f"{indent_unit * 2}if ({arg} != null) {{")
                lines.append(f"{indent_unit * 3}return {v};")
                lines.append(f"{indent_unit * 2}}}")
            elif roll < 0.55:
                lines.append(
                    f"{indent_unit * 2}{_TYPES[rng.integers(len(_TYPES))]} {v} = "
                    f"{_identifier(rng)}.{_camel(rng, 2)}({arg});"
                )
            elif roll < 0.75:
                lines.append(
                    f"{indent_unit * 2}log.info({_string_literal(rng)}, {v});"
                )
            else:
                lines.append(f"{indent_unit * 2}// {_COMMENT_WORDS[rng.integers(len(_COMMENT_WORDS))]} {v}")
        if rng.random() < 0.2:
            lines.append(indent_unit * 2 + "return " + str(rng.integers(10)) + ";  ")
        else:
            lines.append(f"{indent_unit * 2}return {arg};")
        lines.append(f"{indent_unit}}}")
        if rng.random() < 0.7:
            lines.append("")
    lines.append("}")

    if rng.random() < 0.1:
        idx = int(rng.integers(len(lines)))
        lines[idx] = lines[idx] + "   "
    text = "\n".join(lines)
    if crlf:
        text = text.replace("\n", "\r\n")
    if trailing_newline:
        text += "\r\n" if crlf else "\n"
    return text


_EDGE_CASES = [
    "",
    "\n",
    " \t \t\t\n\r\n\r\r  mixed\tws\n",
    "class X{int my_var=1;}",
    "noNewlineAtEof снизу",  # non-ASCII letters are word characters
    "int a = 1;\r\nint b = 2;\r\n",
    "String s = \"<|ws:sp:4|> literal marker lookalike\";\n",
    "public  class   Gaps {\n\n\n\tint    aligned   =    1;\n}\n",
    "enum parseHTTPResponseKind { AB, ABc, aB2c }\n",
]


def make_java_corpus(n_files: int, seed: int = 7) -> List[Tuple[str, str]]:
    """(name, text) pairs: a few crafted edge cases plus generated files."""
    rng = np.random.default_rng(seed)
    out = [(f"edge_{i:03d}.java", text) for i, text in enumerate(_EDGE_CASES)]
    for i in range(n_files - len(out)):
        out.append((f"gen_{i:04d}.java", java_file(rng, unicode_ok=(i % 50 == 0))))
    return out


# ---------------------------------------------------------------------------
# Review-server fixture tree

_REVIEW_TEMPLATES_UPDATE = [
    "shouldn't this use {new} here?",
    "rename this to {new}",
    "use {new} instead",
    "this constant looks wrong, make it {new}",
]
_REVIEW_TEMPLATES_INSERT = [
    "please add a null check below this line",
    "missing logging here, add it",
    "add the else branch here",
]
_REVIEW_TEMPLATES_DELETE = [
    "this block is dead code, remove it",
    "not needed, please drop these lines",
    "remove this, the caller already does it",
]
_NOISE_TEXTS = ["Done", "same as above.", "nit", "Thanks!", "ditto"]


def _timestamp_str(ts: int) -> str:
    from datetime import datetime, timezone

    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%d %H:%M:%S.000000000")


def _b64(text: str) -> str:
    import base64

    return base64.b64encode(text.encode("utf-8")).decode("ascii")


def _edit_file(
    rng: np.random.Generator, before_lines: List[str], kind: str, line: int
) -> List[str]:
    after = list(before_lines)
    if kind == "update":
        indent = before_lines[line - 1][: len(before_lines[line - 1]) - len(before_lines[line - 1].lstrip())]
        after[line - 1] = f"{indent}{_TYPES[rng.integers(len(_TYPES))]} {_identifier(rng)} = {rng.integers(100)};"
    elif kind == "insert":
        indent = "    "
        after.insert(line, f"{indent}log.info({_string_literal(rng)});")
    elif kind == "delete":
        del after[line - 1]
    return after


def make_gerrit_fixture_tree(
    root: Path,
    n_projects: int = 10,
    changes_per_project: int = 22,
    seed: int = 11,
) -> Dict[str, int]:
    """Write a recorded-response tree a FixtureTransport can serve.

    Includes the cases the mining funnel has to handle: replies, file-level
    comments, comments on non-Java files, boilerplate comments, and changes
    whose later patchset did not touch the file.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    changes = []
    stats = {"changes": 0, "inline_comments": 0}
    base_ts = 1_500_000_000
    change_number = 1000
    for p in range(n_projects):
        project = f"demo/project{p:02d}"
        for c in range(changes_per_project):
            change_number += 1
            change_id = str(change_number)
            ts = base_ts + p * 977_000 + c * 86_400 + int(rng.integers(0, 3600))
            file_path = f"src/main/java/demo/File{change_number}.java"
            before = java_file(rng).split("\n")
            while len(before) < 12:
                before = java_file(rng).split("\n")
            kind = ["update", "insert", "delete"][int(rng.integers(3))]
            # pick an editable line: an indented, non-empty body line
            candidates = [
                i + 1
                for i, l in enumerate(before[: len(before) - 2])
                if l.strip() and l.startswith((" ", "\t")) and i + 1 > 3
            ]
            edit_line = int(candidates[int(rng.integers(len(candidates)))])
            after = _edit_file(rng, before, kind, edit_line)
            # review sits on or near the changed line, inside the pairing window
            review_line = max(1, edit_line + int(rng.integers(-2, 3)))
            review_line = min(review_line, len(before))
            if kind == "update":
                tpl = _REVIEW_TEMPLATES_UPDATE[int(rng.integers(len(_REVIEW_TEMPLATES_UPDATE)))]
                comment = tpl.format(new=_identifier(rng))
            elif kind == "insert":
                comment = _REVIEW_TEMPLATES_INSERT[int(rng.integers(len(_REVIEW_TEMPLATES_INSERT)))]
            else:
                comment = _REVIEW_TEMPLATES_DELETE[int(rng.integers(len(_REVIEW_TEMPLATES_DELETE)))]

            comments_rev1 = {
                file_path: [
                    {
                        "id": f"cmt-{change_number}-1",
                        "line": review_line,
                        "message": comment,
                        "updated": _timestamp_str(ts),
                        "author": {"name": f"reviewer{p}"},
                    }
                ]
            }
            stats["inline_comments"] += 1
            # reply in the same thread: dropped by the miner
            if c % 4 == 0:
                comments_rev1[file_path].append(
                    {
                        "id": f"cmt-{change_number}-2",
                        "line": review_line,
                        "in_reply_to": f"cmt-{change_number}-1",
                        "message": "will do",
                        "updated": _timestamp_str(ts + 60),
                        "author": {"name": "author"},
                    }
                )
            # file-level comment: dropped (no line anchor)
            if c % 5 == 0:
                comments_rev1[file_path].append(
                    {
                        "id": f"cmt-{change_number}-3",
                        "message": "overall looks fine",
                        "updated": _timestamp_str(ts + 120),
                        "author": {"name": f"reviewer{p}"},
                    }
                )
            # comment on a non-Java file: excluded by the .java filter
            if c % 6 == 0:
                comments_rev1["README.md"] = [
                    {
                        "id": f"cmt-{change_number}-4",
                        "line": 1,
                        "message": "typo in the heading",
                        "updated": _timestamp_str(ts + 180),
                        "author": {"name": f"reviewer{p}"},
                    }
                ]
            # boilerplate comment on another line: mined but filtered later
            if c % 7 == 0:
                comments_rev1[file_path].append(
                    {
                        "id": f"cmt-{change_number}-5",
                        "line": 1,
                        "message": _NOISE_TEXTS[int(rng.integers(len(_NOISE_TEXTS)))],
                        "updated": _timestamp_str(ts + 240),
                        "author": {"name": f"reviewer{p}"},
                    }
                )
            # every 11th change: the later patchset left the file untouched
            untouched = c % 11 == 3

            rev1, rev2 = f"rev{change_number}a", f"rev{change_number}b"
            changes.append(
                {
                    "id": f"{quote(project, safe='')}~master~I{change_number:040x}",
                    "_number": change_number,
                    "project": project,
                    "updated": _timestamp_str(ts + 7200),
                    "revisions": {rev1: {"_number": 1}, rev2: {"_number": 2}},
                }
            )
            stats["changes"] += 1
            cdir = root / "changes" / change_id / "revisions"
            (cdir / rev1).mkdir(parents=True, exist_ok=True)
            (cdir / rev2).mkdir(parents=True, exist_ok=True)
            (cdir / rev1 / "comments.json").write_text(
                json.dumps(comments_rev1, sort_keys=True, indent=1), encoding="utf-8"
            )
            (cdir / rev2 / "comments.json").write_text("{}", encoding="utf-8")
            before_text = "\n".join(before)
            after_text = before_text if untouched else "\n".join(after)
            for rev, text in ((rev1, before_text), (rev2, after_text)):
                fdir = cdir / rev / "files" / quote(file_path, safe="")
                fdir.mkdir(parents=True, exist_ok=True)
                (fdir / "content").write_text(_b64(text), encoding="ascii")
            if c % 6 == 0:
                for rev in (rev1, rev2):
                    fdir = cdir / rev / "files" / quote("README.md", safe="")
                    fdir.mkdir(parents=True, exist_ok=True)
                    (fdir / "content").write_text(_b64("# demo\n"), encoding="ascii")
    (root / "changes.json").write_text(
        json.dumps(changes, sort_keys=True, indent=1), encoding="utf-8"
    )
    return stats


# ---------------------------------------------------------------------------
# Comment-determined-fix corpus: the replacement identifier appears only in
# the review comment, so a code-only model cannot name it.

_CLASS_POOL = ["Widget", "Holder", "Config", "Buffer", "Registry", "Tracker"]
_FILLER_POOL = ["base", "count", "limit", "total", "span", "depth"]
_SYLLABLES = [
    "ba", "ce", "di", "fo", "gu", "ha", "ki", "lo", "mu", "ne", "pa", "qui",
    "ro", "su", "ta", "ve", "wi", "xo", "yu", "za",
]
_RENAME_TEMPLATES = [
    "rename {old} to {new}",
    "please rename {old} to {new}",
    "use {new} instead of {old}",
]


def _pseudo_word(rng: np.random.Generator, n_syllables: int = 3) -> str:
    return "".join(_SYLLABLES[rng.integers(len(_SYLLABLES))] for _ in range(n_syllables))


def make_rename_corpus(
    n_samples: int, seed: int = 3, n_projects: int = 10
) -> List[ReviewTriple]:
    """Triples where the correct fix copies a name that exists only in the
    review comment."""
    rng = np.random.default_rng(seed)
    out = []
    base_ts = 1_600_000_000
    for i in range(n_samples):
        old = _pseudo_word(rng)
        new = _pseudo_word(rng)
        while new == old:
            new = _pseudo_word(rng)
        cls = _CLASS_POOL[int(rng.integers(len(_CLASS_POOL)))]
        filler = _FILLER_POOL[int(rng.integers(len(_FILLER_POOL)))]
        m = int(rng.integers(10))
        k = int(rng.integers(10))
        before = "\n".join(
            [
                f"class {cls} {{",
                f"    int {filler} = {m};",
                f"    int {old} = {k};",
                "}",
                "",
            ]
        )
        after = before.replace(f"int {old} = {k};", f"int {new} = {k};")
        tpl = _RENAME_TEMPLATES[int(rng.integers(len(_RENAME_TEMPLATES)))]
        out.append(
            ReviewTriple(
                project=f"synth/project{i % n_projects:02d}",
                code_before=before,
                code_after=after,
                review_comment=tpl.format(old=old, new=new),
                review_line=3,
                timestamp=base_ts + i * 3600,
                change_id=f"synth-{i:05d}",
            )
        )
    return out
