"""Lossless code/comment tokenization.

Two modes:

* ``hard`` -- whitespace runs become explicit tokens (``<|ws:sp:4|>``),
  identifiers are split at underscore and case boundaries, punctuation is one
  token per character.  Concatenating the token surfaces (expanding the
  whitespace tokens) reproduces the input byte for byte, so indentation and
  formatting survive a round trip through the model.
* ``soft`` -- conventional lossy tokenization: whitespace is only a
  separator, identifiers stay whole.  Kept for ablation runs; there is no
  soft detokenizer.

Both code and review comments go through the same tokenizer so they share one
token grammar.
"""

import re
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Union

# Reserved marker surfaces used when framing model inputs/targets.
START_FOCUS = "<|startfocus|>"
END_FOCUS = "<|endfocus|>"
START_CODE = "<|startcode|>"
END_CODE = "<|endcode|>"
START_COMMENT = "<|startcomment|>"
END_COMMENT = "<|endcomment|>"
DELETE = "<|del|>"

MARKERS = frozenset(
    [START_FOCUS, END_FOCUS, START_CODE, END_CODE, START_COMMENT, END_COMMENT, DELETE]
)

# Whitespace classes that get their own run-length encoded tokens.  Any other
# whitespace character (\x0b, \f, NBSP, ...) is rare in source code and is
# kept as an ordinary single-character punct token, which is equally lossless.
_WS_CLASS = {" ": "sp", "\t": "tab", "\n": "nl", "\r": "cr"}
_WS_CHAR = {v: k for k, v in _WS_CLASS.items()}

_HARD_RE = re.compile(r"( +)|(\t+)|(\n+)|(\r+)|([^\W_]+)|(.)", re.DOTALL)
_SOFT_RE = re.compile(r"([ \t\n\r]+)|(\w+)|(.)", re.DOTALL)

# Strict shape of a whitespace token; anything starting with "<|ws:" that does
# not match is treated as malformed during detokenization.
_WS_TOKEN_RE = re.compile(r"<\|ws:(sp|tab|nl|cr):([1-9][0-9]*)\|>\Z")
_WS_PREFIX = "<|ws:"


class DetokenizeError(ValueError):
    """A token stream cannot be turned back into text."""


@dataclass(frozen=True, slots=True)
class Token:
    kind: str  # word | punct | whitespace | marker
    text: str  # surface form; whitespace tokens use the <|ws:CLASS:COUNT|> form
    char_class: str = ""  # sp/tab/nl/cr, whitespace tokens only
    run_length: int = 0  # whitespace tokens only


def ws_token_surface(char_class: str, run_length: int) -> str:
    return f"{_WS_PREFIX}{char_class}:{run_length}|>"


def _split_word(word: str) -> List[str]:
    """Split one letters+digits run at camelCase boundaries.

    Boundaries: lower->Upper, and before the last upper of an uppercase run
    followed by a lowercase letter ("parseHTTPResponse" -> parse HTTP
    Response).  Digits introduce no boundary ("var2" stays whole).
    """
    n = len(word)
    if n < 2:
        return [word]
    parts = []
    start = 0
    for i in range(1, n):
        ch = word[i]
        if not ch.isupper():
            continue
        prev = word[i - 1]
        if prev.islower() or (prev.isupper() and i + 1 < n and word[i + 1].islower()):
            if i > start:
                parts.append(word[start:i])
            start = i
    parts.append(word[start:])
    return parts


def tokenize(text: str, mode: str = "hard") -> List[Token]:
    """Tokenize ``text``; total over all inputs (never raises)."""
    if mode == "hard":
        return _tokenize_hard(text)
    if mode == "soft":
        return _tokenize_soft(text)
    raise ValueError(f"unknown tokenization mode: {mode!r}")


def _tokenize_hard(text: str) -> List[Token]:
    out = []
    append = out.append
    for m in _HARD_RE.finditer(text):
        group = m.lastindex
        s = m.group()
        if group == 5:  # letters/digits run
            for part in _split_word(s):
                append(Token("word", part))
        elif group == 6:  # punctuation and stray characters, incl. underscore
            append(Token("punct", s))
        else:  # one of the four whitespace classes
            cls = _WS_CLASS[s[0]]
            append(Token("whitespace", ws_token_surface(cls, len(s)), cls, len(s)))
    return out


def _tokenize_soft(text: str) -> List[Token]:
    out = []
    for m in _SOFT_RE.finditer(text):
        group = m.lastindex
        if group == 1:
            continue  # whitespace is a separator only
        s = m.group()
        out.append(Token("word" if group == 2 else "punct", s))
    return out


def surfaces(stream: Iterable[Union[Token, str]]) -> List[str]:
    return [t.text if isinstance(t, Token) else t for t in stream]


def detokenize(stream: Sequence[Union[Token, str]]) -> str:
    """Exact inverse of hard tokenization.

    Whitespace tokens expand to their literal runs; everything else is
    concatenated with no separator, which is what rejoins split identifiers.
    """
    pieces = []
    for i, tok in enumerate(stream):
        s = tok.text if isinstance(tok, Token) else tok
        if s.startswith(_WS_PREFIX):
            m = _WS_TOKEN_RE.match(s)
            if not m:
                raise DetokenizeError(
                    f"malformed whitespace token {s!r} at index {i}"
                )
            pieces.append(_WS_CHAR[m.group(1)] * int(m.group(2)))
        else:
            pieces.append(s)
    return "".join(pieces)


@dataclass(frozen=True)
class VocabReduction:
    unique_before: int
    unique_after: int

    @property
    def reduction_pct(self) -> float:
        if self.unique_before == 0:
            return 0.0
        return 100.0 * (self.unique_before - self.unique_after) / self.unique_before


def vocab_reduction_report(
    corpus: Iterable[str], before_mode: str = "soft", after_mode: str = "hard"
) -> VocabReduction:
    """Count unique token surfaces under two modes over a corpus of texts."""
    before = set()
    after = set()
    for text in corpus:
        before.update(t.text for t in tokenize(text, before_mode))
        after.update(t.text for t in tokenize(text, after_mode))
    return VocabReduction(len(before), len(after))
