"""Gerrit-compatible review mining.

Changes, inline comments, and file revisions are fetched either from a live
Gerrit REST endpoint or from a fixture tree of recorded JSON responses keyed
by request path, behind one transport interface, so tests and the bundled
demo never touch the network.

Endpoints used:
  GET /changes/?q=<query>&o=ALL_REVISIONS
  GET /changes/{id}/revisions/{rev}/comments
  GET /changes/{id}/revisions/{rev}/files/{path}/content   (base64 body)
"""

import base64
import binascii
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple
from urllib.parse import quote

log = logging.getLogger(__name__)

XSSI_PREFIX = ")]}'"


class GerritError(Exception):
    pass


class TransportError(GerritError):
    """Transport-level failure; carries a retry hint."""

    def __init__(self, message: str, retryable: bool, retry_after: float = 1.0):
        super().__init__(message)
        self.retryable = retryable
        self.retry_after = retry_after


class NotFoundError(GerritError):
    pass


class ParseError(GerritError):
    """Malformed response body; names the offending field."""

    def __init__(self, message: str, field_name: str = ""):
        super().__init__(message)
        self.field_name = field_name


class TokenBucket:
    """Thread-safe token-bucket rate limiter (default 5 requests/second)."""

    def __init__(
        self,
        rate: float = 5.0,
        burst: Optional[float] = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = burst if burst is not None else rate
        self._tokens = self.capacity
        self._updated = clock()
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(
                    self.capacity, self._tokens + (now - self._updated) * self.rate
                )
                self._updated = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


def strip_xssi(body: str) -> str:
    """Drop Gerrit's anti-XSSI prefix line before JSON parsing."""
    if body.startswith(XSSI_PREFIX):
        nl = body.find("\n")
        return body[nl + 1 :] if nl >= 0 else ""
    return body


def parse_gerrit_timestamp(value: str) -> int:
    """Gerrit timestamps look like '2019-07-23 10:21:30.000000000' (UTC)."""
    head = value.split(".")[0]
    dt = datetime.strptime(head, "%Y-%m-%d %H:%M:%S").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


@dataclass(frozen=True)
class ChangeSummary:
    change_id: str
    project: str
    updated: int
    revisions: Dict[str, int]  # revision id -> patchset number


@dataclass(frozen=True)
class InlineComment:
    file_path: str
    line: int
    text: str
    author: str
    timestamp: int


@dataclass(frozen=True)
class RawReviewEvent:
    project: str
    change_id: str
    file_path: str
    comment_text: str
    comment_line: int
    patchset_before: int
    patchset_after: int
    file_before: str
    file_after: str
    timestamp: int
    no_change: bool = False

    def to_dict(self) -> dict:
        return {
            "project": self.project,
            "change_id": self.change_id,
            "file_path": self.file_path,
            "comment_text": self.comment_text,
            "comment_line": self.comment_line,
            "patchset_before": self.patchset_before,
            "patchset_after": self.patchset_after,
            "file_before": self.file_before,
            "file_after": self.file_after,
            "timestamp": self.timestamp,
            "no_change": self.no_change,
        }


class FixtureTransport:
    """Serves recorded responses from a directory tree.

    Layout (request path -> file):
      changes.json                                        full change list
      changes/<id>/revisions/<rev>/comments.json
      changes/<id>/revisions/<rev>/files/<quoted-path>/content   base64 text
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise NotFoundError(f"fixture directory not found: {self.root}")

    def _read(self, rel: str) -> str:
        p = self.root / rel
        if not p.is_file():
            raise NotFoundError(f"no fixture recorded for {rel}")
        return p.read_text(encoding="utf-8")

    def _read_json(self, rel: str):
        body = strip_xssi(self._read(rel))
        try:
            return json.loads(body)
        except json.JSONDecodeError as e:
            raise ParseError(f"fixture {rel} is not valid JSON: {e}", "body") from e

    def raw_changes(self, query: str, offset: int, limit: int) -> list:
        changes = self._read_json("changes.json")
        if not isinstance(changes, list):
            raise ParseError("changes.json must hold a list", "changes")
        return changes[offset : offset + limit]

    def raw_comments(self, change_id: str, revision_id: str) -> dict:
        return self._read_json(f"changes/{change_id}/revisions/{revision_id}/comments.json")

    def raw_file_content(self, change_id: str, revision_id: str, path: str) -> str:
        quoted = quote(path, safe="")
        return self._read(
            f"changes/{change_id}/revisions/{revision_id}/files/{quoted}/content"
        )


class HttpTransport:
    """Live Gerrit REST access with rate limiting and a static token header."""

    def __init__(
        self,
        base_url: str,
        token: Optional[str] = None,
        rate: float = 5.0,
        timeout: float = 30.0,
        session=None,
    ):
        import requests

        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.limiter = TokenBucket(rate=rate)
        self.session = session or requests.Session()
        if token:
            self.session.headers["Authorization"] = f"Bearer {token}"

    def _get(self, path: str, params: Optional[dict] = None) -> str:
        import requests

        self.limiter.acquire()
        url = f"{self.base_url}/{path.lstrip('/')}"
        try:
            resp = self.session.get(url, params=params, timeout=self.timeout)
        except requests.RequestException as e:
            raise TransportError(f"GET {url} failed: {e}", retryable=True) from e
        if resp.status_code == 404:
            raise NotFoundError(f"GET {url} -> 404")
        if resp.status_code == 429 or resp.status_code >= 500:
            retry_after = float(resp.headers.get("Retry-After", "1"))
            raise TransportError(
                f"GET {url} -> {resp.status_code}", retryable=True, retry_after=retry_after
            )
        if resp.status_code >= 400:
            raise TransportError(f"GET {url} -> {resp.status_code}", retryable=False)
        return resp.text

    def _get_json(self, path: str, params: Optional[dict] = None):
        body = strip_xssi(self._get(path, params))
        try:
            return json.loads(body)
        except json.JSONDecodeError as e:
            raise ParseError(f"GET {path}: malformed JSON body: {e}", "body") from e

    def raw_changes(self, query: str, offset: int, limit: int) -> list:
        return self._get_json(
            "changes/", {"q": query, "o": "ALL_REVISIONS", "S": offset, "n": limit}
        )

    def raw_comments(self, change_id: str, revision_id: str) -> dict:
        return self._get_json(f"changes/{change_id}/revisions/{revision_id}/comments")

    def raw_file_content(self, change_id: str, revision_id: str, path: str) -> str:
        quoted = quote(path, safe="")
        return self._get(f"changes/{change_id}/revisions/{revision_id}/files/{quoted}/content")


class GerritClient:
    """Validating wrapper over a transport."""

    def __init__(self, transport, max_retries: int = 3, sleep=time.sleep):
        self.transport = transport
        self.max_retries = max_retries
        self._sleep = sleep

    def _with_retries(self, fn, *args):
        attempt = 0
        while True:
            try:
                return fn(*args)
            except TransportError as e:
                attempt += 1
                if not e.retryable or attempt > self.max_retries:
                    raise
                delay = e.retry_after * (2 ** (attempt - 1))
                log.warning("retrying after transport error (%s): %s", delay, e)
                self._sleep(delay)

    def fetch_change_page(self, query: str, offset: int, limit: int) -> List[ChangeSummary]:
        if limit < 1:
            raise ValueError("limit must be >= 1")
        raw = self._with_retries(self.transport.raw_changes, query, offset, limit)
        out = []
        for entry in raw:
            try:
                revisions = {
                    rev: info["_number"] for rev, info in entry["revisions"].items()
                }
            except (KeyError, TypeError) as e:
                raise ParseError(f"change entry missing field: {e}", "revisions") from e
            try:
                out.append(
                    ChangeSummary(
                        change_id=str(entry["_number"]),
                        project=entry["project"],
                        updated=parse_gerrit_timestamp(entry["updated"]),
                        revisions=revisions,
                    )
                )
            except KeyError as e:
                raise ParseError(f"change entry missing field: {e}", str(e)) from e
        return out

    def fetch_inline_comments(
        self, change_id: str, revision_id: str
    ) -> List[InlineComment]:
        """Line-anchored root comments only: file-level comments and replies
        to earlier comments are dropped."""
        raw = self._with_retries(self.transport.raw_comments, change_id, revision_id)
        out = []
        for file_path in sorted(raw):
            for c in raw[file_path]:
                if "line" not in c or c["line"] is None:
                    continue
                if c.get("in_reply_to"):
                    continue
                try:
                    out.append(
                        InlineComment(
                            file_path=file_path,
                            line=int(c["line"]),
                            text=c["message"],
                            author=c.get("author", {}).get("name", ""),
                            timestamp=parse_gerrit_timestamp(c["updated"]),
                        )
                    )
                except KeyError as e:
                    raise ParseError(f"comment missing field: {e}", str(e)) from e
        return out

    def fetch_file_content(self, change_id: str, revision_id: str, path: str) -> str:
        body = self._with_retries(
            self.transport.raw_file_content, change_id, revision_id, path
        )
        try:
            return base64.b64decode(body, validate=True).decode("utf-8")
        except (binascii.Error, UnicodeDecodeError) as e:
            raise ParseError(f"file content for {path} is not base64 utf-8: {e}", "content") from e


@dataclass
class SkipReport:
    missing_after_revision: int = 0
    non_java: int = 0
    bad_comment_line: int = 0
    no_later_patchset: int = 0
    patchset_pairing: str = "commented-to-next-differing"

    def to_dict(self) -> dict:
        return {
            "missing_after_revision": self.missing_after_revision,
            "non_java": self.non_java,
            "bad_comment_line": self.bad_comment_line,
            "no_later_patchset": self.no_later_patchset,
            "patchset_pairing": self.patchset_pairing,
        }


def assemble_raw_events(
    changes: Sequence[ChangeSummary],
    comments: Dict[str, List[Tuple[str, InlineComment]]],
    file_contents: Dict[Tuple[str, str, str], str],
) -> Tuple[List[RawReviewEvent], SkipReport]:
    """Pure assembly of fetch results into raw review events.

    ``comments`` maps change_id -> [(revision_id, comment)], and
    ``file_contents`` maps (change_id, revision_id, path) -> text.  One event
    per inline comment on a .java file that exists in the commented patchset
    and some later patchset; the paired after-revision is the next patchset
    whose copy of the file differs (events where no later copy differs are
    flagged no_change for downstream discard).
    """
    report = SkipReport()
    events: List[RawReviewEvent] = []
    for change in changes:
        patchset_of = change.revisions
        rev_by_patchset = sorted(patchset_of.items(), key=lambda kv: kv[1])
        for revision_id, comment in comments.get(change.change_id, []):
            if not comment.file_path.endswith(".java"):
                report.non_java += 1
                continue
            p_before = patchset_of.get(revision_id)
            if p_before is None:
                report.missing_after_revision += 1
                continue
            before = file_contents.get((change.change_id, revision_id, comment.file_path))
            if before is None:
                report.missing_after_revision += 1
                continue
            if not (1 <= comment.line <= len(before.split("\n"))):
                report.bad_comment_line += 1
                continue
            later = [(rev, ps) for rev, ps in rev_by_patchset if ps > p_before]
            if not later:
                report.no_later_patchset += 1
                continue
            after = None
            p_after = None
            fallback = None
            for rev, ps in later:
                content = file_contents.get((change.change_id, rev, comment.file_path))
                if content is None:
                    continue
                if content != before:
                    after, p_after = content, ps
                    break
                if fallback is None:
                    fallback = (content, ps)
            if after is None:
                if fallback is None:
                    report.missing_after_revision += 1
                    continue
                after, p_after = fallback
            events.append(
                RawReviewEvent(
                    project=change.project,
                    change_id=change.change_id,
                    file_path=comment.file_path,
                    comment_text=comment.text,
                    comment_line=comment.line,
                    patchset_before=p_before,
                    patchset_after=p_after,
                    file_before=before,
                    file_after=after,
                    timestamp=comment.timestamp,
                    no_change=(after == before),
                )
            )
    return events, report


def mine_events(
    client: GerritClient,
    query: str,
    page_size: int = 100,
    jobs: int = 1,
) -> Tuple[List[RawReviewEvent], SkipReport]:
    """Crawl all pages for a query and assemble events.

    Fetches may run concurrently across changes; assembly is pure over the
    collected results, so the output order only depends on the change list.
    """
    changes: List[ChangeSummary] = []
    offset = 0
    while True:
        page = client.fetch_change_page(query, offset, page_size)
        if not page:
            break
        changes.extend(page)
        offset += len(page)

    def fetch_for_change(change: ChangeSummary):
        per_change: List[Tuple[str, InlineComment]] = []
        contents: Dict[Tuple[str, str, str], str] = {}
        for revision_id in sorted(change.revisions, key=change.revisions.get):
            try:
                found = client.fetch_inline_comments(change.change_id, revision_id)
            except NotFoundError:
                found = []
            for comment in found:
                per_change.append((revision_id, comment))
        wanted = {c.file_path for _, c in per_change if c.file_path.endswith(".java")}
        for path in sorted(wanted):
            for revision_id in change.revisions:
                try:
                    contents[(change.change_id, revision_id, path)] = (
                        client.fetch_file_content(change.change_id, revision_id, path)
                    )
                except NotFoundError:
                    continue
        return change.change_id, per_change, contents

    comments: Dict[str, List[Tuple[str, InlineComment]]] = {}
    file_contents: Dict[Tuple[str, str, str], str] = {}
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(fetch_for_change, changes))
    else:
        results = [fetch_for_change(c) for c in changes]
    for change_id, per_change, contents in results:
        comments[change_id] = per_change
        file_contents.update(contents)
    return assemble_raw_events(changes, comments, file_contents)
