"""JSON-lines input/output and content hashing.

Every dataset and intermediate stage output in this package is a JSONL file:
one object per line, UTF-8, field order as constructed. Digests are computed
over a canonical form (sorted keys, no whitespace) so they do not depend on
how a particular writer ordered fields, and content digests sort rows by id
so they do not depend on row order either.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import InputError


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    """Yield one dict per non-blank line. Raises InputError with the line
    number on malformed JSON or a non-object line."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise InputError(f"{path}:{lineno}: expected a JSON object")
            yield obj


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> int:
    """Write rows atomically (temp file + rename). Returns the row count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False))
                fh.write("\n")
                count += 1
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return count


def append_jsonl(path: str | Path, row: dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(row, ensure_ascii=False))
        fh.write("\n")
        fh.flush()


def canonical_dumps(obj: Any) -> str:
    """Deterministic JSON text: sorted keys, minimal separators."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def digest_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def content_digest(rows: Iterable[dict[str, Any]], *, id_key: str = "id") -> str:
    """Order-independent digest of a row set: rows are canonicalized and
    sorted by their id before hashing. Rows must carry the id key."""
    lines = []
    for row in rows:
        if id_key not in row:
            raise InputError(f"row missing {id_key!r} key: cannot digest")
        lines.append((str(row[id_key]), canonical_dumps(row)))
    lines.sort()
    h = hashlib.sha256()
    for _, text in lines:
        h.update(text.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
