"""Append-only response cache keyed by request content."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from pathlib import Path

logger = logging.getLogger(__name__)

__all__ = ["ResponseCache", "cache_key"]


def cache_key(model: str, prompt: str, constraint: list[str] | tuple) -> str:
    payload = json.dumps(
        {"model": model, "prompt": prompt, "constraint": list(constraint)},
        ensure_ascii=False,
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """Line-delimited JSON store of ``{"key": ..., "value": ...}`` entries.

    With ``path=None`` the cache lives in memory only. Writes are serialized
    by a lock and flushed per entry, so an interrupted run leaves at most
    one truncated trailing line, which is ignored on reload.
    """

    def __init__(self, path=None):
        self.path = None if path is None else Path(path)
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        self._needs_newline = False
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self):
        raw = self.path.read_bytes()
        self._needs_newline = bool(raw) and not raw.endswith(b"\n")
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    self._entries[obj["key"]] = obj["value"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    logger.warning(
                        "%s:%d: skipping unreadable cache line", self.path, lineno
                    )

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> dict | None:
        return self._entries.get(key)

    def put(self, key: str, value: dict) -> None:
        line = json.dumps({"key": key, "value": value}, ensure_ascii=False) + "\n"
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = value
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    if self._needs_newline:
                        fh.write("\n")
                        self._needs_newline = False
                    fh.write(line)
                    fh.flush()
