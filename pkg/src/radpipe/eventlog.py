"""A minimal append-only JSONL event log.

Every append is flushed and fsynced before returning, so an event that was
acknowledged survives a process kill. State is whatever a reader builds by
replaying the file from the top.
"""

from __future__ import annotations

import json
import os
import threading
import warnings
from pathlib import Path

from radpipe.errors import DataError


class EventLog:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._handle = None

    def append(self, event: dict) -> None:
        """Durably append one event. Returns only after fsync."""
        line = json.dumps(event, ensure_ascii=False) + "\n"
        with self._lock:
            if self._handle is None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._heal_torn_tail()
                self._handle = open(self.path, "a", encoding="utf-8")
            self._handle.write(line)
            self._handle.flush()
            os.fsync(self._handle.fileno())

    def close(self) -> None:
        with self._lock:
            if self._handle is not None:
                self._handle.close()
                self._handle = None

    def replay(self) -> list[dict]:
        """Return every stored event in append order.

        A truncated final line (torn write from a crash) is skipped with a
        warning; a malformed line anywhere else means real corruption and
        raises.
        """
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as handle:
            lines = handle.read().split("\n")
        events: list[dict] = []
        last = len(lines) - 1
        for index, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                event = json.loads(line)
            except json.JSONDecodeError as exc:
                if index == last:
                    warnings.warn(
                        f"{self.path}: dropping torn final line after crash: {exc}"
                    )
                    break
                raise DataError(f"{self.path}:{index + 1}: corrupt event: {exc}") from exc
            if not isinstance(event, dict):
                raise DataError(f"{self.path}:{index + 1}: event must be a JSON object")
            events.append(event)
        return events

    def _heal_torn_tail(self) -> None:
        # A crash can leave a partial final line. Appending straight after it
        # would fuse two records into one corrupt row, so before the first
        # write we either finish the tail (it parsed fine, only the newline
        # was lost) or cut it off (it was never acknowledged anyway).
        if not self.path.exists():
            return
        raw = self.path.read_bytes()
        if not raw or raw.endswith(b"\n"):
            return
        cut = raw.rfind(b"\n") + 1
        tail = raw[cut:]
        try:
            parsed = json.loads(tail.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            parsed = None
        with open(self.path, "r+b") as handle:
            if isinstance(parsed, dict):
                handle.seek(0, os.SEEK_END)
                handle.write(b"\n")
            else:
                warnings.warn(f"{self.path}: discarding torn final line before append")
                handle.truncate(cut)
            handle.flush()
            os.fsync(handle.fileno())
