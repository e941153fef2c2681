"""Chat-completion token streaming: live endpoint, fixture replay, recording.

Fixture format: UTF-8 newline-delimited JSON records, one per chunk,
``{"offset_ms": <number>, "text": <string>}`` -- simple enough to write
by hand.  End of file implies end of stream; the reader synthesizes the
single terminal chunk.  A fixture *path* may be a directory, in which
case consecutive streams map to ``000.ndjson``, ``001.ndjson``, ... in
the order the session issues requests (the pipeline's request order is
deterministic, so replaying a recorded session lines up).

The API key is only ever read from an environment variable, never from
configuration files.
"""

from __future__ import annotations

import enum
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import requests


class TransportMode(enum.Enum):
    LIVE = "live"
    REPLAY = "replay"
    RECORD = "record"


class TransportError(Exception):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class TokenChunk:
    text: str
    terminal: bool = False
    truncated: bool = False
    offset_ms: float | None = None


@dataclass
class TransportConfig:
    mode: TransportMode = TransportMode.REPLAY
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    fixture_path: str | Path | None = None
    honor_timings: bool = False
    timeout: float = 120.0
    max_retries: int = 1

    def validate(self) -> None:
        if self.mode in (TransportMode.LIVE, TransportMode.RECORD):
            if not self.endpoint or not self.model:
                raise ValueError(f"{self.mode.value} mode requires endpoint and model")
            if not os.environ.get(self.api_key_env):
                raise ValueError(
                    f"{self.mode.value} mode requires the {self.api_key_env} "
                    "environment variable"
                )
        if self.mode is TransportMode.RECORD and self.fixture_path is None:
            raise ValueError("record mode requires a fixture path to write")
        if self.mode is TransportMode.REPLAY:
            if self.fixture_path is None:
                raise ValueError("replay mode requires a fixture path")
            path = Path(self.fixture_path)
            if not path.exists():
                raise FileNotFoundError(f"fixture {path} does not exist")


def build_request_body(config: TransportConfig, messages: list) -> dict:
    """Chat-completions request body; messages may be ChatMessage-like or
    plain dicts."""
    rendered = [
        m if isinstance(m, dict) else {"role": m.role, "content": m.content}
        for m in messages
    ]
    return {
        "model": config.model,
        "messages": rendered,
        "temperature": config.temperature,
        "stream": True,
    }


class StreamHandle:
    """Single-consumer iterator of TokenChunks with cooperative cancel."""

    def __init__(self, inner: Iterator[TokenChunk], on_close=None):
        self._inner = inner
        self._on_close = on_close
        self._cancelled = threading.Event()
        self._finished = False

    def __iter__(self) -> "StreamHandle":
        return self

    def __next__(self) -> TokenChunk:
        if self._finished:
            raise StopIteration
        if self._cancelled.is_set():
            self._close()
            return TokenChunk("", terminal=True, truncated=True)
        try:
            chunk = next(self._inner)
        except StopIteration:
            self._finished = True
            raise
        if chunk.terminal:
            self._finished = True
        return chunk

    def cancel(self) -> None:
        """No further content chunks; a synthetic terminal chunk marks the
        truncation.  Idempotent; a no-op on a finished stream."""
        if not self._finished:
            self._cancelled.set()

    def _close(self) -> None:
        self._finished = True
        if self._on_close is not None:
            try:
                self._on_close()
            finally:
                self._on_close = None

    def drain_text(self) -> str:
        """Concatenate the remaining chunk text (convenience for callers
        that do not need streaming)."""
        return "".join(chunk.text for chunk in self)


class Transport:
    """Issues streams according to one TransportConfig; tracks the fixture
    ordinal when the fixture path is a directory."""

    def __init__(self, config: TransportConfig):
        config.validate()
        self.config = config
        self._ordinal = 0
        self._lock = threading.Lock()

    def _next_fixture(self) -> Path:
        path = Path(self.config.fixture_path)
        is_dir = path.is_dir() or (
            self.config.mode is TransportMode.RECORD and not path.suffix
        )
        if not is_dir:
            return path
        with self._lock:
            ordinal = self._ordinal
            self._ordinal += 1
        return path / f"{ordinal:03d}.ndjson"

    def start_stream(self, messages: list) -> StreamHandle:
        if self.config.mode is TransportMode.REPLAY:
            fixture = self._next_fixture()
            if not fixture.exists():
                raise FileNotFoundError(f"fixture {fixture} does not exist")
            return StreamHandle(
                _replay_chunks(fixture, self.config.honor_timings)
            )
        sink = None
        if self.config.mode is TransportMode.RECORD:
            fixture = self._next_fixture()
            fixture.parent.mkdir(parents=True, exist_ok=True)
            sink = fixture
        response = self._open_live(messages)
        return StreamHandle(
            _live_chunks(response, sink), on_close=response.close
        )

    def _open_live(self, messages: list):
        url = self.config.endpoint.rstrip("/") + "/chat/completions"
        headers = {
            "Authorization": f"Bearer {os.environ[self.config.api_key_env]}",
            "Content-Type": "application/json",
        }
        body = build_request_body(self.config, messages)
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(0.5 * attempt)
            try:
                response = requests.post(
                    url,
                    json=body,
                    headers=headers,
                    stream=True,
                    timeout=self.config.timeout,
                )
            except requests.RequestException as exc:
                last_error = TransportError(f"request failed: {exc}")
                continue
            if response.status_code != 200:
                detail = response.text[:200]
                response.close()
                last_error = TransportError(
                    f"endpoint returned {response.status_code}: {detail}",
                    status=response.status_code,
                )
                continue
            return response
        raise last_error if last_error else TransportError("request failed")


def start_stream(config: TransportConfig, messages: list) -> StreamHandle:
    """One-shot convenience around ``Transport(config).start_stream``."""
    return Transport(config).start_stream(messages)


def _replay_chunks(fixture: Path, honor_timings: bool) -> Iterator[TokenChunk]:
    records = []
    with open(fixture, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            records.append((float(doc.get("offset_ms", 0.0)), doc["text"]))
    previous = 0.0
    for offset_ms, text in records:
        if honor_timings and offset_ms > previous:
            time.sleep((offset_ms - previous) / 1000.0)
        previous = offset_ms
        yield TokenChunk(text, offset_ms=offset_ms)
    yield TokenChunk("", terminal=True)


def write_fixture(fixture: Path | str, chunks: list[tuple[float, str]]) -> None:
    """Write a fixture file from (offset_ms, text) records."""
    path = Path(fixture)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for offset_ms, text in chunks:
            fh.write(json.dumps({"offset_ms": offset_ms, "text": text}) + "\n")


def _live_chunks(response, sink: Path | None) -> Iterator[TokenChunk]:
    started = time.monotonic()
    out = open(sink, "w", encoding="utf-8") if sink is not None else None
    try:
        for line in response.iter_lines(decode_unicode=True):
            if not line or not line.startswith("data:"):
                continue
            payload = line[len("data:") :].strip()
            if payload == "[DONE]":
                break
            try:
                doc = json.loads(payload)
            except json.JSONDecodeError:
                continue
            choices = doc.get("choices") or []
            if not choices:
                continue
            text = (choices[0].get("delta") or {}).get("content")
            if not text:
                continue
            offset_ms = (time.monotonic() - started) * 1000.0
            if out is not None:
                out.write(
                    json.dumps({"offset_ms": round(offset_ms, 3), "text": text})
                    + "\n"
                )
                out.flush()
            yield TokenChunk(text, offset_ms=offset_ms)
        yield TokenChunk("", terminal=True)
    finally:
        if out is not None:
            out.close()
        response.close()
