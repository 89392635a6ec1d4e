"""Line-delimited metric event protocol.

Benchmark workers emit one JSON object per line on a dedicated metric
channel; the harness ingests the stream, tolerating garbage lines (a
worker's stderr may interleave when no dedicated channel is available).

Wire grammar: ``<json-object>\\n`` with required keys ``event``, ``time``,
``task``, ``data``. Numbers are plain decimals, never NaN or Inf. See
``docs/protocol.md`` for the full schema and the conformance corpus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Iterable, Iterator, Union

EVENT_KINDS = frozenset(
    {
        "config",
        "start",
        "phase",
        "rate",
        "loss",
        "gpudata",
        "progress",
        "success",
        "error",
        "stop",
        "end",
    }
)

# Event kinds that may appear at most once per emitting process.
TERMINAL_KINDS = frozenset({"success", "error"})


class ProtocolError(ValueError):
    """Raised when an event cannot be encoded."""


@dataclass(frozen=True)
class MetricEvent:
    """One line of the metric protocol."""

    event: str
    time: float
    task: str
    data: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.event not in EVENT_KINDS:
            raise ProtocolError(f"unknown event kind {self.event!r}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MetricEvent):
            return NotImplemented
        return (
            self.event == other.event
            and self.time == other.time
            and self.task == other.task
            and self.data == other.data
        )

    def __hash__(self) -> int:
        return hash((self.event, self.time, self.task))


@dataclass(frozen=True)
class Rejection:
    """A line the decoder could not accept; ingestion continues past it."""

    line: str
    reason: str


StreamItem = Union[MetricEvent, Rejection]


@dataclass(frozen=True)
class Observation:
    """One unit-of-work timing.

    ``rate`` is always derived as ``work / elapsed``; it is never stored
    independently of the stamps it came from.
    """

    work: float
    elapsed: float
    loss: float | None = None
    warmup: bool = False
    task: str = "train"

    def __post_init__(self) -> None:
        if self.work <= 0:
            raise ValueError(f"work must be positive, got {self.work}")
        if self.elapsed <= 0:
            raise ValueError(f"elapsed must be positive, got {self.elapsed}")

    @property
    def rate(self) -> float:
        return self.work / self.elapsed


@dataclass
class ObservationLog:
    """Folded outcome of one worker process."""

    process_id: str
    observations: list[Observation] = field(default_factory=list)
    terminal: str = "error"  # one of {success, error, timeout}
    raw_events: list[MetricEvent] = field(default_factory=list)
    faults: int = 0  # timing tuples dropped at flush (end before start)
    message: str = ""

    def rates(self) -> list[float]:
        return [o.rate for o in self.observations]


def _canonical(value: Any) -> Any:
    """Recursively sort mapping keys so encoding is deterministic."""
    if isinstance(value, dict):
        return {k: _canonical(value[k]) for k in sorted(value)}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def encode_event(event: MetricEvent) -> str:
    """Encode an event as exactly one canonical JSON line.

    Top-level keys appear in the fixed order event, time, task, data;
    payload keys are sorted. Output is UTF-8 safe and ends with ``\\n``.
    """
    payload = {
        "event": event.event,
        "time": event.time,
        "task": event.task,
        "data": _canonical(event.data),
    }
    try:
        line = json.dumps(payload, separators=(",", ":"), allow_nan=False, ensure_ascii=False)
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"payload not serializable: {exc}") from exc
    if "\n" in line:
        raise ProtocolError("encoded event contains interior newline")
    return line + "\n"


def _reject_constant(name: str) -> Any:
    raise ValueError(f"non-finite number {name} not allowed")


def decode_event(line: str) -> StreamItem:
    """Decode one line into a MetricEvent, or a Rejection explaining why not.

    Rejections carry the raw line so callers can log or re-route it;
    they never abort the stream.
    """
    raw = line.rstrip("\n")
    stripped = raw.strip()
    if not stripped:
        return Rejection(raw, "empty line")
    try:
        obj = json.loads(stripped, parse_constant=_reject_constant)
    except ValueError as exc:
        return Rejection(raw, f"not valid JSON: {exc}")
    if not isinstance(obj, dict):
        return Rejection(raw, "not a JSON object")

    missing = [k for k in ("event", "time", "task", "data") if k not in obj]
    if missing:
        return Rejection(raw, f"missing keys: {', '.join(missing)}")

    kind = obj["event"]
    if not isinstance(kind, str) or kind not in EVENT_KINDS:
        return Rejection(raw, f"unknown kind {kind!r}")
    time = obj["time"]
    if isinstance(time, bool) or not isinstance(time, (int, float)):
        return Rejection(raw, "time must be a number")
    task = obj["task"]
    if not isinstance(task, str):
        return Rejection(raw, "task must be a string")
    data = obj["data"]
    if not isinstance(data, dict):
        return Rejection(raw, "data must be an object")

    if kind == "rate":
        problem = _check_rate_payload(data)
        if problem:
            return Rejection(raw, problem)

    return MetricEvent(event=kind, time=float(time), task=task, data=data)


def _check_rate_payload(data: dict[str, Any]) -> str | None:
    rate = data.get("rate")
    if isinstance(rate, bool) or not isinstance(rate, (int, float)) or rate <= 0:
        return "rate payload requires numeric rate > 0"
    batch = data.get("batch")
    if isinstance(batch, bool) or not isinstance(batch, (int, float)) or batch <= 0:
        return "rate payload requires numeric batch > 0"
    if not isinstance(data.get("units"), str):
        return "rate payload requires text units"
    return None


class StreamDecoder:
    """Incremental line framer over an arbitrary byte-chunk sequence.

    Output is invariant to chunk boundaries: a partial trailing line is
    buffered until completed by a later chunk or by ``finish()``.
    """

    def __init__(self) -> None:
        self._buffer = b""

    def feed(self, chunk: bytes) -> list[StreamItem]:
        self._buffer += chunk
        items: list[StreamItem] = []
        while True:
            newline = self._buffer.find(b"\n")
            if newline < 0:
                break
            line, self._buffer = self._buffer[: newline + 1], self._buffer[newline + 1 :]
            items.append(decode_event(line.decode("utf-8", errors="replace")))
        return items

    def finish(self) -> list[StreamItem]:
        """Flush a trailing unterminated line, if any."""
        if not self._buffer:
            return []
        line, self._buffer = self._buffer, b""
        return [decode_event(line.decode("utf-8", errors="replace"))]


def read_stream(source: Iterable[bytes] | BinaryIO) -> Iterator[StreamItem]:
    """Yield events and rejections from a byte source, in arrival order.

    ``source`` may be any iterable of byte chunks or a binary file-like
    object (read in 64 KiB chunks). A read failure terminates the stream
    with a Rejection marker; items already yielded remain valid.
    """
    decoder = StreamDecoder()
    chunks: Iterable[bytes]
    if hasattr(source, "read"):
        chunks = iter(lambda: source.read(65536), b"")  # type: ignore[union-attr]
    else:
        chunks = source
    try:
        for chunk in chunks:
            yield from decoder.feed(chunk)
    except OSError as exc:
        yield from decoder.finish()
        yield Rejection("", f"source read failure: {exc}")
        return
    yield from decoder.finish()


def events_only(items: Iterable[StreamItem]) -> list[MetricEvent]:
    return [item for item in items if isinstance(item, MetricEvent)]


def rejections_only(items: Iterable[StreamItem]) -> list[Rejection]:
    return [item for item in items if isinstance(item, Rejection)]
