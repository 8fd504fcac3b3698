"""Append-only run logs and the statistics derived from them.

Each record is length-prefixed and CRC-protected, so a reader accepts
exactly the longest valid prefix of a file: a crash while appending
costs at most the torn final record.  Summaries fold associatively,
which lets shards of one run merge without re-reading raw records.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

FILE_MAGIC = b"TWLG"
FILE_VERSION = 1

RECORD_CYCLE = 1  # value: cycle time s
RECORD_TRIP = 2  # value: force magnitude N
RECORD_WAIT = 3  # value: waited s
RECORD_NOTE = 4

RECORD_KINDS = (RECORD_CYCLE, RECORD_TRIP, RECORD_WAIT, RECORD_NOTE)
DEFAULT_WAIT_THRESHOLD_S = 20.0
MIN_CYCLES_FOR_PREDICTION = 5

_RECORD_HEAD = struct.Struct("<IQBd H")  # serial, t_us, kind, value, label len


class DatalogError(ValueError):
    pass


class InsufficientDataError(DatalogError):
    """Too few completed cycles to extrapolate from."""


@dataclass(frozen=True)
class LogRecord:
    serial: int
    t_us: int
    kind: int
    value: float = 0.0
    label: str = ""

    def payload(self) -> bytes:
        raw = self.label.encode("utf-8")
        return _RECORD_HEAD.pack(self.serial, self.t_us, self.kind, self.value, len(raw)) + raw

    @classmethod
    def from_payload(cls, data: bytes) -> "LogRecord":
        if len(data) < _RECORD_HEAD.size:
            raise DatalogError(f"record payload of {len(data)} bytes")
        serial, t_us, kind, value, n = _RECORD_HEAD.unpack_from(data)
        if len(data) != _RECORD_HEAD.size + n:
            raise DatalogError("record length mismatch")
        return cls(serial, t_us, kind, value, data[_RECORD_HEAD.size :].decode("utf-8"))


def _file_header(run_id: str) -> bytes:
    raw = run_id.encode("utf-8")
    return FILE_MAGIC + struct.pack("<BH", FILE_VERSION, len(raw)) + raw


class LogWriter:
    """Appends records to one run's log; serials increase from 0."""

    def __init__(self, path, run_id: str):
        self.path = Path(path)
        self.run_id = run_id
        self._serial = 0
        self._fh = open(self.path, "wb")
        self._fh.write(_file_header(run_id))

    def append(self, kind: int, t_us: int, value: float = 0.0, label: str = "") -> LogRecord:
        if kind not in RECORD_KINDS:
            raise DatalogError(f"unknown record kind {kind}")
        record = LogRecord(self._serial, int(t_us), kind, float(value), label)
        payload = record.payload()
        frame = struct.pack("<I", len(payload)) + payload
        frame += struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
        self._fh.write(frame)
        self._serial += 1
        return record

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "LogWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass(frozen=True)
class LogFile:
    run_id: str
    records: tuple[LogRecord, ...]
    truncated: bool  # trailing bytes did not form a whole valid record


def read_log(path) -> LogFile:
    """Longest valid prefix of a log file; a torn tail sets `truncated`."""
    data = Path(path).read_bytes()
    if len(data) < 7 or data[:4] != FILE_MAGIC:
        raise DatalogError(f"{path}: not a run log")
    version, n = struct.unpack_from("<BH", data, 4)
    if version != FILE_VERSION:
        raise DatalogError(f"{path}: unsupported log version {version}")
    if len(data) < 7 + n:
        raise DatalogError(f"{path}: truncated header")
    run_id = data[7 : 7 + n].decode("utf-8")
    pos = 7 + n
    records: list[LogRecord] = []
    truncated = False
    while pos < len(data):
        if pos + 4 > len(data):
            truncated = True
            break
        (length,) = struct.unpack_from("<I", data, pos)
        end = pos + 4 + length + 4
        if end > len(data):
            truncated = True
            break
        payload = data[pos + 4 : pos + 4 + length]
        (stated,) = struct.unpack_from("<I", data, pos + 4 + length)
        if stated != (zlib.crc32(payload) & 0xFFFFFFFF):
            truncated = True
            break
        try:
            records.append(LogRecord.from_payload(payload))
        except DatalogError:
            truncated = True
            break
        pos = end
    return LogFile(run_id, tuple(records), truncated)


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunSummary:
    """Mergeable fold over run records.

    Cycle moments are kept as (count, sum, sum of squares) so two
    summaries combine exactly; derived statistics are properties.
    """

    completed: int = 0
    force_trips: int = 0
    waits: int = 0
    long_waits: int = 0
    wait_threshold_s: float = DEFAULT_WAIT_THRESHOLD_S
    cycle_sum_s: float = 0.0
    cycle_sumsq_s: float = 0.0
    cycle_min_s: float = math.inf
    cycle_max_s: float = 0.0
    first_t_us: int | None = None
    last_t_us: int | None = None

    @property
    def mean_cycle_s(self) -> float:
        return self.cycle_sum_s / self.completed if self.completed else 0.0

    @property
    def cycle_variance(self) -> float:
        if self.completed == 0:
            return 0.0
        m = self.mean_cycle_s
        return max(self.cycle_sumsq_s / self.completed - m * m, 0.0)

    def merge(self, other: "RunSummary") -> "RunSummary":
        if other.wait_threshold_s != self.wait_threshold_s:
            raise DatalogError("cannot merge summaries with different wait thresholds")
        firsts = [t for t in (self.first_t_us, other.first_t_us) if t is not None]
        lasts = [t for t in (self.last_t_us, other.last_t_us) if t is not None]
        return RunSummary(
            completed=self.completed + other.completed,
            force_trips=self.force_trips + other.force_trips,
            waits=self.waits + other.waits,
            long_waits=self.long_waits + other.long_waits,
            wait_threshold_s=self.wait_threshold_s,
            cycle_sum_s=self.cycle_sum_s + other.cycle_sum_s,
            cycle_sumsq_s=self.cycle_sumsq_s + other.cycle_sumsq_s,
            cycle_min_s=min(self.cycle_min_s, other.cycle_min_s),
            cycle_max_s=max(self.cycle_max_s, other.cycle_max_s),
            first_t_us=min(firsts) if firsts else None,
            last_t_us=max(lasts) if lasts else None,
        )


def summarize(records, wait_threshold_s: float = DEFAULT_WAIT_THRESHOLD_S) -> RunSummary:
    out = RunSummary(wait_threshold_s=wait_threshold_s)
    for r in records:
        firsts = out.first_t_us
        out = replace(
            out,
            first_t_us=r.t_us if firsts is None else min(firsts, r.t_us),
            last_t_us=r.t_us if out.last_t_us is None else max(out.last_t_us, r.t_us),
        )
        if r.kind == RECORD_CYCLE:
            out = replace(
                out,
                completed=out.completed + 1,
                cycle_sum_s=out.cycle_sum_s + r.value,
                cycle_sumsq_s=out.cycle_sumsq_s + r.value * r.value,
                cycle_min_s=min(out.cycle_min_s, r.value),
                cycle_max_s=max(out.cycle_max_s, r.value),
            )
        elif r.kind == RECORD_TRIP:
            out = replace(out, force_trips=out.force_trips + 1)
        elif r.kind == RECORD_WAIT:
            out = replace(
                out,
                waits=out.waits + 1,
                long_waits=out.long_waits + (1 if r.value > wait_threshold_s else 0),
            )
    return out


def predict_throughput(summary: RunSummary, shift_s: float = 28800.0) -> int:
    """Expected completions in a shift, from observed cycle moments.

    With no observed variance the answer is exact integer arithmetic;
    otherwise the first-order renewal correction adjusts the naive
    shift/mean ratio.  Refuses to extrapolate from under
    MIN_CYCLES_FOR_PREDICTION cycles.
    """
    if summary.completed < MIN_CYCLES_FOR_PREDICTION:
        raise InsufficientDataError(
            f"{summary.completed} completed cycles, need {MIN_CYCLES_FOR_PREDICTION}"
        )
    m = summary.mean_cycle_s
    if m <= 0:
        raise DatalogError("non-positive mean cycle time")
    v = summary.cycle_variance
    if v <= 1e-12 * m * m:
        shift_us = int(round(shift_s * 1e6))
        cycle_us = int(round(m * 1e6))
        return shift_us // cycle_us
    n = shift_s / m + (v / (m * m) - 1.0) / 2.0
    return max(int(math.floor(n + 1e-9)), 0)


def detect_noncompliance(log: LogFile) -> list[str]:
    """Structural findings that make a log untrustworthy as evidence."""
    findings: list[str] = []
    if log.truncated:
        findings.append("log ends in a torn record")
    prev_serial = -1
    prev_t = -1
    for r in log.records:
        if r.serial != prev_serial + 1:
            findings.append(f"serial {r.serial} after {prev_serial} (expected {prev_serial + 1})")
        if r.t_us < prev_t:
            findings.append(f"record {r.serial}: time {r.t_us} us regressed from {prev_t} us")
        if r.kind not in RECORD_KINDS:
            findings.append(f"record {r.serial}: unknown kind {r.kind}")
        if r.kind == RECORD_CYCLE and r.value <= 0:
            findings.append(f"record {r.serial}: non-positive cycle time {r.value}")
        if r.kind == RECORD_WAIT and r.value < 0:
            findings.append(f"record {r.serial}: negative wait {r.value}")
        prev_serial = r.serial
        prev_t = max(prev_t, r.t_us)
    return findings
