"""Flow-log ingestion: CSV parsing into canonical records and time windowing.

Heterogeneous flow CSVs (canonical, CTU-13 NetFlow, CICIDS2017) are mapped
onto one record form via a :class:`SchemaMap`. Invalid rows are counted and
skipped; self-loop flows are dropped because the edge model is defined on
ordered pairs of distinct hosts.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

from .errors import SchemaError

CANONICAL_COLUMNS = (
    "ts",
    "src_host",
    "dst_host",
    "src_port",
    "dst_port",
    "protocol",
    "duration",
    "bytes",
    "packets",
    "label",
)

REQUIRED_FIELDS = (
    "ts",
    "src_host",
    "dst_host",
    "protocol",
    "duration",
    "bytes",
    "packets",
    "label",
)

OPTIONAL_FIELDS = ("src_port", "dst_port")


@dataclass(frozen=True)
class FlowRecord:
    """One normalized flow-log row.

    ``ts`` is seconds since epoch; ``duration`` seconds; ``bytes`` and
    ``packets`` non-negative counts. Ports may be absent. ``label`` keeps
    the source dataset's tag verbatim; anything other than the configured
    benign tag is treated as malicious downstream.
    """

    ts: float
    src_host: str
    dst_host: str
    src_port: int | None
    dst_port: int | None
    protocol: str
    duration: float
    bytes: int
    packets: int
    label: str


@dataclass(frozen=True)
class SchemaMap:
    """Column mapping from a source CSV header onto FlowRecord fields.

    ``columns`` maps each FlowRecord field name to the source column name;
    ports may be omitted. ``timestamp_format`` is either ``"epoch"``
    (numeric seconds) or one or more ``strptime`` formats separated by
    ``"|"``, tried in order. ``duration_scale`` converts the source
    duration unit into seconds (CICIDS2017 reports microseconds).
    """

    columns: dict[str, str]
    benign_tag: str = "benign"
    timestamp_format: str = "epoch"
    duration_scale: float = 1.0

    def __post_init__(self) -> None:
        missing = [f for f in REQUIRED_FIELDS if f not in self.columns]
        if missing:
            raise SchemaError(f"SchemaMap is missing required field mappings: {missing}")
        unknown = [f for f in self.columns if f not in REQUIRED_FIELDS + OPTIONAL_FIELDS]
        if unknown:
            raise SchemaError(f"SchemaMap maps unknown fields: {unknown}")


SCHEMA_PRESETS: dict[str, SchemaMap] = {
    # The canonical schema emitted by `flowgad synth-gen` and `flowgad ingest`.
    "canonical": SchemaMap(
        columns={f: f for f in CANONICAL_COLUMNS},
        benign_tag="benign",
        timestamp_format="epoch",
    ),
    # CTU-13 Argus binetflow CSVs. Labels are kept verbatim; CTU label
    # strings should be normalized to a single benign tag beforehand (see
    # README reproduction notes).
    "ctu13": SchemaMap(
        columns={
            "ts": "StartTime",
            "duration": "Dur",
            "protocol": "Proto",
            "src_host": "SrcAddr",
            "src_port": "Sport",
            "dst_host": "DstAddr",
            "dst_port": "Dport",
            "packets": "TotPkts",
            "bytes": "TotBytes",
            "label": "Label",
        },
        benign_tag="benign",
        timestamp_format="%Y/%m/%d %H:%M:%S.%f|%Y/%m/%d %H:%M:%S",
    ),
    # CICIDS2017 flow CSVs (GeneratedLabelledFlows). Directed reading keeps
    # the forward (source-side) totals; duration arrives in microseconds.
    "cicids2017": SchemaMap(
        columns={
            "ts": "Timestamp",
            "src_host": "Source IP",
            "src_port": "Source Port",
            "dst_host": "Destination IP",
            "dst_port": "Destination Port",
            "protocol": "Protocol",
            "duration": "Flow Duration",
            "bytes": "Total Length of Fwd Packets",
            "packets": "Total Fwd Packets",
            "label": "Label",
        },
        benign_tag="BENIGN",
        timestamp_format="%d/%m/%Y %H:%M:%S|%d/%m/%Y %H:%M",
        duration_scale=1e-6,
    ),
}


@dataclass
class ParseStats:
    """Counters accumulated while parsing one file."""

    accepted: int = 0
    rejected: int = 0
    reasons: Counter = field(default_factory=Counter)

    def reject(self, reason: str) -> None:
        self.rejected += 1
        self.reasons[reason] += 1


@dataclass(frozen=True)
class WindowBatch:
    """All accepted records of one non-empty fixed time window."""

    window_index: int
    t_start: float
    t_end: float
    records: tuple[FlowRecord, ...]


def _parse_timestamp(value: str, fmt: str) -> float:
    if fmt == "epoch":
        ts = float(value)
        if not math.isfinite(ts):
            raise ValueError("non-finite timestamp")
        return ts
    last_error: Exception | None = None
    for candidate in fmt.split("|"):
        try:
            dt = datetime.strptime(value.strip(), candidate)
            return dt.replace(tzinfo=timezone.utc).timestamp()
        except ValueError as exc:
            last_error = exc
    raise ValueError(f"timestamp {value!r} matches no configured format") from last_error


def _parse_count(value: str) -> int:
    x = float(value)
    if not math.isfinite(x) or x < 0:
        raise ValueError("count must be finite and non-negative")
    return int(round(x))


def _parse_duration(value: str, scale: float) -> float:
    x = float(value) * scale
    if not math.isfinite(x) or x < 0:
        raise ValueError("duration must be finite and non-negative")
    return x


def _parse_port(value: str | None) -> int | None:
    # Unparseable or out-of-range ports degrade to "absent" instead of
    # rejecting the row; they land in the "other" bucket downstream.
    if value is None:
        return None
    text = value.strip()
    if not text:
        return None
    try:
        port = int(text, 16) if text.lower().startswith("0x") else int(float(text))
    except ValueError:
        return None
    if 0 <= port <= 65535:
        return port
    return None


def parse_flow_csv(
    path: str | Path,
    schema: SchemaMap,
    stats: ParseStats | None = None,
) -> Iterator[FlowRecord]:
    """Yield normalized FlowRecords from one CSV in file order.

    Malformed rows (missing values, non-finite or negative numerics,
    unparseable timestamps, empty labels) and self-loop flows are counted
    into ``stats`` and skipped. A header missing a mapped column raises
    :class:`SchemaError`; an unreadable file raises :class:`OSError`.
    """
    path = Path(path)
    if stats is None:
        stats = ParseStats()
    with path.open(newline="", encoding="utf-8", errors="replace") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, no header") from None
        header = [h.strip() for h in header]
        positions: dict[str, int] = {}
        for fld, col in schema.columns.items():
            try:
                positions[fld] = header.index(col)
            except ValueError:
                raise SchemaError(f"{path}: mapped column {col!r} not in header") from None

        n_cols = len(header)
        for row in reader:
            if not row:
                continue
            if len(row) < n_cols:
                stats.reject("short_row")
                continue
            try:
                get = lambda f: row[positions[f]]  # noqa: E731
                src_host = get("src_host").strip()
                dst_host = get("dst_host").strip()
                label = get("label").strip()
                if not src_host or not dst_host:
                    stats.reject("missing_host")
                    continue
                if not label:
                    stats.reject("missing_label")
                    continue
                record = FlowRecord(
                    ts=_parse_timestamp(get("ts"), schema.timestamp_format),
                    src_host=src_host,
                    dst_host=dst_host,
                    src_port=_parse_port(get("src_port") if "src_port" in positions else None),
                    dst_port=_parse_port(get("dst_port") if "dst_port" in positions else None),
                    protocol=get("protocol").strip(),
                    duration=_parse_duration(get("duration"), schema.duration_scale),
                    bytes=_parse_count(get("bytes")),
                    packets=_parse_count(get("packets")),
                    label=label,
                )
            except (ValueError, OverflowError):
                stats.reject("bad_value")
                continue
            if record.src_host == record.dst_host:
                stats.reject("self_loop")
                continue
            stats.accepted += 1
            yield record


def partition_windows(
    records: Iterable[FlowRecord], window_seconds: float
) -> list[WindowBatch]:
    """Bucket records into fixed half-open windows anchored at the minimum ts.

    window_index = floor((ts - t0) / window_seconds). Empty windows emit no
    batch; batches are returned in increasing window order with records in
    input order. An empty stream yields an empty list.
    """
    if window_seconds <= 0:
        raise ValueError(f"window_seconds must be positive, got {window_seconds}")
    materialized = list(records)
    if not materialized:
        return []
    t0 = min(r.ts for r in materialized)
    buckets: dict[int, list[FlowRecord]] = {}
    for rec in materialized:
        idx = int(math.floor((rec.ts - t0) / window_seconds))
        buckets.setdefault(idx, []).append(rec)
    return [
        WindowBatch(
            window_index=idx,
            t_start=t0 + idx * window_seconds,
            t_end=t0 + (idx + 1) * window_seconds,
            records=tuple(buckets[idx]),
        )
        for idx in sorted(buckets)
    ]


def write_canonical_csv(path: str | Path, records: Iterable[FlowRecord]) -> int:
    """Write records in the canonical column layout; returns the row count."""
    path = Path(path)
    n = 0
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CANONICAL_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    repr(r.ts),
                    r.src_host,
                    r.dst_host,
                    "" if r.src_port is None else r.src_port,
                    "" if r.dst_port is None else r.dst_port,
                    r.protocol,
                    repr(r.duration),
                    r.bytes,
                    r.packets,
                    r.label,
                ]
            )
            n += 1
    return n
