"""Windowed communication graphs: aggregation, features, targets, labels.

Each non-empty time window becomes one directed attributed graph. Multiple
flows between the same ordered host pair merge into a single edge whose
statistics are aggregated; node rows summarize per-host activity. All
count and volume features are log1p-compressed to tame heavy tails.

Feature layout (version ``node51-edge9-v1``):

Edge (9 dims): log1p flow count, bytes, packets; one-hot dominant
destination-port bucket (web, dns, other); log1p bytes/flow, packets/flow,
bytes/packet. The first three dims double as the regression targets; the
dominant bucket is the classification target.

Node (51 dims): 12 outgoing + 12 incoming direction blocks, 8 combined
totals, then 19 neighborhood/asymmetry enhancements. See
``NODE_FEATURE_NAMES`` for the exact order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .ingest import FlowRecord, WindowBatch

FEATURE_LAYOUT_VERSION = "node51-edge9-v1"

PORT_BUCKETS = ("web", "dns", "other")
BUCKET_INDEX = {name: i for i, name in enumerate(PORT_BUCKETS)}
WEB_PORTS = frozenset({80, 443})
DNS_PORT = 53

NODE_DIM = 51
EDGE_DIM = 9
REG_TARGET_DIM = 3
N_BUCKETS = 3

_DIRECTION_BLOCK = (
    "flows",
    "bytes",
    "packets",
    "duration",
    "mean_duration",
    "bytes_per_sec",
    "packets_per_sec",
    "bytes_per_flow",
    "packets_per_flow",
    "degree",
    "bytes_per_degree",
    "packets_per_degree",
)

NODE_FEATURE_NAMES: tuple[str, ...] = (
    tuple(f"out_{n}" for n in _DIRECTION_BLOCK)
    + tuple(f"in_{n}" for n in _DIRECTION_BLOCK)
    + (
        "total_flows",
        "total_bytes",
        "total_packets",
        "total_duration",
        "total_degree",
        "bytes_per_total_degree",
        "packets_per_total_degree",
        "flows_per_total_degree",
    )
    + (
        "uniq_out_neighbors",
        "uniq_in_neighbors",
        "uniq_total_neighbors",
        "flows_per_out_neighbor",
        "flows_per_in_neighbor",
        "flows_per_total_neighbor",
        "out_ratio_bytes",
        "out_ratio_packets",
        "out_ratio_flows",
        "bytes_per_out_neighbor",
        "packets_per_out_neighbor",
        "bytes_per_in_neighbor",
        "packets_per_in_neighbor",
        "bytes_per_packet_out",
        "bytes_per_packet_in",
        "bytes_per_packet_total",
        "out_frac_web",
        "out_frac_dns",
        "out_frac_other",
    )
)

assert len(NODE_FEATURE_NAMES) == NODE_DIM


def port_bucket(dst_port: int | None) -> str:
    """Coarse destination-port class: web (80/443), dns (53), else other."""
    if dst_port in WEB_PORTS:
        return "web"
    if dst_port == DNS_PORT:
        return "dns"
    return "other"


@dataclass
class EdgeAggregate:
    """Merged statistics of all flows on one ordered host pair."""

    src: str
    dst: str
    flow_count: int = 0
    bytes: int = 0
    packets: int = 0
    duration: float = 0.0
    bucket_flows: np.ndarray | None = None
    bucket_bytes: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.bucket_flows is None:
            self.bucket_flows = np.zeros(N_BUCKETS, dtype=np.int64)
        if self.bucket_bytes is None:
            self.bucket_bytes = np.zeros(N_BUCKETS, dtype=np.int64)

    def add(self, flow: FlowRecord) -> None:
        b = BUCKET_INDEX[port_bucket(flow.dst_port)]
        self.flow_count += 1
        self.bytes += flow.bytes
        self.packets += flow.packets
        self.duration += flow.duration
        self.bucket_flows[b] += 1
        self.bucket_bytes[b] += flow.bytes


def aggregate_edges(batch: WindowBatch) -> list[EdgeAggregate]:
    """One aggregate per distinct ordered (src, dst), in first-seen order."""
    if not batch.records:
        raise DataError(f"window {batch.window_index} has no records")
    out: dict[tuple[str, str], EdgeAggregate] = {}
    for flow in batch.records:
        key = (flow.src_host, flow.dst_host)
        agg = out.get(key)
        if agg is None:
            agg = out[key] = EdgeAggregate(src=flow.src_host, dst=flow.dst_host)
        agg.add(flow)
    return list(out.values())


def dominant_bucket(agg: EdgeAggregate) -> int:
    """Bucket with the most flows; ties broken by bytes, then web > dns > other."""
    order = sorted(
        range(N_BUCKETS),
        key=lambda b: (-int(agg.bucket_flows[b]), -int(agg.bucket_bytes[b]), b),
    )
    return order[0]


def _log1p(x: float) -> float:
    return math.log1p(x)


def _ratio(num: float, den: float) -> float:
    # Division guard: zero denominator evaluates to 0.
    return num / den if den > 0 else 0.0


def compute_edge_features(agg: EdgeAggregate) -> tuple[np.ndarray, np.ndarray, int]:
    """9-dim edge vector plus the (regression targets, bucket label) pair."""
    bucket = dominant_bucket(agg)
    onehot = [0.0, 0.0, 0.0]
    onehot[bucket] = 1.0
    feat = np.array(
        [
            _log1p(agg.flow_count),
            _log1p(agg.bytes),
            _log1p(agg.packets),
            *onehot,
            _log1p(agg.bytes / agg.flow_count),
            _log1p(agg.packets / agg.flow_count),
            _log1p(agg.bytes / max(agg.packets, 1)),
        ],
        dtype=np.float64,
    )
    return feat, feat[:REG_TARGET_DIM].copy(), bucket


def compute_node_features(
    hosts: Sequence[str],
    aggregates: Sequence[EdgeAggregate],
    window_seconds: float | None = None,
    rate_denominator: str = "duration",
) -> np.ndarray:
    """|V| x 51 node matrix from this window's edge aggregates.

    Rate statistics divide by summed flow duration by default; pass
    ``rate_denominator="window"`` (with ``window_seconds``) to divide by the
    window length instead.
    """
    if rate_denominator not in ("duration", "window"):
        raise ValueError(f"unknown rate_denominator {rate_denominator!r}")
    if rate_denominator == "window" and not window_seconds:
        raise ValueError("window rate_denominator requires window_seconds")

    index = {h: i for i, h in enumerate(hosts)}
    n = len(hosts)
    flows = np.zeros((n, 2))
    byts = np.zeros((n, 2))
    pkts = np.zeros((n, 2))
    dur = np.zeros((n, 2))
    degree = np.zeros((n, 2))
    out_bucket_flows = np.zeros((n, N_BUCKETS))
    neighbors_out: list[set[int]] = [set() for _ in range(n)]
    neighbors_in: list[set[int]] = [set() for _ in range(n)]

    for agg in aggregates:
        s, d = index[agg.src], index[agg.dst]
        for node, side in ((s, 0), (d, 1)):
            flows[node, side] += agg.flow_count
            byts[node, side] += agg.bytes
            pkts[node, side] += agg.packets
            dur[node, side] += agg.duration
            degree[node, side] += 1
        out_bucket_flows[s] += agg.bucket_flows
        neighbors_out[s].add(d)
        neighbors_in[d].add(s)

    X = np.zeros((n, NODE_DIM))
    for i in range(n):
        row: list[float] = []
        for side in (0, 1):  # outgoing, incoming
            f, b, p, t, deg = flows[i, side], byts[i, side], pkts[i, side], dur[i, side], degree[i, side]
            rate_den = t if rate_denominator == "duration" else float(window_seconds or 0.0)
            row += [
                _log1p(f),
                _log1p(b),
                _log1p(p),
                _log1p(t),
                _ratio(t, f),
                _log1p(_ratio(b, rate_den)),
                _log1p(_ratio(p, rate_den)),
                _log1p(_ratio(b, f)),
                _log1p(_ratio(p, f)),
                _log1p(deg),
                _log1p(_ratio(b, deg)),
                _log1p(_ratio(p, deg)),
            ]
        tf, tb, tp = flows[i].sum(), byts[i].sum(), pkts[i].sum()
        tt, tdeg = dur[i].sum(), degree[i].sum()
        row += [
            _log1p(tf),
            _log1p(tb),
            _log1p(tp),
            _log1p(tt),
            _log1p(tdeg),
            _log1p(_ratio(tb, tdeg)),
            _log1p(_ratio(tp, tdeg)),
            _log1p(_ratio(tf, tdeg)),
        ]

        uo, ui = len(neighbors_out[i]), len(neighbors_in[i])
        ut = len(neighbors_out[i] | neighbors_in[i])
        ob, ib = byts[i, 0], byts[i, 1]
        op, ip_ = pkts[i, 0], pkts[i, 1]
        of, if_ = flows[i, 0], flows[i, 1]
        row += [
            _log1p(uo),
            _log1p(ui),
            _log1p(ut),
            _log1p(_ratio(of, uo)),
            _log1p(_ratio(if_, ui)),
            _log1p(_ratio(tf, ut)),
            _dir_ratio(ob, ib),
            _dir_ratio(op, ip_),
            _dir_ratio(of, if_),
            _log1p(_ratio(ob, uo)),
            _log1p(_ratio(op, uo)),
            _log1p(_ratio(ib, ui)),
            _log1p(_ratio(ip_, ui)),
            _log1p(_ratio(ob, op)),
            _log1p(_ratio(ib, ip_)),
            _log1p(_ratio(tb, tp)),
            _ratio(out_bucket_flows[i, 0], of),
            _ratio(out_bucket_flows[i, 1], of),
            _ratio(out_bucket_flows[i, 2], of),
        ]
        X[i] = row
    return X


def _dir_ratio(out_value: float, in_value: float) -> float:
    # out/(out+in) with the symmetric neutral value 0.5 for 0/0.
    total = out_value + in_value
    return out_value / total if total > 0 else 0.5


@dataclass
class GraphSnapshot:
    """One window's directed attributed graph with targets and labels."""

    window_index: int
    t_start: float
    t_end: float
    hosts: tuple[str, ...]
    edges: np.ndarray  # |E| x 2 int64 (src index, dst index)
    node_features: np.ndarray  # |V| x 51 float64
    edge_features: np.ndarray  # |E| x 9 float64
    edge_targets_reg: np.ndarray  # |E| x 3 float64
    edge_targets_cls: np.ndarray  # |E| int64 bucket labels
    node_labels: np.ndarray  # |V| bool
    graph_label: bool

    @property
    def n_hosts(self) -> int:
        return len(self.hosts)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def n_flows(self) -> int:
        return int(round(float(np.expm1(self.edge_features[:, 0]).sum())))


def assign_labels(
    batch: WindowBatch, hosts: Sequence[str], benign_tag: str
) -> tuple[np.ndarray, bool]:
    """Source-centric labels: a malicious flow marks only its initiating host."""
    index = {h: i for i, h in enumerate(hosts)}
    node_labels = np.zeros(len(hosts), dtype=bool)
    graph_label = False
    for flow in batch.records:
        if flow.label != benign_tag:
            graph_label = True
            node_labels[index[flow.src_host]] = True
    return node_labels, graph_label


def build_snapshot(
    batch: WindowBatch,
    benign_tag: str,
    window_seconds: float | None = None,
    rate_denominator: str = "duration",
) -> GraphSnapshot:
    """Assemble one GraphSnapshot from one WindowBatch."""
    aggregates = aggregate_edges(batch)
    hosts = tuple(sorted({h for a in aggregates for h in (a.src, a.dst)}))
    index = {h: i for i, h in enumerate(hosts)}

    m = len(aggregates)
    edges = np.zeros((m, 2), dtype=np.int64)
    edge_features = np.zeros((m, EDGE_DIM))
    targets_reg = np.zeros((m, REG_TARGET_DIM))
    targets_cls = np.zeros(m, dtype=np.int64)
    for k, agg in enumerate(aggregates):
        edges[k] = (index[agg.src], index[agg.dst])
        edge_features[k], targets_reg[k], targets_cls[k] = compute_edge_features(agg)

    node_features = compute_node_features(
        hosts, aggregates, window_seconds=window_seconds, rate_denominator=rate_denominator
    )
    node_labels, graph_label = assign_labels(batch, hosts, benign_tag)
    return GraphSnapshot(
        window_index=batch.window_index,
        t_start=batch.t_start,
        t_end=batch.t_end,
        hosts=hosts,
        edges=edges,
        node_features=node_features,
        edge_features=edge_features,
        edge_targets_reg=targets_reg,
        edge_targets_cls=targets_cls,
        node_labels=node_labels,
        graph_label=graph_label,
    )


def build_snapshots(
    batches: Iterable[WindowBatch],
    benign_tag: str,
    window_seconds: float | None = None,
    rate_denominator: str = "duration",
) -> list[GraphSnapshot]:
    return [
        build_snapshot(b, benign_tag, window_seconds, rate_denominator) for b in batches
    ]


@dataclass(frozen=True)
class FeatureStats:
    """Per-dimension node-feature mean/std over benign training snapshots."""

    mean: np.ndarray
    std: np.ndarray
    floor: float = 1e-6

    def __post_init__(self) -> None:
        if np.any(np.maximum(self.std, self.floor) <= 0):
            raise ValueError("std floor must be positive")


def fit_feature_stats(
    train_snapshots: Sequence[GraphSnapshot], floor: float = 1e-6
) -> FeatureStats:
    """Pool node rows over training snapshots and fit mean/std (population)."""
    if not train_snapshots:
        raise DataError("cannot fit feature statistics on an empty training set")
    pooled = np.concatenate([s.node_features for s in train_snapshots], axis=0)
    return FeatureStats(mean=pooled.mean(axis=0), std=pooled.std(axis=0), floor=floor)


def standardize(
    snapshots: Sequence[GraphSnapshot], stats: FeatureStats
) -> list[GraphSnapshot]:
    """Return copies with node features replaced by (x - mean) / max(std, floor).

    Edge features and targets are left in raw log1p scale: the regression
    head must reproduce them.
    """
    denom = np.maximum(stats.std, stats.floor)
    return [
        replace(s, node_features=(s.node_features - stats.mean) / denom)
        for s in snapshots
    ]


def chronological_split(
    snapshots: Sequence[GraphSnapshot], train_fraction: float = 0.8
) -> tuple[list[GraphSnapshot], list[GraphSnapshot]]:
    """Earliest benign windows form the training pool; the rest is the test set.

    The first floor(train_fraction * n_benign) benign snapshots (by window
    order) train the model; remaining benign snapshots plus all malicious
    ones form the test set, re-sorted chronologically.
    """
    ordered = sorted(snapshots, key=lambda s: s.window_index)
    benign = [s for s in ordered if not s.graph_label]
    malicious = [s for s in ordered if s.graph_label]
    if not benign:
        raise DataError("no benign snapshots: cannot form a training pool")
    n_train = int(math.floor(train_fraction * len(benign)))
    if n_train == 0:
        raise DataError(
            f"degenerate split: {len(benign)} benign snapshot(s) yield an empty training pool"
        )
    train = benign[:n_train]
    test = sorted(benign[n_train:] + malicious, key=lambda s: s.window_index)
    return train, test
