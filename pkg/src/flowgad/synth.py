"""Seeded synthetic traffic: benign client/server background plus stealthy beacons.

Benign clients talk to role-consistent servers (web-heavy mixes, heavy-tailed
lognormal volumes). Compromised clients additionally emit periodic small
flows to one dedicated rare endpoint on an unclassified port. The injected
signal is structural, not volumetric: compromised hosts are chosen near the
median of the benign volume distribution and the beacon volume is verified
to keep their totals inside the benign interquartile range.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .ingest import FlowRecord, write_canonical_csv

MALICIOUS_LABEL = "c2-beacon"
C2_SERVER = "198.51.100.77"


@dataclass(frozen=True)
class SynthConfig:
    n_hosts: int = 40
    n_servers: int = 6
    duration_seconds: float = 3600.0
    window_seconds: float = 30.0
    benign_flow_rate: float = 0.12  # flows per client per second
    rate_spread: float = 0.2  # lognormal sigma of per-client rate multipliers
    bucket_mix: tuple[float, float, float] = (0.62, 0.28, 0.10)  # web, dns, other
    web_bytes_mu: float = 8.3
    web_bytes_sigma: float = 0.6
    dns_bytes_mu: float = 5.3
    dns_bytes_sigma: float = 0.3
    other_bytes_mu: float = 6.9
    other_bytes_sigma: float = 0.55
    n_compromised: int = 2
    c2_start_fraction: float = 0.55
    c2_period_seconds: float = 9.0
    c2_jitter_seconds: float = 2.0
    # Small constant-rate beacons on an unclassified port to one dedicated
    # rare endpoint: volumetrically inconspicuous, structurally inconsistent.
    c2_dst_port: int = 6667
    c2_bytes_mean: float = 140.0
    c2_bytes_sigma: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_compromised >= self.n_hosts - self.n_servers:
            raise ValueError("n_compromised must be smaller than the client count")
        if self.benign_flow_rate <= 0 or self.duration_seconds <= 0:
            raise ValueError("rates and durations must be positive")


def _server_roles(n_servers: int) -> list[tuple[str, str, int]]:
    """(host, bucket role, service port) per server; web-heavy assignment."""
    other_ports = (8080, 3389, 9200, 5432)
    roles: list[tuple[str, str, int]] = []
    n_web = max(1, int(round(n_servers * 0.5)))
    n_dns = 1 if n_servers >= 2 else 0
    for j in range(n_servers):
        host = f"10.0.1.{j + 1}"
        if j < n_web:
            roles.append((host, "web", 443 if j % 2 == 0 else 80))
        elif j < n_web + n_dns:
            roles.append((host, "dns", 53))
        else:
            roles.append((host, "other", other_ports[j % len(other_ports)]))
    return roles


def _sample_volume(rng: np.random.Generator, mu: float, sigma: float) -> int:
    return max(60, int(round(rng.lognormal(mu, sigma))))


def generate_flows(config: SynthConfig) -> tuple[list[FlowRecord], dict]:
    """Deterministic flow list (sorted by time) plus the ground-truth manifest."""
    rng = np.random.default_rng(config.seed)
    n_clients = config.n_hosts - config.n_servers
    if n_clients < 1:
        raise DataError("config leaves no client hosts")
    clients = [f"10.0.0.{i + 1}" for i in range(n_clients)]
    servers = _server_roles(config.n_servers)
    web_servers = [s for s in servers if s[1] == "web"]
    dns_servers = [s for s in servers if s[1] == "dns"]
    other_servers = [s for s in servers if s[1] == "other"]

    mix = np.asarray(config.bucket_mix, dtype=np.float64)
    mix = mix / mix.sum()

    flows: list[tuple[float, int, FlowRecord]] = []
    seq = 0
    benign_bytes = np.zeros(n_clients)

    for ci, client in enumerate(clients):
        rate = config.benign_flow_rate * rng.lognormal(0.0, config.rate_spread)
        client_mix = mix * rng.lognormal(0.0, 0.1, size=3)
        client_mix = client_mix / client_mix.sum()
        # Stable per-client server preferences.
        preferred_web = rng.choice(len(web_servers), size=min(2, len(web_servers)), replace=False)
        preferred_other = int(rng.integers(len(other_servers))) if other_servers else -1
        n_flows = rng.poisson(rate * config.duration_seconds)
        times = np.sort(rng.uniform(0.0, config.duration_seconds, size=n_flows))
        for t in times:
            bucket = int(rng.choice(3, p=client_mix))
            if bucket == 0 and web_servers:
                if len(preferred_web) > 1:
                    pick = preferred_web[0] if rng.random() < 0.7 else preferred_web[1]
                else:
                    pick = preferred_web[0]
                host, _, port = web_servers[int(pick)]
                size = _sample_volume(rng, config.web_bytes_mu, config.web_bytes_sigma)
                packets = max(2, int(round(size / 750.0 * rng.lognormal(0.0, 0.2))))
                dur = float(min(15.0, max(0.01, rng.exponential(0.8))))
                proto = "tcp"
            elif bucket == 1 and dns_servers:
                host, _, port = dns_servers[int(rng.integers(len(dns_servers)))]
                size = _sample_volume(rng, config.dns_bytes_mu, config.dns_bytes_sigma)
                packets = int(rng.integers(1, 3))
                dur = float(max(0.005, rng.exponential(0.04)))
                proto = "udp"
            else:
                if other_servers:
                    # Mostly the preferred service, occasionally any other one.
                    if rng.random() < 0.95 or len(other_servers) == 1:
                        host, _, port = other_servers[preferred_other]
                    else:
                        host, _, port = other_servers[int(rng.integers(len(other_servers)))]
                else:
                    host, _, port = web_servers[0]
                size = _sample_volume(rng, config.other_bytes_mu, config.other_bytes_sigma)
                packets = max(1, int(round(size / 600.0 * rng.lognormal(0.0, 0.3))))
                dur = float(min(20.0, max(0.01, rng.exponential(1.2))))
                proto = "tcp"
            flows.append(
                (
                    float(t),
                    seq,
                    FlowRecord(
                        ts=float(t),
                        src_host=client,
                        dst_host=host,
                        src_port=int(49152 + rng.integers(16000)),
                        dst_port=port,
                        protocol=proto,
                        duration=dur,
                        bytes=size,
                        packets=packets,
                        label="benign",
                    ),
                )
            )
            benign_bytes[ci] += size
            seq += 1

    # Compromised hosts: benign volume closest to the population median, so
    # the injected signal is structural rather than volumetric.
    order = np.argsort(np.abs(benign_bytes - np.median(benign_bytes)), kind="mergesort")
    compromised = [clients[int(i)] for i in order[: config.n_compromised]]
    extra_bytes = {c: 0.0 for c in compromised}

    for client in compromised:
        t = config.c2_start_fraction * config.duration_seconds
        # Deterministic phase offset per compromised host.
        t += float(rng.uniform(0.0, config.c2_period_seconds))
        while t < config.duration_seconds:
            size = max(120, int(round(rng.normal(config.c2_bytes_mean, config.c2_bytes_sigma))))
            flows.append(
                (
                    float(t),
                    seq,
                    FlowRecord(
                        ts=float(t),
                        src_host=client,
                        dst_host=C2_SERVER,
                        src_port=int(49152 + rng.integers(16000)),
                        dst_port=config.c2_dst_port,
                        protocol="tcp",
                        duration=float(max(0.05, rng.normal(0.35, 0.08))),
                        bytes=size,
                        packets=int(rng.integers(2, 4)),
                        label=MALICIOUS_LABEL,
                    ),
                )
            )
            extra_bytes[client] += size
            seq += 1
            t += config.c2_period_seconds + float(
                rng.uniform(-config.c2_jitter_seconds, config.c2_jitter_seconds)
            )

    if config.n_compromised:
        q25, q75 = np.percentile(benign_bytes, [25, 75])
        for client in compromised:
            total = benign_bytes[clients.index(client)] + extra_bytes[client]
            if not q25 <= total <= q75:
                raise DataError(
                    f"stealth constraint violated for {client}: total {total:.0f} "
                    f"outside benign IQR [{q25:.0f}, {q75:.0f}]"
                )

    flows.sort(key=lambda item: (item[0], item[1]))
    records = [rec for _, _, rec in flows]
    malicious_rows = [i for i, rec in enumerate(records) if rec.label != "benign"]
    manifest = {
        "format": "synth-manifest-v1",
        "compromised_hosts": sorted(compromised),
        "c2_server": C2_SERVER if config.n_compromised else None,
        "malicious_flow_rows": malicious_rows,
        "n_flows": len(records),
        "n_malicious_flows": len(malicious_rows),
        "clients": clients,
        "servers": [s[0] for s in servers],
        "config": dataclasses.asdict(config),
    }
    return records, manifest


def generate(
    config: SynthConfig,
    flows_path: str | Path,
    manifest_path: str | Path,
    extra_meta: dict | None = None,
) -> dict:
    """Write the canonical flow CSV and the ground-truth manifest; returns the manifest."""
    records, manifest = generate_flows(config)
    if extra_meta:
        manifest.update(extra_meta)
    write_canonical_csv(flows_path, records)
    Path(manifest_path).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest
