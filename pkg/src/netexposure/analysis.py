"""Post-scan analysis: exposure graph construction, hop estimation,
Internet-visibility filtering, stakeholder classification, and the
aggregate reports.

Everything here is batch and deterministic: given the same session records
and databases, outputs are byte-identical (reports sort keys and carry no
timestamps).
"""

from __future__ import annotations

import ipaddress
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .identity import (
    EngineIdFormat,
    MalformedEngineId,
    classify_engine_id,
    derive_identifier,
    relaxed_http_hash,
)
from .model import (
    Category,
    END_USER_PROTOCOLS,
    ExposureEdge,
    ExposureGraph,
    Protocol,
    ProbeStatus,
    ServiceIdentifier,
    SessionResult,
    Strength,
    classify_address,
    slash24,
)

# Common initial TTL values; the estimated distance is the gap to the
# lowest candidate at or above the observation.
TTL_CANDIDATES = (30, 64, 128, 255)


def ttl_to_hops(observed_ttl: int) -> int:
    if not 1 <= observed_ttl <= 255:
        raise ValueError(f"observed TTL out of range: {observed_ttl}")
    initial = min(c for c in TTL_CANDIDATES if c >= observed_ttl)
    return initial - observed_ttl


class DbLoadError(ValueError):
    """A file-backed lookup table failed to parse."""


@dataclass(frozen=True)
class SessionRecord:
    """One session tagged with the identity analysis needs."""

    provider: str
    endpoint_id: str
    result: SessionResult
    entry_address: str | None = None
    vantage_address: str | None = None


@dataclass(frozen=True)
class VisibilityOracle:
    """Known Internet-visible identifiers, in oracle lookup form."""

    known: frozenset[tuple[str, str]]

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Protocol | str, str]]) -> "VisibilityOracle":
        known = frozenset(
            (p.value if isinstance(p, Protocol) else str(p), value) for p, value in pairs
        )
        return cls(known)

    @classmethod
    def load(cls, path: str | Path) -> "VisibilityOracle":
        pairs = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DbLoadError(f"{path}:{lineno}: expected 'protocol<TAB>identifier'")
                pairs.append((parts[0], parts[1]))
        return cls.from_pairs(pairs)

    def contains(self, protocol: Protocol, value: str) -> bool:
        return (protocol.value, value) in self.known


class PrefixTable:
    """Longest-prefix lookup loaded from 'CIDR<TAB>value' lines."""

    def __init__(self, entries: Sequence[tuple[ipaddress.IPv4Network, str]]):
        self._entries = sorted(entries, key=lambda e: e[0].prefixlen, reverse=True)

    @classmethod
    def load(cls, path: str | Path) -> "PrefixTable":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DbLoadError(f"{path}:{lineno}: expected 'CIDR<TAB>value'")
                try:
                    entries.append((ipaddress.IPv4Network(parts[0]), parts[1]))
                except ValueError as exc:
                    raise DbLoadError(f"{path}:{lineno}: {exc}") from exc
        return cls(entries)

    def lookup(self, addr: str) -> str | None:
        ip = ipaddress.IPv4Address(addr)
        for network, value in self._entries:
            if ip in network:
                return value
        return None


# ---------------------------------------------------------------------------
# graph construction


def _session_touches_home(result: SessionResult, homes) -> bool:
    for packet in result.packets:
        for addr in (packet.src, packet.dst):
            ip = ipaddress.IPv4Address(addr)
            if any(ip in home for home in homes):
                return True
    return False


def _min_hops_by_host(result: SessionResult) -> dict[str, int]:
    """Minimum estimated hop count per source host, RST packets excluded."""
    best: dict[str, int] = {}
    for packet in result.packets:
        if packet.is_rst:
            continue
        hops = ttl_to_hops(packet.ttl)
        if packet.src not in best or hops < best[packet.src]:
            best[packet.src] = hops
    return best


def build_graph(
    records: Sequence[SessionRecord], home_networks: Sequence[str] = ()
) -> ExposureGraph:
    """Provider -> instance -> identifier graph over all session records.

    Sessions whose packet trace touches a home network are dropped whole.
    Hop counts come from the minimum-hop non-RST packet seen from each host;
    hosts that never appear in the trace get an unknown hop count.
    """
    homes = tuple(ipaddress.IPv4Network(n) for n in home_networks)
    providers: dict[str, None] = {}
    instances: dict[str, str] = {}
    identifiers: dict[ServiceIdentifier, None] = {}
    edges: list[ExposureEdge] = []

    for record in records:
        result = record.result
        if homes and _session_touches_home(result, homes):
            continue
        providers[record.provider] = None
        instances[record.endpoint_id] = record.provider
        local = result.session.local_address
        hops_by_host = _min_hops_by_host(result)
        local_net = slash24(local)
        for response in result.responses:
            if response.status is not ProbeStatus.SUCCESS:
                continue
            host_ip = ipaddress.IPv4Address(response.host)
            if any(host_ip in home for home in homes):
                continue
            identifier = derive_identifier(response)
            identifiers[identifier] = None
            oracle_key = (
                relaxed_http_hash(response)
                if response.protocol is Protocol.HTTP
                else identifier.value
            )
            edges.append(
                ExposureEdge(
                    endpoint_id=record.endpoint_id,
                    identifier=identifier,
                    host=response.host,
                    hop_count=hops_by_host.get(response.host),
                    same_slash24=slash24(response.host) == local_net,
                    src_class=classify_address(local),
                    dst_class=classify_address(response.host),
                    oracle_key=oracle_key,
                    vantage_address=record.vantage_address,
                )
            )

    return ExposureGraph(
        providers=tuple(providers),
        instances=instances,
        identifiers=tuple(identifiers),
        edges=tuple(edges),
    )


# ---------------------------------------------------------------------------
# Internet-visibility filtering

ORACLE_BACKED = frozenset(
    {
        Protocol.SSH,
        Protocol.HTTPS,
        Protocol.HTTP,
        Protocol.SMTP,
        Protocol.FTP,
        Protocol.TELNET,
        Protocol.SMB,
        Protocol.DNS,
        Protocol.NTP,
        Protocol.SNMPV2,
    }
)

ORACLE_LESS = frozenset({Protocol.SNMPV3, Protocol.NETBIOS, Protocol.UPNP, Protocol.IPP})


def filter_internet_visible(graph: ExposureGraph, oracle: VisibilityOracle) -> ExposureGraph:
    """Set internet_visible on every edge.

    Oracle-backed protocols look themselves up. Oracle-less protocols
    inherit from services co-hosted on the same address: hidden if anything
    there is hidden, visible if everything there is visible, and hidden
    with a low-confidence flag when there is no co-hosted evidence at all.
    """
    backed_by_host: dict[tuple[str, str], list[bool]] = defaultdict(list)
    for edge in graph.edges:
        if edge.identifier.protocol in ORACLE_BACKED:
            visible = oracle.contains(edge.identifier.protocol, edge.oracle_key)
            backed_by_host[(edge.endpoint_id, edge.host)].append(visible)

    new_edges = []
    for edge in graph.edges:
        protocol = edge.identifier.protocol
        if protocol in ORACLE_BACKED:
            visible = oracle.contains(protocol, edge.oracle_key)
            new_edges.append(replace(edge, internet_visible=visible))
            continue
        co_hosted = backed_by_host.get((edge.endpoint_id, edge.host))
        if co_hosted:
            visible = all(co_hosted)
            new_edges.append(
                replace(edge, internet_visible=visible, visibility_low_confidence=False)
            )
        else:
            new_edges.append(
                replace(edge, internet_visible=False, visibility_low_confidence=True)
            )
    return replace(graph, edges=tuple(new_edges))


# ---------------------------------------------------------------------------
# stakeholder classification


def _qualifies(edge: ExposureEdge) -> bool:
    """Close enough to count as directly attached: at most one hop away or
    sharing the prober's /24."""
    return edge.same_slash24 or (edge.hop_count is not None and edge.hop_count <= 1)


def classify_stakeholder(
    edge: ExposureEdge, co_hosted: Sequence[ExposureEdge] = ()
) -> Category:
    """Assign the stakeholder category for one edge given the other edges on
    the same host.

    A host with any qualifying end-user-protocol exposure is an end-user
    host, and every edge on it inherits that. Qualifying hosts without any
    end-user protocol belong to the provider. The rest is upstream, except
    edges whose distance is unknowable.
    """
    host_edges = (edge, *co_hosted)
    if any(
        e.identifier.protocol in END_USER_PROTOCOLS and _qualifies(e) for e in host_edges
    ):
        return Category.END_USER
    has_end_user_protocol = any(
        e.identifier.protocol in END_USER_PROTOCOLS for e in host_edges
    )
    if not has_end_user_protocol and any(_qualifies(e) for e in host_edges):
        return Category.PROVIDER
    if edge.hop_count is None and not edge.same_slash24:
        return Category.UNCLASSIFIED
    return Category.UPSTREAM


def classify_graph(graph: ExposureGraph) -> ExposureGraph:
    """classify_stakeholder applied host-wise over the whole graph."""
    by_host: dict[tuple[str, str], list[ExposureEdge]] = defaultdict(list)
    for edge in graph.edges:
        by_host[(edge.endpoint_id, edge.host)].append(edge)
    new_edges = []
    for edge in graph.edges:
        co_hosted = [e for e in by_host[(edge.endpoint_id, edge.host)] if e is not edge]
        new_edges.append(replace(edge, category=classify_stakeholder(edge, co_hosted)))
    return replace(graph, edges=tuple(new_edges))


# ---------------------------------------------------------------------------
# NetBIOS name grouping


class NameGroup(Enum):
    DESKTOP = "desktop"
    NAS = "nas"
    SERVER = "server"
    MEDIA_PLAYER = "media_player"
    OTHER = "other"


# Seed substrings, matched in priority order.
DEFAULT_NAME_RULES: tuple[tuple[NameGroup, tuple[str, ...]], ...] = (
    (NameGroup.DESKTOP, ("DESKTOP", "WIN-", "MAC")),
    (NameGroup.NAS, ("NAS", "QNAP")),
    (NameGroup.SERVER, ("SERVER", "MIRROR")),
    (NameGroup.MEDIA_PLAYER, ("KODI",)),
)


def group_netbios_name(
    name: str,
    rules: Sequence[tuple[NameGroup, tuple[str, ...]]] = DEFAULT_NAME_RULES,
) -> NameGroup:
    upper = name.upper()
    for group, substrings in rules:
        if any(s in upper for s in substrings):
            return group
    return NameGroup.OTHER


# ---------------------------------------------------------------------------
# shared infrastructure


@dataclass(frozen=True)
class SharedInfraReport:
    shared_endpoints: dict[str, tuple[str, ...]]  # entry address -> providers
    shared_vantage: dict[str, tuple[str, ...]]  # vantage address -> providers
    identifier_histogram: dict[str, dict[int, int]]  # split -> provider count -> identifiers

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "shared_endpoints": {k: list(v) for k, v in sorted(self.shared_endpoints.items())},
            "shared_vantage": {k: list(v) for k, v in sorted(self.shared_vantage.items())},
            "identifier_histogram": {
                split: {str(count): n for count, n in sorted(bins.items())}
                for split, bins in sorted(self.identifier_histogram.items())
            },
        }


def _snmpv3_split(identifier: ServiceIdentifier) -> str:
    try:
        info = classify_engine_id(bytes.fromhex(identifier.value))
        if info.format is EngineIdFormat.MAC:
            return "snmpv3_mac"
    except (MalformedEngineId, ValueError):
        pass
    return "snmpv3_other"


def shared_infra_report(
    graph: ExposureGraph,
    endpoint_addresses: Mapping[str, Mapping[str, str | None]] | None = None,
    *,
    hidden_only: bool = True,
) -> SharedInfraReport:
    """Cross-provider sharing: entry/vantage address overlaps and the
    per-identifier provider-count histogram split by identifier strength
    (SNMPv3 additionally split by MAC-based engine IDs).

    endpoint_addresses maps endpoint_id to {"entry": addr, "vantage": addr};
    providers come from the graph's instance map.
    """
    entry_providers: dict[str, set[str]] = defaultdict(set)
    vantage_providers: dict[str, set[str]] = defaultdict(set)
    for endpoint_id, addresses in (endpoint_addresses or {}).items():
        provider = graph.instances.get(endpoint_id)
        if provider is None:
            continue
        entry = addresses.get("entry")
        vantage = addresses.get("vantage")
        if entry:
            entry_providers[entry].add(provider)
        if vantage:
            vantage_providers[vantage].add(provider)

    ident_providers: dict[ServiceIdentifier, set[str]] = defaultdict(set)
    for edge in graph.edges:
        if hidden_only and edge.internet_visible is True:
            continue
        ident_providers[edge.identifier].add(graph.instances[edge.endpoint_id])

    histogram: dict[str, Counter] = defaultdict(Counter)
    for identifier, providers in ident_providers.items():
        count = len(providers)
        split = "strong" if identifier.strength is Strength.STRONG else "weak"
        histogram[split][count] += 1
        if identifier.protocol is Protocol.SNMPV3:
            histogram[_snmpv3_split(identifier)][count] += 1

    return SharedInfraReport(
        shared_endpoints={
            addr: tuple(sorted(p)) for addr, p in entry_providers.items() if len(p) >= 2
        },
        shared_vantage={
            addr: tuple(sorted(p)) for addr, p in vantage_providers.items() if len(p) >= 2
        },
        identifier_histogram={k: dict(v) for k, v in histogram.items()},
    )


# ---------------------------------------------------------------------------
# enrichment


def enrich(edge: ExposureEdge, asn_db: PrefixTable, geo_db: PrefixTable) -> ExposureEdge:
    """Attach AS number and country for the edge's vantage address."""
    if edge.vantage_address is None:
        return replace(edge, asn=None, country=None)
    asn_value = asn_db.lookup(edge.vantage_address)
    country = geo_db.lookup(edge.vantage_address)
    asn = int(asn_value) if asn_value is not None else None
    return replace(edge, asn=asn, country=country)


def enrich_graph(graph: ExposureGraph, asn_db: PrefixTable, geo_db: PrefixTable) -> ExposureGraph:
    return replace(graph, edges=tuple(enrich(e, asn_db, geo_db) for e in graph.edges))


# ---------------------------------------------------------------------------
# reports


def _rollup(edges: Sequence[ExposureEdge], instances: Mapping[str, str]) -> dict[str, Any]:
    by_protocol: dict[str, dict[str, set]] = defaultdict(
        lambda: {"identifiers": set(), "endpoints": set(), "providers": set(), "exposures": 0}
    )
    for edge in edges:
        entry = by_protocol[edge.identifier.protocol.value]
        entry["identifiers"].add(edge.identifier)
        entry["endpoints"].add(edge.endpoint_id)
        entry["providers"].add(instances[edge.endpoint_id])
        entry["exposures"] += 1
    return {
        protocol: {
            "identifiers": len(entry["identifiers"]),
            "exposures": entry["exposures"],
            "endpoints": len(entry["endpoints"]),
            "providers": len(entry["providers"]),
        }
        for protocol, entry in sorted(by_protocol.items())
    }


def build_report(
    graph: ExposureGraph,
    shared: SharedInfraReport | None = None,
) -> dict[str, Any]:
    """Deterministic aggregate report over a classified, filtered graph.

    The hidden (not Internet-visible) edge set drives the stakeholder and
    hop tables; the per-protocol rollup is reported both unfiltered and
    filtered.
    """
    hidden = [e for e in graph.edges if e.internet_visible is not True]

    stakeholders: dict[str, dict[str, dict[str, set]]] = defaultdict(
        lambda: defaultdict(lambda: {"identifiers": set(), "providers": set()})
    )
    for edge in hidden:
        cell = stakeholders[edge.identifier.protocol.value][edge.category.value]
        cell["identifiers"].add(edge.identifier)
        cell["providers"].add(graph.instances[edge.endpoint_id])

    hop_distribution: dict[str, Counter] = defaultdict(Counter)
    for edge in hidden:
        key = "unknown" if edge.hop_count is None else str(edge.hop_count)
        hop_distribution[edge.identifier.protocol.value][key] += 1

    report: dict[str, Any] = {
        "totals": {
            "providers": len(graph.providers),
            "endpoints": len(graph.instances),
            "identifiers": len(graph.identifiers),
            "exposures": len(graph.edges),
            "hidden_exposures": len(hidden),
        },
        "protocol_rollup": {
            "unfiltered": _rollup(graph.edges, graph.instances),
            "filtered": _rollup(hidden, graph.instances),
        },
        "stakeholders": {
            protocol: {
                category: {
                    "identifiers": len(cell["identifiers"]),
                    "providers": len(cell["providers"]),
                }
                for category, cell in sorted(categories.items())
            }
            for protocol, categories in sorted(stakeholders.items())
        },
        "hop_distribution": {
            protocol: dict(sorted(bins.items(), key=lambda kv: (kv[0] == "unknown", kv[0].zfill(3))))
            for protocol, bins in sorted(hop_distribution.items())
        },
    }
    if shared is not None:
        report["shared_infrastructure"] = shared.to_json_obj()
    return report
