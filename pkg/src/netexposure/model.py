"""Shared domain records for the scanner, the simulator, and the analysis
pipeline.

Everything in this module is an immutable value object. Records are safe to
share between worker threads and are serialized 1:1 to the JSON Lines
interchange format written by scan sessions and consumed by the analyzer.
"""

from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator


class AddressClass(Enum):
    """Which reserved IPv4 range an address belongs to, if any."""

    RFC1918_10 = "rfc1918_10"
    RFC1918_172 = "rfc1918_172"
    RFC1918_192 = "rfc1918_192"
    LINK_LOCAL = "link_local"
    CGNAT = "cgnat"
    BENCHMARK = "benchmark"
    CLASS_E = "class_e"
    PUBLIC_ROUTABLE = "public_routable"


# Disjoint by construction, so match order does not matter.
RESERVED_RANGES: tuple[tuple[ipaddress.IPv4Network, AddressClass], ...] = (
    (ipaddress.IPv4Network("10.0.0.0/8"), AddressClass.RFC1918_10),
    (ipaddress.IPv4Network("172.16.0.0/12"), AddressClass.RFC1918_172),
    (ipaddress.IPv4Network("192.168.0.0/16"), AddressClass.RFC1918_192),
    (ipaddress.IPv4Network("169.254.0.0/16"), AddressClass.LINK_LOCAL),
    (ipaddress.IPv4Network("100.64.0.0/10"), AddressClass.CGNAT),
    (ipaddress.IPv4Network("198.18.0.0/15"), AddressClass.BENCHMARK),
    (ipaddress.IPv4Network("240.0.0.0/4"), AddressClass.CLASS_E),
)


def classify_address(addr: str | ipaddress.IPv4Address) -> AddressClass:
    """Map an IPv4 address to its unique reserved range, else PublicRoutable.

    Total over valid IPv4 addresses. Multicast (224.0.0.0/4) and the
    documentation ranges intentionally fall through to PublicRoutable.
    """
    ip = ipaddress.IPv4Address(addr)
    for network, cls in RESERVED_RANGES:
        if ip in network:
            return cls
    return AddressClass.PUBLIC_ROUTABLE


def is_multicast_or_broadcast(addr: str | ipaddress.IPv4Address) -> bool:
    ip = ipaddress.IPv4Address(addr)
    return ip.is_multicast or ip == ipaddress.IPv4Address("255.255.255.255")


def slash24(addr: str | ipaddress.IPv4Address) -> ipaddress.IPv4Network:
    """The /24 network containing an address."""
    return ipaddress.IPv4Network(f"{ipaddress.IPv4Address(addr)}/24", strict=False)


class Transport(Enum):
    TCP = "tcp"
    UDP = "udp"
    ICMP = "icmp"
    OTHER = "other"


class Protocol(Enum):
    """The fourteen application-layer probe protocols."""

    HTTP = "http"
    HTTPS = "https"
    SMTP = "smtp"
    FTP = "ftp"
    SSH = "ssh"
    TELNET = "telnet"
    SMB = "smb"
    DNS = "dns"
    NTP = "ntp"
    IPP = "ipp"
    NETBIOS = "netbios"
    SNMPV2 = "snmpv2"
    SNMPV3 = "snmpv3"
    UPNP = "upnp"


#: Protocols whose responses carry a native, globally meaningful identifier.
STRONG_PROTOCOLS = frozenset(
    {Protocol.SSH, Protocol.HTTPS, Protocol.SNMPV3, Protocol.UPNP}
)

#: Protocols commonly found on end-user devices.
END_USER_PROTOCOLS = frozenset(
    {Protocol.NETBIOS, Protocol.SMB, Protocol.UPNP, Protocol.IPP}
)


class Provenance(Enum):
    SNIFFER = "sniffer"
    TRACEROUTE = "traceroute"
    CONFIGURATION = "configuration"
    EXPANSION = "expansion"
    MANUAL = "manual"


class TargetState(Enum):
    QUEUED = "queued"
    IN_FLIGHT = "in_flight"
    DONE = "done"


class ProbeStatus(Enum):
    SUCCESS = "success"
    CONN_REFUSED = "conn_refused"
    TIMEOUT = "timeout"
    PROTOCOL_ERROR = "protocol_error"


class Strength(Enum):
    STRONG = "strong"
    WEAK = "weak"


class Derivation(Enum):
    SSH_HOST_KEY = "ssh_host_key"
    TLS_CERT_SIGNATURE_HASH = "tls_cert_signature_hash"
    SNMP_ENGINE_ID = "snmp_engine_id"
    UPNP_UDN = "upnp_udn"
    SMB_GUID = "smb_guid"
    PAYLOAD_HASH = "payload_hash"


class Category(Enum):
    END_USER = "end_user"
    PROVIDER = "provider"
    UPSTREAM = "upstream"
    UNCLASSIFIED = "unclassified"


class Termination(Enum):
    ALL_DONE = "all_done"
    TIME_BUDGET = "time_budget"


class TraceMode(Enum):
    ICMP = "icmp"
    TCP = "tcp"


# TCP flag bits, standard wire order.
TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10


@dataclass(frozen=True)
class NetworkTarget:
    """A /24 probing unit flowing through the work queue.

    The not-public-unless-allowed and at-most-once-per-session invariants
    are enforced by the work queue policy, which is the only component that
    constructs targets during a session.
    """

    network: str  # CIDR, prefix length exactly 24
    provenance: Provenance
    state: TargetState = TargetState.QUEUED
    discovered_at: float = 0.0

    def __post_init__(self) -> None:
        net = ipaddress.IPv4Network(self.network)
        if net.prefixlen != 24:
            raise ValueError(f"target network must be a /24, got {self.network}")

    def with_state(self, state: TargetState) -> "NetworkTarget":
        return replace(self, state=state)

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "network": self.network,
            "provenance": self.provenance.value,
            "state": self.state.value,
            "discovered_at": self.discovered_at,
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "NetworkTarget":
        return cls(
            network=obj["network"],
            provenance=Provenance(obj["provenance"]),
            state=TargetState(obj.get("state", "queued")),
            discovered_at=obj.get("discovered_at", 0.0),
        )


@dataclass(frozen=True)
class ScannerIdentity:
    """Strings embedded in outgoing requests so targets can identify us."""

    user_agent: str
    ehlo_domain: str


@dataclass(frozen=True)
class ScanSession:
    session_id: str
    local_address: str
    local_network: str
    dns_servers: tuple[str, ...]
    scanner_identity: ScannerIdentity
    time_budget: float = 900.0
    allow_public: bool = False

    def __post_init__(self) -> None:
        if self.time_budget <= 0:
            raise ValueError("time_budget must be positive")
        if not self.scanner_identity.user_agent:
            raise ValueError("scanner_identity.user_agent must be non-empty")
        if not self.scanner_identity.ehlo_domain:
            raise ValueError("scanner_identity.ehlo_domain must be non-empty")

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "local_address": self.local_address,
            "local_network": self.local_network,
            "dns_servers": list(self.dns_servers),
            "scanner_identity": {
                "user_agent": self.scanner_identity.user_agent,
                "ehlo_domain": self.scanner_identity.ehlo_domain,
            },
            "time_budget": self.time_budget,
            "allow_public": self.allow_public,
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "ScanSession":
        identity = obj["scanner_identity"]
        return cls(
            session_id=obj["session_id"],
            local_address=obj["local_address"],
            local_network=obj["local_network"],
            dns_servers=tuple(obj.get("dns_servers", ())),
            scanner_identity=ScannerIdentity(identity["user_agent"], identity["ehlo_domain"]),
            time_budget=obj.get("time_budget", 900.0),
            allow_public=obj.get("allow_public", False),
        )


@dataclass(frozen=True)
class ObservedPacket:
    """One sniffed inbound IPv4 packet."""

    src: str
    dst: str
    transport: Transport
    ttl: int
    src_port: int | None = None
    dst_port: int | None = None
    tcp_flags: int | None = None
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if not 1 <= self.ttl <= 255:
            raise ValueError(f"ttl out of range: {self.ttl}")
        if (self.transport is Transport.TCP) != (self.tcp_flags is not None):
            raise ValueError("tcp_flags must be present exactly for TCP packets")

    @property
    def is_rst(self) -> bool:
        return self.transport is Transport.TCP and bool(self.tcp_flags & TCP_RST)

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "src": self.src,
            "dst": self.dst,
            "transport": self.transport.value,
            "src_port": self.src_port,
            "dst_port": self.dst_port,
            "ttl": self.ttl,
            "tcp_flags": self.tcp_flags,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "ObservedPacket":
        return cls(
            src=obj["src"],
            dst=obj["dst"],
            transport=Transport(obj["transport"]),
            ttl=obj["ttl"],
            src_port=obj.get("src_port"),
            dst_port=obj.get("dst_port"),
            tcp_flags=obj.get("tcp_flags"),
            timestamp=obj.get("timestamp", 0.0),
        )


# Payload values are JSON-native: strings, ints, or lists of strings.
# Byte-valued fields (host keys, certificates, engine IDs, GUIDs) are stored
# as lowercase hex strings under well-known keys.
PayloadValue = Any


@dataclass(frozen=True)
class ServiceResponse:
    """One application-layer probe result."""

    host: str
    protocol: Protocol
    port: int
    status: ProbeStatus
    payload: dict[str, PayloadValue] = field(default_factory=dict)
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port}")
        if (self.status is ProbeStatus.SUCCESS) != bool(self.payload):
            raise ValueError("payload must be non-empty exactly for Success")

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "host": self.host,
            "protocol": self.protocol.value,
            "port": self.port,
            "status": self.status.value,
            "payload": self.payload,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "ServiceResponse":
        return cls(
            host=obj["host"],
            protocol=Protocol(obj["protocol"]),
            port=obj["port"],
            status=ProbeStatus(obj["status"]),
            payload=dict(obj.get("payload") or {}),
            timestamp=obj.get("timestamp", 0.0),
        )


@dataclass(frozen=True)
class ServiceIdentifier:
    """Deduplication key for one exposed service."""

    protocol: Protocol
    strength: Strength
    value: str
    derivation: Derivation
    qualifier: str | None = None  # e.g. "non-guid" for text-shaped SMB GUIDs

    def __post_init__(self) -> None:
        expected = Strength.STRONG if self.protocol in STRONG_PROTOCOLS else Strength.WEAK
        if self.strength is not expected:
            raise ValueError(
                f"{self.protocol.value} identifiers must be {expected.value}"
            )

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "protocol": self.protocol.value,
            "strength": self.strength.value,
            "value": self.value,
            "derivation": self.derivation.value,
            "qualifier": self.qualifier,
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "ServiceIdentifier":
        return cls(
            protocol=Protocol(obj["protocol"]),
            strength=Strength(obj["strength"]),
            value=obj["value"],
            derivation=Derivation(obj["derivation"]),
            qualifier=obj.get("qualifier"),
        )


@dataclass(frozen=True)
class ExposureEdge:
    """Links one scan endpoint to one exposed service identifier."""

    endpoint_id: str
    identifier: ServiceIdentifier
    host: str
    hop_count: int | None
    same_slash24: bool
    src_class: AddressClass
    dst_class: AddressClass
    category: Category = Category.UNCLASSIFIED
    internet_visible: bool | None = None
    visibility_low_confidence: bool = False
    oracle_key: str = ""  # visibility lookup form; identifier.value unless relaxed
    vantage_address: str | None = None
    asn: int | None = None
    country: str | None = None

    def __post_init__(self) -> None:
        if self.hop_count is not None and self.hop_count < 0:
            raise ValueError("hop_count must be >= 0 when known")

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "endpoint_id": self.endpoint_id,
            "identifier": self.identifier.to_json_obj(),
            "host": self.host,
            "hop_count": self.hop_count,
            "same_slash24": self.same_slash24,
            "src_class": self.src_class.value,
            "dst_class": self.dst_class.value,
            "category": self.category.value,
            "internet_visible": self.internet_visible,
            "visibility_low_confidence": self.visibility_low_confidence,
            "oracle_key": self.oracle_key,
            "vantage_address": self.vantage_address,
            "asn": self.asn,
            "country": self.country,
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "ExposureEdge":
        return cls(
            endpoint_id=obj["endpoint_id"],
            identifier=ServiceIdentifier.from_json_obj(obj["identifier"]),
            host=obj["host"],
            hop_count=obj.get("hop_count"),
            same_slash24=obj["same_slash24"],
            src_class=AddressClass(obj["src_class"]),
            dst_class=AddressClass(obj["dst_class"]),
            category=Category(obj.get("category", "unclassified")),
            internet_visible=obj.get("internet_visible"),
            visibility_low_confidence=obj.get("visibility_low_confidence", False),
            oracle_key=obj.get("oracle_key", ""),
            vantage_address=obj.get("vantage_address"),
            asn=obj.get("asn"),
            country=obj.get("country"),
        )


@dataclass(frozen=True)
class ExposureGraph:
    """Provider -> instance -> identifier graph built from session records."""

    providers: tuple[str, ...]
    instances: dict[str, str]  # endpoint_id -> provider
    identifiers: tuple[ServiceIdentifier, ...]
    edges: tuple[ExposureEdge, ...]

    def __post_init__(self) -> None:
        known = set(self.identifiers)
        for edge in self.edges:
            if edge.endpoint_id not in self.instances:
                raise ValueError(f"edge references unknown instance {edge.endpoint_id}")
            if edge.identifier not in known:
                raise ValueError(f"edge references unknown identifier {edge.identifier.value}")
        for endpoint, provider in self.instances.items():
            if provider not in self.providers:
                raise ValueError(f"instance {endpoint} references unknown provider {provider}")

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "providers": sorted(self.providers),
            "instances": dict(sorted(self.instances.items())),
            "identifiers": [
                i.to_json_obj()
                for i in sorted(self.identifiers, key=lambda i: (i.protocol.value, i.value))
            ],
            "edges": [
                e.to_json_obj()
                for e in sorted(
                    self.edges,
                    key=lambda e: (e.endpoint_id, e.identifier.protocol.value, e.identifier.value, e.host),
                )
            ],
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "ExposureGraph":
        return cls(
            providers=tuple(obj["providers"]),
            instances=dict(obj["instances"]),
            identifiers=tuple(
                ServiceIdentifier.from_json_obj(i) for i in obj["identifiers"]
            ),
            edges=tuple(ExposureEdge.from_json_obj(e) for e in obj["edges"]),
        )


@dataclass(frozen=True)
class TraceHop:
    index: int  # 1-based TTL position
    responder: str | None  # None for a silent hop
    rtt_ms: float | None = None


@dataclass(frozen=True)
class TracerouteResult:
    target: str
    mode: TraceMode
    hops: tuple[TraceHop, ...]

    def __post_init__(self) -> None:
        indices = [h.index for h in self.hops]
        if indices and (indices != sorted(indices) or len(set(indices)) != len(indices)):
            raise ValueError("hop indices must be strictly increasing")
        if any(h.index > 64 for h in self.hops):
            raise ValueError("hop index exceeds 64")

    def responders(self) -> list[str]:
        return [h.responder for h in self.hops if h.responder is not None]

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "target": self.target,
            "mode": self.mode.value,
            "hops": [
                {"index": h.index, "responder": h.responder, "rtt_ms": h.rtt_ms}
                for h in self.hops
            ],
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "TracerouteResult":
        return cls(
            target=obj["target"],
            mode=TraceMode(obj["mode"]),
            hops=tuple(
                TraceHop(h["index"], h.get("responder"), h.get("rtt_ms"))
                for h in obj["hops"]
            ),
        )


@dataclass(frozen=True)
class MetadataResult:
    """Outcome of one cloud-metadata path probe."""

    endpoint_path: str
    status: int | None  # HTTP status, None on transport failure
    body_excerpt: str  # first 4096 bytes, decoded with replacement
    credentials_detected: bool
    error: str | None = None

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "endpoint_path": self.endpoint_path,
            "status": self.status,
            "body_excerpt": self.body_excerpt,
            "credentials_detected": self.credentials_detected,
            "error": self.error,
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "MetadataResult":
        return cls(
            endpoint_path=obj["endpoint_path"],
            status=obj.get("status"),
            body_excerpt=obj.get("body_excerpt", ""),
            credentials_detected=obj["credentials_detected"],
            error=obj.get("error"),
        )


@dataclass(frozen=True)
class EnvironmentInfo:
    local_address: str
    local_network: str
    dns_servers: tuple[str, ...] = ()
    gateway: str | None = None

    def __post_init__(self) -> None:
        net = ipaddress.IPv4Network(self.local_network, strict=False)
        if ipaddress.IPv4Address(self.local_address) not in net:
            raise ValueError("local_address must lie inside local_network")

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "local_address": self.local_address,
            "local_network": self.local_network,
            "dns_servers": list(self.dns_servers),
            "gateway": self.gateway,
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "EnvironmentInfo":
        return cls(
            local_address=obj["local_address"],
            local_network=obj["local_network"],
            dns_servers=tuple(obj.get("dns_servers", ())),
            gateway=obj.get("gateway"),
        )


@dataclass(frozen=True)
class SessionResult:
    session: ScanSession
    env: EnvironmentInfo
    packets: tuple[ObservedPacket, ...]
    responses: tuple[ServiceResponse, ...]
    traceroutes: tuple[TracerouteResult, ...]
    metadata_findings: tuple[MetadataResult, ...]
    termination: Termination


class JsonLinesError(ValueError):
    pass


def dump_jsonl(records: Iterable[Any], path: str | Path) -> None:
    """Write records exposing to_json_obj() as one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json_obj(), sort_keys=True))
            fh.write("\n")


def load_jsonl(path: str | Path, record_type: type) -> Iterator[Any]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield record_type.from_json_obj(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise JsonLinesError(f"{path}:{lineno}: {exc}") from exc
