"""Deterministic in-process virtual network.

Implements the NetworkAccess contract: routed subnets with per-hop TTL
decrement, scriptable hosts serving byte-exact fixture responses for all
fourteen probe protocols, multicast groups, a cloud-metadata mock, and a
capture log of everything the scanner emits.

Time is virtual. Every exchange advances the session clock by a
deterministic amount (round trips charge per-hop latency, silence charges a
fixed cost), so timeout paths resolve in milliseconds of real time.

Topology files are JSON::

    {
      "local": {"address": "10.8.0.5", "network": "10.8.0.0/24",
                "dns_servers": ["10.8.0.1"], "gateway": "10.8.0.1"},
      "costs": {"link_latency": 0.001, "silence": 0.02},
      "subnets": [
        {"cidr": "10.8.0.0/24", "routers": []},
        {"cidr": "172.16.5.0/24", "routers": ["10.8.0.1", "172.16.5.254"]}
      ],
      "hosts": [
        {"address": "172.16.5.10", "initial_ttl": 64,
         "services": [{"protocol": "ssh", "banner": "OpenSSH_6.7",
                       "host_key": "0011..."}]}
      ],
      "multicast": [{"address": "10.8.0.44", "group": "ssdp",
                     "reply": {"location": "http://10.8.0.44:80/desc.xml",
                               "usn": "uuid:abc", "server": "sim/1.0"}}],
      "metadata": {"paths": {"/latest/meta-data/": {"status": 200,
                                                    "body": "ami-id"}}}
    }

Per-protocol fixture keys are listed next to each handler below.
"""

from __future__ import annotations

import ipaddress
import json
import random
import threading
import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from . import wire
from .model import (
    EnvironmentInfo,
    ObservedPacket,
    Protocol,
    TCP_ACK,
    TCP_RST,
    TCP_SYN,
    Transport,
)
from .netaccess import (
    ConnectionRefused,
    ConnectionTimeout,
    NetworkAccess,
    ProbeReply,
    ReplyKind,
    Stream,
)

METADATA_ADDRESS = "169.254.169.254"

# Source port stamped on synthesized inbound packets. The simulator uses a
# single pseudo-ephemeral port so record sets are identical across runs.
EPHEMERAL_PORT = 44444

DEFAULT_LINK_LATENCY = 0.001
DEFAULT_SILENCE_COST = 0.05
DEFAULT_ROUTER_TTL = 255


class SpecError(ValueError):
    """A topology violates one of its invariants."""


@dataclass(frozen=True)
class ServiceFixture:
    protocol: Protocol
    port: int
    fields: dict[str, Any]


@dataclass(frozen=True)
class HostSpec:
    address: str
    initial_ttl: int = 64
    pingable: bool = True
    icmp_reply_from: str | None = None
    rst_middlebox_ttl: int | None = None
    services: tuple[ServiceFixture, ...] = ()


@dataclass(frozen=True)
class SubnetSpec:
    cidr: str
    routers: tuple[str, ...] = ()


@dataclass(frozen=True)
class MulticastResponder:
    address: str
    group: str  # "ssdp" or "mdns"
    reply: dict[str, Any]


@dataclass(frozen=True)
class TopologySpec:
    local_address: str
    local_network: str
    dns_servers: tuple[str, ...] = ()
    gateway: str | None = None
    subnets: tuple[SubnetSpec, ...] = ()
    hosts: tuple[HostSpec, ...] = ()
    multicast: tuple[MulticastResponder, ...] = ()
    metadata_paths: dict[str, dict[str, Any]] = field(default_factory=dict)
    link_latency: float = DEFAULT_LINK_LATENCY
    silence_cost: float = DEFAULT_SILENCE_COST
    router_initial_ttl: int = DEFAULT_ROUTER_TTL
    drop_probability: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        seen = set()
        for host in self.hosts:
            if host.address in seen:
                raise SpecError(f"duplicate host address {host.address}")
            seen.add(host.address)
            if host.initial_ttl not in (30, 64, 128, 255):
                raise SpecError(
                    f"host {host.address}: initial_ttl must be one of 30/64/128/255"
                )
        for subnet in self.subnets:
            net = ipaddress.IPv4Network(subnet.cidr)
            if net.prefixlen > 24:
                raise SpecError(f"subnet {subnet.cidr} smaller than a /24")
        for host in self.hosts:
            if self._subnet_for(host.address) is None:
                raise SpecError(f"host {host.address} is not inside any subnet")
        if not 0.0 <= self.drop_probability < 1.0:
            raise SpecError("drop_probability must be in [0, 1)")

    def _subnet_for(self, addr: str) -> SubnetSpec | None:
        ip = ipaddress.IPv4Address(addr)
        best: SubnetSpec | None = None
        best_len = -1
        for subnet in self.subnets:
            net = ipaddress.IPv4Network(subnet.cidr)
            if ip in net and net.prefixlen > best_len:
                best, best_len = subnet, net.prefixlen
        return best

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "TopologySpec":
        local = obj["local"]
        costs = obj.get("costs", {})
        hosts = []
        for h in obj.get("hosts", ()):
            services = tuple(
                ServiceFixture(
                    protocol=Protocol(s["protocol"]),
                    port=int(s.get("port", DEFAULT_SERVICE_PORTS[Protocol(s["protocol"])])),
                    fields={k: v for k, v in s.items() if k not in ("protocol", "port")},
                )
                for s in h.get("services", ())
            )
            hosts.append(
                HostSpec(
                    address=h["address"],
                    initial_ttl=int(h.get("initial_ttl", 64)),
                    pingable=bool(h.get("pingable", True)),
                    icmp_reply_from=h.get("icmp_reply_from"),
                    rst_middlebox_ttl=h.get("rst_middlebox_ttl"),
                    services=services,
                )
            )
        spec = cls(
            local_address=local["address"],
            local_network=local["network"],
            dns_servers=tuple(local.get("dns_servers", ())),
            gateway=local.get("gateway"),
            subnets=tuple(
                SubnetSpec(s["cidr"], tuple(s.get("routers", ()))) for s in obj.get("subnets", ())
            ),
            hosts=tuple(hosts),
            multicast=tuple(
                MulticastResponder(m["address"], m["group"], dict(m["reply"]))
                for m in obj.get("multicast", ())
            ),
            metadata_paths=dict(obj.get("metadata", {}).get("paths", {})),
            link_latency=float(costs.get("link_latency", DEFAULT_LINK_LATENCY)),
            silence_cost=float(costs.get("silence", DEFAULT_SILENCE_COST)),
            router_initial_ttl=int(costs.get("router_initial_ttl", DEFAULT_ROUTER_TTL)),
            drop_probability=float(costs.get("drop_probability", 0.0)),
            seed=int(obj.get("seed", 0)),
        )
        spec.validate()
        return spec


def load_topology(path: str | Path) -> TopologySpec:
    with open(path, "r", encoding="utf-8") as fh:
        return TopologySpec.from_json_obj(json.load(fh))


# Listen ports. NetBIOS node status answers on 137 even though the probe
# table records 139 for the protocol.
DEFAULT_SERVICE_PORTS: dict[Protocol, int] = {
    Protocol.HTTP: 80,
    Protocol.HTTPS: 443,
    Protocol.SMTP: 25,
    Protocol.FTP: 21,
    Protocol.SSH: 22,
    Protocol.TELNET: 23,
    Protocol.SMB: 445,
    Protocol.DNS: 53,
    Protocol.NTP: 123,
    Protocol.IPP: 631,
    Protocol.NETBIOS: 137,
    Protocol.SNMPV2: 161,
    Protocol.SNMPV3: 161,
    Protocol.UPNP: 1900,
}

TCP_PROTOCOLS = {
    Protocol.HTTP,
    Protocol.HTTPS,
    Protocol.SMTP,
    Protocol.FTP,
    Protocol.SSH,
    Protocol.TELNET,
    Protocol.SMB,
    Protocol.IPP,
}


@dataclass
class CaptureEntry:
    """One scanner-emitted message."""

    time: float
    kind: str  # tcp-connect | tcp | tls | udp | multicast | icmp-echo | tcp-syn
    dst: str
    port: int | None
    data: bytes
    ttl: int | None = None  # set for TTL-controlled probes


# ---------------------------------------------------------------------------
# TCP server-side handlers


class TcpHandler:
    def on_connect(self) -> tuple[bytes, bool]:
        return b"", False

    def on_data(self, data: bytes) -> tuple[bytes, bool]:
        return b"", False


class HttpHandler(TcpHandler):
    """Single-response HTTP server.

    Fixture keys: status_line (default "HTTP/1.1 200 OK"), headers
    (list of [name, value]), body (str or hex via body_hex).
    """

    def __init__(self, fields: dict[str, Any], pages: dict[str, dict[str, Any]] | None = None):
        self._fields = fields
        self._pages = pages
        self._buffer = bytearray()

    def on_data(self, data: bytes) -> tuple[bytes, bool]:
        self._buffer.extend(data)
        head_end = self._buffer.find(b"\r\n\r\n")
        if head_end < 0:
            return b"", False
        head = bytes(self._buffer[:head_end]).decode("latin-1", "replace")
        lines = head.split("\r\n")
        request_line = lines[0].split(" ")
        headers = {}
        for line in lines[1:]:
            name, _, value = line.partition(":")
            headers[name.strip().lower()] = value.strip()
        length = int(headers.get("content-length", "0") or 0)
        if len(self._buffer) < head_end + 4 + length:
            return b"", False
        path = request_line[1] if len(request_line) > 1 else "/"
        fixture = self._select(path, headers)
        return _http_response_bytes(fixture), True

    def _select(self, path: str, headers: dict[str, str]) -> dict[str, Any]:
        if self._pages is None:
            return self._fields
        page = self._pages.get(path)
        if page is None:
            return {"status_line": "HTTP/1.1 404 Not Found", "body": "not found"}
        required = page.get("require_headers", {})
        for name, value in required.items():
            if headers.get(name.lower()) != value:
                return {"status_line": "HTTP/1.1 400 Bad Request", "body": "missing header"}
        return page


def _http_response_bytes(fixture: dict[str, Any]) -> bytes:
    status_line = fixture.get("status_line")
    if status_line is None:
        status = fixture.get("status", 200)
        status_line = f"HTTP/1.1 {status} " + ("OK" if status == 200 else "Status")
    if "body_hex" in fixture:
        body = bytes.fromhex(fixture["body_hex"])
    else:
        body = str(fixture.get("body", "")).encode("utf-8")
    headers = [tuple(h) for h in fixture.get("headers", [])]
    names = {name.lower() for name, _ in headers}
    if "content-length" not in names:
        headers.append(("Content-Length", str(len(body))))
    head = status_line + "\r\n" + "".join(f"{n}: {v}\r\n" for n, v in headers) + "\r\n"
    return head.encode("latin-1") + body


class SmtpHandler(TcpHandler):
    """Fixture keys: greeting, ehlo_reply (list of reply lines)."""

    def __init__(self, fields: dict[str, Any]):
        self._fields = fields
        self._buffer = bytearray()

    def on_connect(self) -> tuple[bytes, bool]:
        greeting = self._fields.get("greeting", "220 sim ESMTP")
        return (greeting + "\r\n").encode("latin-1"), False

    def on_data(self, data: bytes) -> tuple[bytes, bool]:
        self._buffer.extend(data)
        out = bytearray()
        close = False
        while b"\r\n" in self._buffer:
            idx = self._buffer.find(b"\r\n")
            line = bytes(self._buffer[:idx]).decode("latin-1", "replace")
            del self._buffer[: idx + 2]
            verb = line.split(" ", 1)[0].upper()
            if verb == "EHLO":
                lines = self._fields.get("ehlo_reply", ["250 sim"])
                out.extend(("\r\n".join(lines) + "\r\n").encode("latin-1"))
            elif verb == "QUIT":
                out.extend(b"221 bye\r\n")
                close = True
            else:
                out.extend(b"502 not implemented\r\n")
        return bytes(out), close


class BannerHandler(TcpHandler):
    """Fixture keys: banner (str) or banner_hex."""

    def __init__(self, fields: dict[str, Any], suffix: bytes = b""):
        if "banner_hex" in fields:
            self._banner = bytes.fromhex(fields["banner_hex"])
        else:
            self._banner = str(fields.get("banner", "")).encode("latin-1") + suffix
        self._close = bool(fields.get("close_after_banner", False))

    def on_connect(self) -> tuple[bytes, bool]:
        return self._banner, self._close


class SshHandler(TcpHandler):
    """Fixture keys: banner (software name) and host_key (hex blob)."""

    def __init__(self, fields: dict[str, Any]):
        self._banner = str(fields.get("banner", "sim_sshd"))
        self._host_key = bytes.fromhex(fields["host_key"])
        self._buffer = bytearray()
        self._sent_key = False

    def on_connect(self) -> tuple[bytes, bool]:
        return wire.ssh_identification(self._banner), False

    def on_data(self, data: bytes) -> tuple[bytes, bool]:
        if self._sent_key:
            return b"", True
        self._buffer.extend(data)
        if b"\n" not in self._buffer:
            return b"", False
        self._sent_key = True
        frame = len(self._host_key).to_bytes(4, "big") + self._host_key
        return frame, True


class SmbHandler(TcpHandler):
    """Fixture keys: server_guid (32 hex chars, or arbitrary text placed in
    the GUID field as some devices do)."""

    def __init__(self, fields: dict[str, Any]):
        raw = str(fields.get("server_guid", "0" * 32))
        try:
            guid = bytes.fromhex(raw)
        except ValueError:
            guid = raw.encode("ascii", "replace")[:16].ljust(16, b" ")
        if len(guid) != 16:
            raise SpecError("server_guid must be 16 bytes or text up to 16 chars")
        self._guid = guid
        self._buffer = bytearray()

    def on_data(self, data: bytes) -> tuple[bytes, bool]:
        self._buffer.extend(data)
        if len(self._buffer) < 4:
            return b"", False
        expected = 4 + int.from_bytes(self._buffer[1:4], "big")
        if len(self._buffer) < expected:
            return b"", False
        return wire.build_smb2_negotiate_response(self._guid), True


class IppHandler(HttpHandler):
    """Fixture keys: body_hex (IPP reply bytes, default minimal OK reply)."""

    def __init__(self, fields: dict[str, Any]):
        fixture = dict(fields)
        fixture.setdefault("body_hex", wire.build_ipp_response().hex())
        fixture.setdefault("headers", [["Content-Type", "application/ipp"]])
        super().__init__(fixture)


def _tcp_handler_for(fixture: ServiceFixture) -> Callable[[], TcpHandler]:
    protocol, fields = fixture.protocol, fixture.fields
    if protocol in (Protocol.HTTP, Protocol.HTTPS):
        return lambda: HttpHandler(fields)
    if protocol is Protocol.SMTP:
        return lambda: SmtpHandler(fields)
    if protocol is Protocol.FTP:
        return lambda: BannerHandler(fields, suffix=b"\r\n")
    if protocol is Protocol.TELNET:
        return lambda: BannerHandler(fields)
    if protocol is Protocol.SSH:
        return lambda: SshHandler(fields)
    if protocol is Protocol.SMB:
        return lambda: SmbHandler(fields)
    if protocol is Protocol.IPP:
        return lambda: IppHandler(fields)
    raise SpecError(f"{protocol.value} is not a TCP service")


# ---------------------------------------------------------------------------
# UDP responders


def _udp_responder(fixture: ServiceFixture) -> Callable[[bytes], bytes | None]:
    protocol, fields = fixture.protocol, fixture.fields

    if protocol is Protocol.DNS:
        # Fixture keys: version (version.bind TXT value).
        def dns_responder(payload: bytes) -> bytes | None:
            try:
                txid = int.from_bytes(payload[:2], "big")
                if b"version" not in payload or b"bind" not in payload:
                    return None
                return wire.build_dns_response(
                    txid,
                    "version.bind",
                    wire.DNS_TYPE_TXT,
                    wire.DNS_CLASS_CH,
                    [wire.encode_txt_rdata(str(fields.get("version", "sim-dns")))],
                )
            except (wire.WireError, IndexError):
                return None

        return dns_responder

    if protocol is Protocol.NTP:
        # Fixture keys: stratum, refid (4 chars).
        def ntp_responder(payload: bytes) -> bytes | None:
            if len(payload) < 48 or payload[0] & 0x07 != 3:
                return None
            return wire.build_ntp_server_reply(
                stratum=int(fields.get("stratum", 2)),
                refid=str(fields.get("refid", "GPS")).encode("ascii")[:4],
            )

        return ntp_responder

    if protocol is Protocol.NETBIOS:
        # Fixture keys: names (list), groups (list).
        def netbios_responder(payload: bytes) -> bytes | None:
            if len(payload) < 12 or b"CKAAAAAAA" not in payload:
                return None
            txid = int.from_bytes(payload[:2], "big")
            entries = [(n, 0x00, False) for n in fields.get("names", ())]
            entries += [(g, 0x00, True) for g in fields.get("groups", ())]
            return wire.build_node_status_response(txid, entries)

        return netbios_responder

    if protocol is Protocol.SNMPV2:
        # Fixture keys: community (default public), sysDescr, sysObjectID,
        # sysContact, sysName, sysLocation.
        def snmpv2_responder(payload: bytes) -> bytes | None:
            try:
                _, message, _ = wire.ber_decode(payload)
                children = wire.ber_children(message)
                version = int.from_bytes(children[0][1], "big", signed=True)
                if version != 1:
                    return None
                community = children[1][1]
                if community != str(fields.get("community", "public")).encode():
                    return None
                request_id = int.from_bytes(
                    wire.ber_children(children[2][1])[0][1], "big", signed=True
                )
            except (wire.WireError, IndexError):
                return None
            base = "1.3.6.1.2.1.1"
            varbinds: list[tuple[str, object]] = [
                (f"{base}.1.0", str(fields.get("sysDescr", ""))),
                (f"{base}.2.0", ("oid", str(fields.get("sysObjectID", "1.3.6.1.4.1.0")))),
                (f"{base}.3.0", int(fields.get("sysUpTime", 1000))),
                (f"{base}.4.0", str(fields.get("sysContact", ""))),
                (f"{base}.5.0", str(fields.get("sysName", ""))),
                (f"{base}.6.0", str(fields.get("sysLocation", ""))),
            ]
            return wire.build_snmpv2_response(request_id, community, varbinds)

        return snmpv2_responder

    if protocol is Protocol.SNMPV3:
        # Fixture keys: engine_id (hex).
        def snmpv3_responder(payload: bytes) -> bytes | None:
            try:
                _, message, _ = wire.ber_decode(payload)
                children = wire.ber_children(message)
                version = int.from_bytes(children[0][1], "big", signed=True)
                if version != 3:
                    return None
                msg_id = int.from_bytes(
                    wire.ber_children(children[1][1])[0][1], "big", signed=True
                )
            except (wire.WireError, IndexError):
                return None
            engine_id = bytes.fromhex(str(fields["engine_id"]))
            return wire.build_snmpv3_report(msg_id, msg_id, engine_id)

        return snmpv3_responder

    if protocol is Protocol.UPNP:
        # Fixture keys: location, usn, server, st.
        def upnp_responder(payload: bytes) -> bytes | None:
            if not payload.startswith(b"M-SEARCH"):
                return None
            return wire.build_ssdp_reply(_ssdp_headers(fields))

        return upnp_responder

    raise SpecError(f"{protocol.value} is not a UDP service")


def _ssdp_headers(fields: dict[str, Any]) -> dict[str, str]:
    return {
        "CACHE-CONTROL": "max-age=1800",
        "ST": str(fields.get("st", "upnp:rootdevice")),
        "USN": str(fields.get("usn", "uuid:0")),
        "LOCATION": str(fields.get("location", "")),
        "SERVER": str(fields.get("server", "sim/1.0 UPnP/1.1")),
        "EXT": "",
    }


def _mdns_reply(fields: dict[str, Any], payload: bytes) -> bytes | None:
    """Answer a DNS-SD all-services query with fixture PTR records."""
    if b"_services" not in payload:
        return None
    txid = int.from_bytes(payload[:2], "big")
    services = [str(s) for s in fields.get("services", ["_http._tcp.local"])]
    return wire.build_dns_response(
        txid,
        wire.DNSSD_ALL_SERVICES,
        wire.DNS_TYPE_PTR,
        wire.DNS_CLASS_IN,
        [wire.encode_ptr_rdata(s) for s in services],
    )


# ---------------------------------------------------------------------------
# The simulator


@dataclass
class _SimHost:
    spec: HostSpec
    distance: int  # intermediate routers between scanner and host
    tcp_factories: dict[int, Callable[[], TcpHandler]]
    udp_responders: dict[int, list[Callable[[bytes], bytes | None]]]
    tls_certs: dict[int, bytes]


class SimStream(Stream):
    def __init__(self, net: "SimNetwork", host: _SimHost, port: int, handler: TcpHandler, kind: str):
        self._net = net
        self._host = host
        self._port = port
        self._handler = handler
        self._kind = kind
        self._inbox = bytearray()
        self._server_closed = False
        reply, closed = handler.on_connect()
        self._inbox.extend(reply)
        self._server_closed = closed

    def send(self, data: bytes) -> None:
        self._net._capture(self._kind, self._host.spec.address, self._port, data)
        if self._server_closed:
            return
        reply, closed = self._handler.on_data(data)
        if reply:
            self._inbox.extend(reply)
        if closed:
            self._server_closed = True
        self._net._advance(self._net._rtt(self._host.distance))

    def recv(self, max_bytes: int, timeout: float) -> bytes:
        if self._inbox:
            out = bytes(self._inbox[:max_bytes])
            del self._inbox[:max_bytes]
            return out
        if self._server_closed:
            return b""
        # Server has nothing more to say: model a read timeout.
        self._net._advance(min(timeout, self._net.spec.silence_cost))
        return b""

    def close(self) -> None:
        self._server_closed = True


class SimNetwork(NetworkAccess):
    """NetworkAccess over a TopologySpec."""

    def __init__(self, spec: TopologySpec):
        spec.validate()
        self.spec = spec
        self._lock = threading.RLock()
        self._clock = 0.0
        self._attached = False
        self._rng = random.Random(spec.seed)
        self._packets: list[ObservedPacket] = []
        self._capture_log: list[CaptureEntry] = []
        self._hosts: dict[str, _SimHost] = {}
        self._routers: dict[str, int] = {}  # address -> intermediates before it
        self._router_paths: dict[str, tuple[str, ...]] = {}
        self._build()

    # -- construction ------------------------------------------------------

    def _build(self) -> None:
        subnets = list(self.spec.subnets)
        covers_local = any(
            ipaddress.IPv4Address(self.spec.local_address) in ipaddress.IPv4Network(s.cidr)
            for s in subnets
        )
        if not covers_local:
            subnets.append(SubnetSpec(self.spec.local_network, ()))
        if self.spec.metadata_paths and not any(
            ipaddress.IPv4Address(METADATA_ADDRESS) in ipaddress.IPv4Network(s.cidr)
            for s in subnets
        ):
            subnets.append(SubnetSpec("169.254.169.0/24", ()))
        self._subnets = tuple(subnets)

        for subnet in self._subnets:
            for position, router in enumerate(subnet.routers):
                self._routers.setdefault(router, position)
                self._router_paths.setdefault(router, tuple(subnet.routers[:position]))

        host_specs = list(self.spec.hosts)
        if self.spec.metadata_paths:
            host_specs.append(
                HostSpec(
                    address=METADATA_ADDRESS,
                    initial_ttl=64,
                    services=(
                        ServiceFixture(Protocol.HTTP, 80, {"pages": self.spec.metadata_paths}),
                    ),
                )
            )
        for host_spec in host_specs:
            subnet = self._subnet_of(host_spec.address)
            if subnet is None:
                raise SpecError(f"host {host_spec.address} is not inside any subnet")
            distance = len(subnet.routers)
            tcp_factories: dict[int, Callable[[], TcpHandler]] = {}
            udp_responders: dict[int, list[Callable[[bytes], bytes | None]]] = {}
            tls_certs: dict[int, bytes] = {}
            for fixture in host_spec.services:
                if fixture.fields.get("pages") is not None:
                    pages = fixture.fields["pages"]
                    tcp_factories[fixture.port] = (
                        lambda pages=pages: HttpHandler({}, pages=pages)
                    )
                elif fixture.protocol in TCP_PROTOCOLS:
                    tcp_factories[fixture.port] = _tcp_handler_for(fixture)
                    if fixture.protocol is Protocol.HTTPS:
                        tls_certs[fixture.port] = bytes.fromhex(fixture.fields["certificate"])
                else:
                    udp_responders.setdefault(fixture.port, []).append(_udp_responder(fixture))
                    if fixture.protocol is Protocol.UPNP and "description" in fixture.fields:
                        tcp_factories.setdefault(
                            fixture.port,
                            lambda f=fixture.fields: HttpHandler({"body": f["description"]}),
                        )
            self._hosts[host_spec.address] = _SimHost(
                spec=host_spec,
                distance=distance,
                tcp_factories=tcp_factories,
                udp_responders=udp_responders,
                tls_certs=tls_certs,
            )

    def _subnet_of(self, addr: str) -> SubnetSpec | None:
        ip = ipaddress.IPv4Address(addr)
        best: SubnetSpec | None = None
        best_len = -1
        for subnet in self._subnets:
            net = ipaddress.IPv4Network(subnet.cidr)
            if ip in net and net.prefixlen > best_len:
                best, best_len = subnet, net.prefixlen
        return best

    # -- clock, capture, sniffing ------------------------------------------

    def now(self) -> float:
        with self._lock:
            return self._clock

    def _advance(self, dt: float) -> None:
        with self._lock:
            self._clock += dt

    def _rtt(self, distance: int) -> float:
        return 2.0 * (distance + 1) * self.spec.link_latency

    def _capture(
        self, kind: str, dst: str, port: int | None, data: bytes, ttl: int | None = None
    ) -> None:
        with self._lock:
            self._capture_log.append(CaptureEntry(self._clock, kind, dst, port, data, ttl))

    def capture_log(self) -> list[CaptureEntry]:
        with self._lock:
            return list(self._capture_log)

    def _sniff(self, packet: ObservedPacket) -> None:
        with self._lock:
            self._packets.append(packet)

    def inject(self, packet: ObservedPacket) -> None:
        """Test hook: place an arbitrary packet on the sniffer stream."""
        self._sniff(packet)

    def recv_packet(self, timeout: float) -> ObservedPacket | None:
        with self._lock:
            if self._packets:
                return self._packets.pop(0)
        _time.sleep(0.0005)  # real, keeps pollers from spinning
        return None

    def _dropped(self) -> bool:
        return self.spec.drop_probability > 0 and self._rng.random() < self.spec.drop_probability

    # -- attach ------------------------------------------------------------

    def attach(self) -> EnvironmentInfo:
        with self._lock:
            self._attached = True
        return EnvironmentInfo(
            local_address=self.spec.local_address,
            local_network=self.spec.local_network,
            dns_servers=self.spec.dns_servers,
            gateway=self.spec.gateway,
        )

    def detach(self) -> None:
        with self._lock:
            self._attached = False

    # -- routing helpers ----------------------------------------------------

    def _intermediates(self, dst: str) -> tuple[str, ...] | None:
        """Routers a packet crosses before reaching dst; None if unroutable."""
        if dst == self.spec.local_address:
            return ()
        if dst in self._routers:
            return self._router_paths[dst]
        subnet = self._subnet_of(dst)
        if subnet is None:
            return None
        return subnet.routers

    def _ttl_expiry(self, dst: str, ttl: int | None) -> ProbeReply | None:
        """TTL-exceeded reply if the probe expires en route, else None."""
        path = self._intermediates(dst)
        if path is None or ttl is None or ttl > len(path):
            return None
        router = path[ttl - 1]
        position = ttl - 1
        observed = max(1, self.spec.router_initial_ttl - position)
        self._sniff(
            ObservedPacket(
                src=router,
                dst=self.spec.local_address,
                transport=Transport.ICMP,
                ttl=observed,
                timestamp=self.now(),
            )
        )
        self._advance(self._rtt(position))
        return ProbeReply(ReplyKind.TTL_EXCEEDED, router, self._rtt(position) * 1000)

    def _host_reply_ttl(self, host: _SimHost) -> int:
        return max(1, host.spec.initial_ttl - host.distance)

    def _silent(self, timeout: float) -> ProbeReply:
        self._advance(min(timeout, self.spec.silence_cost))
        return ProbeReply(ReplyKind.SILENT)

    # -- ICMP ---------------------------------------------------------------

    def icmp_echo(self, dst: str, *, ttl: int | None = None, timeout: float = 1.0) -> ProbeReply:
        self._capture("icmp-echo", dst, None, b"", ttl)
        if self._dropped():
            return self._silent(timeout)
        expired = self._ttl_expiry(dst, ttl)
        if expired:
            return expired
        if dst == self.spec.local_address:
            return ProbeReply(ReplyKind.REPLY, dst, 0.0)
        host = self._hosts.get(dst)
        if dst in self._routers and host is None:
            position = self._routers[dst]
            rtt = self._rtt(position)
            observed = max(1, self.spec.router_initial_ttl - position)
            self._sniff(
                ObservedPacket(
                    src=dst,
                    dst=self.spec.local_address,
                    transport=Transport.ICMP,
                    ttl=observed,
                    timestamp=self.now(),
                )
            )
            self._advance(rtt)
            return ProbeReply(ReplyKind.REPLY, dst, rtt * 1000)
        if host is None or not host.spec.pingable:
            return self._silent(timeout)
        responder = host.spec.icmp_reply_from or dst
        rtt = self._rtt(host.distance)
        self._sniff(
            ObservedPacket(
                src=responder,
                dst=self.spec.local_address,
                transport=Transport.ICMP,
                ttl=self._host_reply_ttl(host),
                timestamp=self.now(),
            )
        )
        self._advance(rtt)
        return ProbeReply(ReplyKind.REPLY, responder, rtt * 1000)

    def ping_many(
        self, addrs: Sequence[str], *, timeout: float = 1.0, attempts: int = 1
    ) -> list[str]:
        responders: list[str] = []
        slowest = 0.0
        any_silent = False
        for addr in addrs:
            self._capture("icmp-echo", addr, None, b"")
            if self._dropped():
                any_silent = True
                continue
            host = self._hosts.get(addr)
            if addr == self.spec.local_address:
                responders.append(addr)
                continue
            if host is None and addr in self._routers:
                position = self._routers[addr]
                observed = max(1, self.spec.router_initial_ttl - position)
                self._sniff(
                    ObservedPacket(
                        src=addr,
                        dst=self.spec.local_address,
                        transport=Transport.ICMP,
                        ttl=observed,
                        timestamp=self.now(),
                    )
                )
                responders.append(addr)
                slowest = max(slowest, self._rtt(position))
                continue
            if host is None or not host.spec.pingable:
                any_silent = True
                continue
            responder = host.spec.icmp_reply_from or addr
            self._sniff(
                ObservedPacket(
                    src=responder,
                    dst=self.spec.local_address,
                    transport=Transport.ICMP,
                    ttl=self._host_reply_ttl(host),
                    timestamp=self.now(),
                )
            )
            slowest = max(slowest, self._rtt(host.distance))
            if responder == addr:
                responders.append(addr)
        # One concurrent batch: a single wait window covers the stragglers.
        self._advance(min(timeout, self.spec.silence_cost) if any_silent else slowest)
        return responders

    # -- TCP ----------------------------------------------------------------

    def tcp_syn_probe(self, dst: str, port: int, *, ttl: int, timeout: float = 1.0) -> ProbeReply:
        self._capture("tcp-syn", dst, port, b"", ttl)
        if self._dropped():
            return self._silent(timeout)
        expired = self._ttl_expiry(dst, ttl)
        if expired:
            return expired
        if dst == self.spec.local_address:
            return ProbeReply(ReplyKind.REPLY, dst, 0.0)
        host = self._hosts.get(dst)
        if host is None:
            return self._silent(timeout)
        rtt = self._rtt(host.distance)
        flags = TCP_SYN | TCP_ACK if port in host.tcp_factories else TCP_RST | TCP_ACK
        self._sniff(
            ObservedPacket(
                src=dst,
                dst=self.spec.local_address,
                transport=Transport.TCP,
                ttl=self._host_reply_ttl(host),
                src_port=port,
                dst_port=EPHEMERAL_PORT,
                tcp_flags=flags,
                timestamp=self.now(),
            )
        )
        self._advance(rtt)
        kind = ReplyKind.REPLY if flags & TCP_SYN else ReplyKind.RST
        return ProbeReply(kind, dst, rtt * 1000)

    def _open_stream(self, dst: str, port: int, timeout: float, kind: str) -> tuple[_SimHost, TcpHandler]:
        self._capture("tcp-connect", dst, port, b"")
        host = self._hosts.get(dst)
        if host is None or self._dropped():
            self._advance(min(timeout, self.spec.silence_cost))
            raise ConnectionTimeout(f"{dst}:{port} did not answer")
        if host.spec.rst_middlebox_ttl is not None:
            self._sniff(
                ObservedPacket(
                    src=dst,
                    dst=self.spec.local_address,
                    transport=Transport.TCP,
                    ttl=host.spec.rst_middlebox_ttl,
                    src_port=port,
                    dst_port=EPHEMERAL_PORT,
                    tcp_flags=TCP_RST | TCP_ACK,
                    timestamp=self.now(),
                )
            )
        factory = host.tcp_factories.get(port)
        if factory is None:
            self._sniff(
                ObservedPacket(
                    src=dst,
                    dst=self.spec.local_address,
                    transport=Transport.TCP,
                    ttl=self._host_reply_ttl(host),
                    src_port=port,
                    dst_port=EPHEMERAL_PORT,
                    tcp_flags=TCP_RST | TCP_ACK,
                    timestamp=self.now(),
                )
            )
            self._advance(self._rtt(host.distance))
            raise ConnectionRefused(f"{dst}:{port} refused")
        self._sniff(
            ObservedPacket(
                src=dst,
                dst=self.spec.local_address,
                transport=Transport.TCP,
                ttl=self._host_reply_ttl(host),
                src_port=port,
                dst_port=EPHEMERAL_PORT,
                tcp_flags=TCP_SYN | TCP_ACK,
                timestamp=self.now(),
            )
        )
        self._advance(self._rtt(host.distance))
        return host, factory()

    def tcp_connect(self, dst: str, port: int, *, timeout: float = 10.0) -> Stream:
        host, handler = self._open_stream(dst, port, timeout, "tcp")
        return SimStream(self, host, port, handler, "tcp")

    def tls_connect(self, dst: str, port: int, *, timeout: float = 10.0) -> tuple[Stream, bytes]:
        host, handler = self._open_stream(dst, port, timeout, "tls")
        cert = host.tls_certs.get(port)
        if cert is None:
            raise ConnectionRefused(f"{dst}:{port} is not a TLS service")
        return SimStream(self, host, port, handler, "tls"), cert

    def ssh_exchange(
        self, dst: str, port: int, client_identification: bytes, *, timeout: float = 10.0
    ) -> tuple[str, bytes]:
        stream = self.tcp_connect(dst, port, timeout=timeout)
        with stream:
            banner_line = stream.recv_line(timeout)
            banner = wire.parse_ssh_identification(banner_line)
            stream.send(client_identification)
            header = stream.recv(4, timeout)
            if len(header) < 4:
                raise wire.WireError("no host key frame")
            length = int.from_bytes(header, "big")
            if not 0 < length <= 65536:
                raise wire.WireError("implausible host key length")
            key = bytearray()
            while len(key) < length:
                chunk = stream.recv(length - len(key), timeout)
                if not chunk:
                    break
                key.extend(chunk)
            if len(key) != length:
                raise wire.WireError("truncated host key")
        return banner, bytes(key)

    # -- UDP ----------------------------------------------------------------

    def udp_exchange(self, dst: str, port: int, payload: bytes, *, timeout: float = 2.0) -> bytes | None:
        self._capture("udp", dst, port, payload)
        if self._dropped():
            self._advance(min(timeout, self.spec.silence_cost))
            return None
        host = self._hosts.get(dst)
        if host is None:
            self._advance(min(timeout, self.spec.silence_cost))
            return None
        for responder in host.udp_responders.get(port, ()):
            reply = responder(payload)
            if reply is not None:
                self._sniff(
                    ObservedPacket(
                        src=dst,
                        dst=self.spec.local_address,
                        transport=Transport.UDP,
                        ttl=self._host_reply_ttl(host),
                        src_port=port,
                        dst_port=EPHEMERAL_PORT,
                        timestamp=self.now(),
                    )
                )
                self._advance(self._rtt(host.distance))
                return reply
        self._advance(min(timeout, self.spec.silence_cost))
        return None

    # -- multicast -----------------------------------------------------------

    def multicast_exchange(
        self, group: str, port: int, payload: bytes, *, wait: float = 3.0
    ) -> list[tuple[str, bytes]]:
        self._capture("multicast", group, port, payload)
        group_name = "ssdp" if group == wire.SSDP_GROUP else "mdns"
        replies: list[tuple[str, bytes]] = []
        for responder in self.spec.multicast:
            if responder.group != group_name or self._dropped():
                continue
            if group_name == "ssdp":
                reply = wire.build_ssdp_reply(_ssdp_headers(responder.reply))
            else:
                reply = _mdns_reply(responder.reply, payload)
            if reply is None:
                continue
            host = self._hosts.get(responder.address)
            distance = host.distance if host else 0
            ttl = self._host_reply_ttl(host) if host else 64
            self._sniff(
                ObservedPacket(
                    src=responder.address,
                    dst=self.spec.local_address,
                    transport=Transport.UDP,
                    ttl=ttl,
                    src_port=port,
                    dst_port=EPHEMERAL_PORT,
                    timestamp=self.now(),
                )
            )
            replies.append((responder.address, reply))
        self._advance(wait)
        return replies


def build(spec: TopologySpec) -> SimNetwork:
    """Validate a topology and return an attachable network."""
    return SimNetwork(spec)
