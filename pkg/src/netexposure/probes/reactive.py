"""Reactive probes: the passive sniffer feed, ping sweeps over queued /24
networks, and the fourteen application-layer scans.

Every outgoing request is one of the templates from the wire module; probes
stop at banner or negotiate depth and never write application data beyond
that.
"""

from __future__ import annotations

import ipaddress
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Iterator, Mapping, Sequence

from .. import wire
from ..model import (
    NetworkTarget,
    ObservedPacket,
    Protocol,
    ProbeStatus,
    ScannerIdentity,
    ServiceResponse,
)
from ..netaccess import (
    ConnectionRefused,
    ConnectionTimeout,
    NetworkAccess,
)

SSH_CLIENT_PRODUCT = "netexposure_0.1"

# Deterministic transaction ids keep request templates byte-stable.
DNS_TXID = 0x5644
NETBIOS_TXID = 0x4E42
SNMP_REQUEST_ID = 0x1001
SNMPV3_MSG_ID = 0x3301


class ProbeTransport(Enum):
    TCP = "tcp"
    UDP = "udp"
    BOTH = "both"  # UDP discovery with an optional TCP follow-up


@dataclass(frozen=True)
class ProbeSpec:
    """One application-layer probe.

    port is what response records carry (the probe table value); wire_port
    is where datagrams actually go. They differ only for NetBIOS, whose
    node-status service answers on 137. request is the human-readable name
    of the emitted template.
    """

    protocol: Protocol
    port: int
    transport: ProbeTransport
    wire_port: int
    request: str = "-"

    @classmethod
    def make(
        cls,
        protocol: Protocol,
        port: int,
        transport: ProbeTransport,
        wire_port: int | None = None,
        request: str = "-",
    ):
        return cls(
            protocol, port, transport, wire_port if wire_port is not None else port, request
        )


BUILTIN_PROBES: tuple[ProbeSpec, ...] = (
    ProbeSpec.make(Protocol.HTTP, 80, ProbeTransport.TCP, request="GET request"),
    ProbeSpec.make(Protocol.HTTPS, 443, ProbeTransport.TCP, request="GET request"),
    ProbeSpec.make(Protocol.SMTP, 25, ProbeTransport.TCP, request="send-ehlo"),
    ProbeSpec.make(Protocol.FTP, 21, ProbeTransport.TCP),
    ProbeSpec.make(Protocol.SSH, 22, ProbeTransport.TCP),
    ProbeSpec.make(Protocol.TELNET, 23, ProbeTransport.TCP),
    ProbeSpec.make(Protocol.SMB, 445, ProbeTransport.TCP),
    ProbeSpec.make(Protocol.DNS, 53, ProbeTransport.UDP, request="version.bind"),
    ProbeSpec.make(Protocol.NTP, 123, ProbeTransport.UDP),
    ProbeSpec.make(Protocol.IPP, 631, ProbeTransport.TCP),
    ProbeSpec.make(Protocol.NETBIOS, 139, ProbeTransport.UDP, wire_port=137, request="NBSTAT *"),
    ProbeSpec.make(Protocol.SNMPV2, 161, ProbeTransport.UDP, request="GET BULK MIB-2"),
    ProbeSpec.make(Protocol.SNMPV3, 161, ProbeTransport.UDP, request="GET BULK MIB-2"),
    ProbeSpec.make(Protocol.UPNP, 1900, ProbeTransport.BOTH, request="ssdp:all"),
)


def default_probe_specs(
    port_overrides: Mapping[str, int] | None = None,
    disabled: Sequence[str] = (),
) -> list[ProbeSpec]:
    """The built-in probe table with config-level remaps applied."""
    disabled_set = {Protocol(p) for p in disabled}
    specs = []
    for spec in BUILTIN_PROBES:
        if spec.protocol in disabled_set:
            continue
        if port_overrides and spec.protocol.value in port_overrides:
            port = int(port_overrides[spec.protocol.value])
            spec = replace(spec, port=port, wire_port=port)
        specs.append(spec)
    return specs


def sniff_loop(
    net: NetworkAccess, stop: threading.Event, poll: float = 0.05
) -> Iterator[ObservedPacket]:
    """Yield inbound packets until stop is set, then drain what is queued."""
    while not stop.is_set():
        packet = net.recv_packet(poll)
        if packet is not None:
            yield packet
    while True:
        packet = net.recv_packet(0.0)
        if packet is None:
            return
        yield packet


def ping_sweep(
    network: NetworkTarget | str,
    net: NetworkAccess,
    *,
    timeout: float = 1.0,
    attempts: int = 1,
) -> list[str]:
    """Echo every host address of a /24; replies from mismatched sources do
    not count as responders (they still reach the sniffer)."""
    cidr = network.network if isinstance(network, NetworkTarget) else network
    net_obj = ipaddress.IPv4Network(cidr)
    addrs = [str(host) for host in net_obj.hosts()]
    return net.ping_many(addrs, timeout=timeout, attempts=attempts)


# ---------------------------------------------------------------------------
# per-protocol probe bodies; each returns the Success payload or raises


def _read_all(stream, timeout: float, limit: int = wire.BANNER_LIMIT) -> bytes:
    out = bytearray()
    while len(out) < limit:
        chunk = stream.recv(limit - len(out), timeout)
        if not chunk:
            break
        out.extend(chunk)
    return bytes(out)


def _http_probe(net, host, spec, identity, timeout, tls: bool):
    if tls:
        stream, certificate = net.tls_connect(host, spec.wire_port, timeout=timeout)
    else:
        stream = net.tcp_connect(host, spec.wire_port, timeout=timeout)
        certificate = None
    with stream:
        stream.send(wire.build_http_request("GET", "/", host, identity.user_agent))
        status, status_line, headers, body = wire.recv_http_response(
            lambda n: stream.recv(n, timeout)
        )
    payload = {
        "status_code": status,
        "status_line": status_line,
        "headers": [[name, value] for name, value in headers],
        "body": body.decode("latin-1"),
    }
    if certificate is not None:
        payload["certificate"] = certificate.hex()
    return payload


def _smtp_probe(net, host, spec, identity, timeout):
    with net.tcp_connect(host, spec.wire_port, timeout=timeout) as stream:
        greeting = stream.recv_line(timeout).decode("latin-1", "replace").rstrip("\r\n")
        if not greeting.startswith("220"):
            raise wire.WireError(f"unexpected SMTP greeting: {greeting!r}")
        stream.send(f"EHLO {identity.ehlo_domain}\r\n".encode("ascii"))
        reply_lines = []
        while True:
            line = stream.recv_line(timeout).decode("latin-1", "replace").rstrip("\r\n")
            if not line:
                break
            reply_lines.append(line)
            if len(line) < 4 or line[3] != "-":  # last line of a multiline reply
                break
        stream.send(b"QUIT\r\n")
    return {"banner": greeting, "ehlo_reply": reply_lines}


def _banner_probe(net, host, spec, identity, timeout):
    with net.tcp_connect(host, spec.wire_port, timeout=timeout) as stream:
        banner = _read_all(stream, timeout)
    return {"banner": banner.decode("latin-1")}


def _ssh_probe(net, host, spec, identity, timeout):
    client_id = wire.ssh_identification(SSH_CLIENT_PRODUCT)
    banner, host_key = net.ssh_exchange(host, spec.wire_port, client_id, timeout=timeout)
    return {"banner": banner, "host_key": host_key.hex()}


def _smb_probe(net, host, spec, identity, timeout):
    with net.tcp_connect(host, spec.wire_port, timeout=timeout) as stream:
        stream.send(wire.build_smb2_negotiate())
        header = stream.recv(4, timeout)
        if len(header) < 4:
            raise wire.WireError("no SMB negotiate reply")
        length = int.from_bytes(header[1:4], "big")
        message = header + _read_all(stream, timeout, limit=length)
    guid = wire.parse_smb2_server_guid(message)
    return {"server_guid": guid.hex()}


def _ipp_probe(net, host, spec, identity, timeout):
    body = wire.build_ipp_request(host)
    with net.tcp_connect(host, spec.wire_port, timeout=timeout) as stream:
        stream.send(
            wire.build_http_request(
                "POST",
                "/ipp/print",
                host,
                identity.user_agent,
                headers=[("Content-Type", "application/ipp")],
                body=body,
            )
        )
        status, status_line, headers, reply = wire.recv_http_response(
            lambda n: stream.recv(n, timeout)
        )
    return {"status_line": status_line, "body": reply.decode("latin-1")}


def _dns_probe(net, host, spec, identity, timeout):
    reply = net.udp_exchange(
        host, spec.wire_port, wire.build_version_bind_query(DNS_TXID), timeout=timeout
    )
    if reply is None:
        return None
    answers = wire.parse_dns_response(reply)
    version = ""
    for answer in answers:
        if answer["type"] == wire.DNS_TYPE_TXT:
            version = str(answer["value"])
            break
    return {"version_bind": version}


def _ntp_probe(net, host, spec, identity, timeout):
    reply = net.udp_exchange(host, spec.wire_port, wire.build_ntp_client(), timeout=timeout)
    if reply is None:
        return None
    parsed = wire.parse_ntp(reply)
    return {
        "stratum": parsed["stratum"],
        "refid": parsed["refid"],
        "response": reply.hex(),
    }


def _netbios_probe(net, host, spec, identity, timeout):
    reply = net.udp_exchange(
        host, spec.wire_port, wire.build_node_status_query(NETBIOS_TXID), timeout=timeout
    )
    if reply is None:
        return None
    names, groups = wire.parse_node_status(reply)
    return {"names": names, "groups": groups}


def _snmpv2_probe(net, host, spec, identity, timeout):
    request = wire.build_snmpv2_getbulk(SNMP_REQUEST_ID)
    reply = net.udp_exchange(host, spec.wire_port, request, timeout=timeout)
    if reply is None:
        return None
    varbinds = wire.parse_snmpv2_response(reply)
    payload: dict[str, object] = {
        "varbinds": [[oid, "" if value is None else str(value)] for oid, value in varbinds]
    }
    fields = {
        "1.3.6.1.2.1.1.1": "sysDescr",
        "1.3.6.1.2.1.1.2": "sysObjectID",
        "1.3.6.1.2.1.1.4": "sysContact",
        "1.3.6.1.2.1.1.5": "sysName",
        "1.3.6.1.2.1.1.6": "sysLocation",
    }
    for oid, value in varbinds:
        base = oid.rsplit(".", 1)[0]
        name = fields.get(base)
        if name is not None and name not in payload:
            payload[name] = "" if value is None else str(value)
    return payload


def _snmpv3_probe(net, host, spec, identity, timeout):
    request = wire.build_snmpv3_discovery(SNMPV3_MSG_ID, SNMP_REQUEST_ID)
    reply = net.udp_exchange(host, spec.wire_port, request, timeout=timeout)
    if reply is None:
        return None
    engine_id = wire.parse_snmpv3_engine_id(reply)
    return {"engine_id": engine_id.hex()}


def _upnp_probe(net, host, spec, identity, timeout, fetch_description=False):
    msearch = wire.build_msearch(
        f"{host}:{spec.wire_port}", "ssdp:all", 1, identity.user_agent
    )
    reply = net.udp_exchange(host, spec.wire_port, msearch, timeout=timeout)
    if reply is None:
        return None
    headers = wire.parse_ssdp_reply(reply)
    payload = {
        "location": headers.get("location", ""),
        "usn": headers.get("usn", ""),
        "st": headers.get("st", ""),
        "server": headers.get("server", ""),
    }
    if fetch_description and payload["location"]:
        description = _fetch_description(net, host, payload["location"], identity, timeout)
        if description is not None:
            payload["description"] = description
    return payload


def _fetch_description(net, host, location, identity, timeout):
    # Only fetched from the responding host itself.
    try:
        rest = location.split("://", 1)[1]
        hostport, _, path = rest.partition("/")
        loc_host, _, loc_port = hostport.partition(":")
        if loc_host != host:
            return None
        port = int(loc_port) if loc_port else 80
        with net.tcp_connect(host, port, timeout=timeout) as stream:
            stream.send(wire.build_http_request("GET", "/" + path, host, identity.user_agent))
            _, _, _, body = wire.recv_http_response(lambda n: stream.recv(n, timeout))
        return body.decode("latin-1")
    except (ConnectionRefused, ConnectionTimeout, wire.WireError, ValueError, IndexError):
        return None


def probe_once(
    net: NetworkAccess,
    host: str,
    spec: ProbeSpec,
    identity: ScannerIdentity,
    *,
    timeout: float = 10.0,
    fetch_upnp_descriptions: bool = False,
) -> ServiceResponse:
    """Run one (host, spec) probe; failures map to non-Success statuses."""
    status = ProbeStatus.SUCCESS
    payload: dict | None = None
    try:
        if spec.protocol in (Protocol.HTTP, Protocol.HTTPS):
            payload = _http_probe(net, host, spec, identity, timeout, tls=spec.protocol is Protocol.HTTPS)
        elif spec.protocol is Protocol.SMTP:
            payload = _smtp_probe(net, host, spec, identity, timeout)
        elif spec.protocol in (Protocol.FTP, Protocol.TELNET):
            payload = _banner_probe(net, host, spec, identity, timeout)
        elif spec.protocol is Protocol.SSH:
            payload = _ssh_probe(net, host, spec, identity, timeout)
        elif spec.protocol is Protocol.SMB:
            payload = _smb_probe(net, host, spec, identity, timeout)
        elif spec.protocol is Protocol.IPP:
            payload = _ipp_probe(net, host, spec, identity, timeout)
        elif spec.protocol is Protocol.DNS:
            payload = _dns_probe(net, host, spec, identity, timeout)
        elif spec.protocol is Protocol.NTP:
            payload = _ntp_probe(net, host, spec, identity, timeout)
        elif spec.protocol is Protocol.NETBIOS:
            payload = _netbios_probe(net, host, spec, identity, timeout)
        elif spec.protocol is Protocol.SNMPV2:
            payload = _snmpv2_probe(net, host, spec, identity, timeout)
        elif spec.protocol is Protocol.SNMPV3:
            payload = _snmpv3_probe(net, host, spec, identity, timeout)
        elif spec.protocol is Protocol.UPNP:
            payload = _upnp_probe(
                net, host, spec, identity, timeout, fetch_description=fetch_upnp_descriptions
            )
        else:  # pragma: no cover
            raise wire.WireError(f"no probe for {spec.protocol}")
    except ConnectionRefused:
        status = ProbeStatus.CONN_REFUSED
    except ConnectionTimeout:
        status = ProbeStatus.TIMEOUT
    except (wire.WireError, ValueError, KeyError, IndexError):
        # anything undecodable counts as a protocol error, never a crash
        status = ProbeStatus.PROTOCOL_ERROR
    if status is ProbeStatus.SUCCESS and payload is None:
        status = ProbeStatus.TIMEOUT  # silent UDP service
    if status is not ProbeStatus.SUCCESS:
        payload = None
    return ServiceResponse(
        host=host,
        protocol=spec.protocol,
        port=spec.port,
        status=status,
        payload=payload or {},
        timestamp=net.now(),
    )


def scan_services(
    hosts: Sequence[str],
    specs: Sequence[ProbeSpec],
    net: NetworkAccess,
    identity: ScannerIdentity,
    *,
    timeout: float = 10.0,
    max_workers: int = 64,
    semaphore: threading.Semaphore | None = None,
    stop: threading.Event | None = None,
    fetch_upnp_descriptions: bool = False,
    on_response: Callable[[ServiceResponse], None] | None = None,
) -> list[ServiceResponse]:
    """Probe every (host, spec) pair concurrently; per-pair failures are
    recorded, never raised."""
    tasks = [(host, spec) for host in hosts for spec in specs]
    if not tasks:
        return []

    def run(task: tuple[str, ProbeSpec]) -> ServiceResponse | None:
        host, spec = task
        if stop is not None and stop.is_set():
            return None
        if semaphore is not None:
            semaphore.acquire()
        try:
            response = probe_once(
                net,
                host,
                spec,
                identity,
                timeout=timeout,
                fetch_upnp_descriptions=fetch_upnp_descriptions,
            )
        except Exception:
            # a single broken probe must not take the batch down
            response = ServiceResponse(
                host=host,
                protocol=spec.protocol,
                port=spec.port,
                status=ProbeStatus.PROTOCOL_ERROR,
                timestamp=net.now(),
            )
        finally:
            if semaphore is not None:
                semaphore.release()
        if on_response is not None:
            on_response(response)
        return response

    workers = max(1, min(max_workers, len(tasks)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run, tasks))
    return [r for r in results if r is not None]
