"""Probes launched unconditionally at session start: traceroutes to fixed
targets, link-local multicast discovery, and the cloud-metadata check.

Each probe returns its results; address publishing for expansion goes
through the callback the engine hands in, so probes stay testable on their
own.
"""

from __future__ import annotations

import threading
from typing import Callable, Protocol as TypingProtocol

from .. import wire
from ..model import (
    MetadataResult,
    Protocol,
    ProbeStatus,
    ScannerIdentity,
    ServiceResponse,
    TraceHop,
    TraceMode,
    TracerouteResult,
)
from ..netaccess import (
    ConnectionRefused,
    ConnectionTimeout,
    NetworkAccess,
    ReplyKind,
)

METADATA_ADDRESS = "169.254.169.254"

# First and last host of each private range, a configurable control host,
# a well-known public resolver, and the metadata address.
_FIXED_TRACEROUTE_TARGETS = (
    "10.0.0.1",
    "10.255.255.254",
    "172.16.0.1",
    "172.31.255.254",
    "192.168.0.1",
    "192.168.255.254",
)

PUBLIC_RESOLVER = "8.8.8.8"

DEFAULT_MAX_HOPS = 30
DEFAULT_ATTEMPTS = 3
DEFAULT_HOP_TIMEOUT = 1.0
STOP_AFTER_SILENT = 5
TCP_TRACE_PORT = 80  # SYN probes; port 80 crosses most middleboxes

# Metadata paths: generic index and instance identity plus the IAM credential
# listing, with the header-gated Azure and GCP variants.
METADATA_PATHS: tuple[tuple[str, tuple[tuple[str, str], ...]], ...] = (
    ("/latest/meta-data/", ()),
    ("/latest/dynamic/instance-identity/document", ()),
    ("/latest/meta-data/iam/security-credentials/", ()),
    ("/metadata/instance?api-version=2021-02-01", (("Metadata", "true"),)),
    ("/computeMetadata/v1/", (("Metadata-Flavor", "Google"),)),
)

BODY_EXCERPT_LIMIT = 4096


class ExternalInfoProvider(TypingProtocol):
    """Optional third-party lookups (egress address, NAT type)."""

    def vantage_address(self) -> str | None: ...

    def nat_type(self) -> str | None: ...


class StubExternalInfo:
    """Default provider: knows nothing, touches no external services."""

    def vantage_address(self) -> str | None:
        return None

    def nat_type(self) -> str | None:
        return None


def build_traceroute_targets(control_host: str) -> list[tuple[str, TraceMode]]:
    """The 9x2 (target, mode) runs performed at session start."""
    targets = (*_FIXED_TRACEROUTE_TARGETS, control_host, PUBLIC_RESOLVER, METADATA_ADDRESS)
    return [(target, mode) for mode in (TraceMode.ICMP, TraceMode.TCP) for target in targets]


def traceroute(
    target: str,
    mode: TraceMode,
    net: NetworkAccess,
    *,
    max_hops: int = DEFAULT_MAX_HOPS,
    attempts: int = DEFAULT_ATTEMPTS,
    hop_timeout: float = DEFAULT_HOP_TIMEOUT,
    stop: threading.Event | None = None,
) -> TracerouteResult:
    """Per-hop probing with rising TTL, first responder recorded per hop.

    Stops on reaching the target or after STOP_AFTER_SILENT consecutive
    silent hops.
    """
    hops: list[TraceHop] = []
    consecutive_silent = 0
    for ttl in range(1, max_hops + 1):
        if stop is not None and stop.is_set():
            break
        reply = None
        for _ in range(attempts):
            if mode is TraceMode.ICMP:
                outcome = net.icmp_echo(target, ttl=ttl, timeout=hop_timeout)
            else:
                outcome = net.tcp_syn_probe(target, TCP_TRACE_PORT, ttl=ttl, timeout=hop_timeout)
            if outcome.kind is not ReplyKind.SILENT:
                reply = outcome
                break
        if reply is None:
            hops.append(TraceHop(ttl, None))
            consecutive_silent += 1
            if consecutive_silent >= STOP_AFTER_SILENT:
                break
            continue
        consecutive_silent = 0
        hops.append(TraceHop(ttl, reply.responder, reply.rtt_ms))
        if reply.responder == target:
            break
    return TracerouteResult(target=target, mode=mode, hops=tuple(hops))


def discover_link_local(
    net: NetworkAccess,
    identity: ScannerIdentity,
    publish: Callable[[str], None],
    *,
    window: float = 3.0,
) -> list[ServiceResponse]:
    """mDNS all-services query plus SSDP ssdp:all search; every unicast
    responder is published for expansion."""
    responses: list[ServiceResponse] = []

    dnssd = wire.build_dnssd_query(0x4E45)
    for source, payload in net.multicast_exchange(
        wire.MDNS_GROUP, wire.MDNS_PORT, dnssd, wait=window
    ):
        publish(source)
        try:
            answers = wire.parse_dns_response(payload)
            services = [
                str(a["value"]) for a in answers if a["type"] == wire.DNS_TYPE_PTR
            ]
            responses.append(
                ServiceResponse(
                    host=source,
                    protocol=Protocol.DNS,
                    port=wire.MDNS_PORT,
                    status=ProbeStatus.SUCCESS,
                    payload={"services": services},
                    timestamp=net.now(),
                )
            )
        except wire.WireError:
            responses.append(
                ServiceResponse(
                    host=source,
                    protocol=Protocol.DNS,
                    port=wire.MDNS_PORT,
                    status=ProbeStatus.PROTOCOL_ERROR,
                    timestamp=net.now(),
                )
            )

    msearch = wire.build_msearch(
        f"{wire.SSDP_GROUP}:{wire.SSDP_PORT}", "ssdp:all", 2, identity.user_agent
    )
    for source, payload in net.multicast_exchange(
        wire.SSDP_GROUP, wire.SSDP_PORT, msearch, wait=window
    ):
        publish(source)
        try:
            headers = wire.parse_ssdp_reply(payload)
            responses.append(
                ServiceResponse(
                    host=source,
                    protocol=Protocol.UPNP,
                    port=wire.SSDP_PORT,
                    status=ProbeStatus.SUCCESS,
                    payload={
                        "location": headers.get("location", ""),
                        "usn": headers.get("usn", ""),
                        "st": headers.get("st", ""),
                        "server": headers.get("server", ""),
                    },
                    timestamp=net.now(),
                )
            )
        except wire.WireError:
            responses.append(
                ServiceResponse(
                    host=source,
                    protocol=Protocol.UPNP,
                    port=wire.SSDP_PORT,
                    status=ProbeStatus.PROTOCOL_ERROR,
                    timestamp=net.now(),
                )
            )
    return responses


def probe_cloud_metadata(
    net: NetworkAccess,
    identity: ScannerIdentity,
    *,
    timeout: float = 5.0,
    stop: threading.Event | None = None,
) -> list[MetadataResult]:
    """Plain GETs against the well-known metadata address.

    Transport failures are recorded per path, never raised. Bodies are kept
    only as a bounded excerpt.
    """
    results: list[MetadataResult] = []
    for path, extra_headers in METADATA_PATHS:
        if stop is not None and stop.is_set():
            break
        try:
            stream = net.tcp_connect(METADATA_ADDRESS, 80, timeout=timeout)
        except ConnectionRefused:
            results.append(MetadataResult(path, None, "", False, error="connection refused"))
            continue
        except ConnectionTimeout:
            results.append(MetadataResult(path, None, "", False, error="timeout"))
            continue
        with stream:
            request = wire.build_http_request(
                "GET", path, METADATA_ADDRESS, identity.user_agent, headers=list(extra_headers)
            )
            stream.send(request)
            try:
                status, _, _, body = wire.recv_http_response(
                    lambda n: stream.recv(n, timeout), body_limit=BODY_EXCERPT_LIMIT
                )
            except wire.WireError as exc:
                results.append(MetadataResult(path, None, "", False, error=str(exc)))
                continue
        excerpt = body[:BODY_EXCERPT_LIMIT].decode("utf-8", "replace")
        results.append(
            MetadataResult(
                endpoint_path=path,
                status=status,
                body_excerpt=excerpt,
                credentials_detected=wire.detect_credentials(excerpt),
            )
        )
    return results
