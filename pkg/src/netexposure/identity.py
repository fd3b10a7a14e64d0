"""Deduplication identifiers for service responses.

Four protocols carry native identifiers (SSH host keys, TLS certificate
signature hashes, SNMPv3 engine IDs, UPnP device names); everything else
gets a SHA-256 pseudo identifier over selected payload fields. Field
concatenation uses a single 0x1F separator so distinct field splits can
never collide.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

from . import wire
from .model import (
    Derivation,
    Protocol,
    ProbeStatus,
    ServiceIdentifier,
    ServiceResponse,
    Strength,
    STRONG_PROTOCOLS,
)

SEP = b"\x1f"

# Strict HTTP hashing ignores cookie and caching negotiation headers.
HTTP_EXCLUDED_HEADERS = frozenset(
    {"set-cookie", "cookie", "date", "expires", "age", "cache-control", "etag", "last-modified"}
)


class MissingField(KeyError):
    """A payload lacks a field the derivation needs."""


class MalformedEngineId(ValueError):
    pass


def _sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _require(resp: ServiceResponse, key: str) -> object:
    try:
        return resp.payload[key]
    except KeyError:
        raise MissingField(f"{resp.protocol.value} payload missing {key!r}") from None


def _strength(protocol: Protocol) -> Strength:
    return Strength.STRONG if protocol in STRONG_PROTOCOLS else Strength.WEAK


def _concat_hash(fields: list[str]) -> str:
    return _sha256_hex(SEP.join(f.encode("utf-8", "surrogateescape") for f in fields))


def _http_strict_hash(resp: ServiceResponse) -> str:
    headers = resp.payload.get("headers", [])
    canonical = sorted(
        f"{str(name).lower()}:{value}"
        for name, value in headers
        if str(name).lower() not in HTTP_EXCLUDED_HEADERS
    )
    body = str(resp.payload.get("body", "")).encode("latin-1", "replace")
    blob = SEP.join(h.encode("utf-8", "surrogateescape") for h in canonical) + SEP + body
    return _sha256_hex(blob)


# Payload field hashed for the plain banner protocols.
_BANNER_FIELDS = {
    Protocol.TELNET: "banner",
    Protocol.FTP: "banner",
    Protocol.SMTP: "banner",
    Protocol.NTP: "response",
    Protocol.IPP: "body",
    Protocol.DNS: "version_bind",
}


def derive_identifier(resp: ServiceResponse) -> ServiceIdentifier:
    """Deterministic identifier for a successful response."""
    if resp.status is not ProbeStatus.SUCCESS:
        raise ValueError("identifiers derive from Success responses only")
    protocol = resp.protocol
    qualifier = None

    if protocol is Protocol.SSH:
        host_key = bytes.fromhex(str(_require(resp, "host_key")))
        value = _sha256_hex(host_key)
        derivation = Derivation.SSH_HOST_KEY
    elif protocol is Protocol.HTTPS:
        der = bytes.fromhex(str(_require(resp, "certificate")))
        value = _sha256_hex(wire.certificate_signature_bits(der))
        derivation = Derivation.TLS_CERT_SIGNATURE_HASH
    elif protocol is Protocol.SNMPV3:
        value = str(_require(resp, "engine_id")).lower()
        derivation = Derivation.SNMP_ENGINE_ID
    elif protocol is Protocol.UPNP:
        value = wire.udn_from_usn(str(_require(resp, "usn")))
        derivation = Derivation.UPNP_UDN
    elif protocol is Protocol.SMB:
        guid = bytes.fromhex(str(_require(resp, "server_guid")))
        value, real_guid = wire.smb_guid_identifier(guid)
        qualifier = None if real_guid else "non-guid"
        derivation = Derivation.SMB_GUID
    elif protocol is Protocol.SNMPV2:
        fields = [
            str(resp.payload.get(name, ""))
            for name in ("sysDescr", "sysName", "sysLocation", "sysObjectID", "sysContact")
        ]
        value = _concat_hash(fields)
        derivation = Derivation.PAYLOAD_HASH
    elif protocol is Protocol.HTTP:
        value = _http_strict_hash(resp)
        derivation = Derivation.PAYLOAD_HASH
    elif protocol is Protocol.NETBIOS:
        names = sorted(str(n) for n in _require(resp, "names"))
        groups = sorted(str(g) for g in _require(resp, "groups"))
        value = _concat_hash([",".join(names), ",".join(groups)])
        derivation = Derivation.PAYLOAD_HASH
    elif protocol in _BANNER_FIELDS:
        value = _sha256_hex(
            str(_require(resp, _BANNER_FIELDS[protocol])).encode("latin-1", "replace")
        )
        derivation = Derivation.PAYLOAD_HASH
    else:  # pragma: no cover
        raise MissingField(f"no derivation for {protocol.value}")

    return ServiceIdentifier(
        protocol=protocol,
        strength=_strength(protocol),
        value=value,
        derivation=derivation,
        qualifier=qualifier,
    )


def relaxed_http_hash(resp: ServiceResponse) -> str:
    """Looser HTTP digest over status code, Server, WWW-Authenticate, and
    body; this is the visibility-oracle lookup form for HTTP."""
    if resp.protocol not in (Protocol.HTTP, Protocol.HTTPS):
        raise ValueError("relaxed hash applies to HTTP(S) responses")
    headers = {
        str(name).lower(): str(value) for name, value in resp.payload.get("headers", [])
    }
    status = resp.payload.get("status_code", "")
    blob = (
        str(status).encode()
        + SEP
        + headers.get("server", "").encode("utf-8", "surrogateescape")
        + SEP
        + headers.get("www-authenticate", "").encode("utf-8", "surrogateescape")
        + SEP
        + str(resp.payload.get("body", "")).encode("latin-1", "replace")
    )
    return _sha256_hex(blob)


# ---------------------------------------------------------------------------
# SNMPv3 engine IDs (RFC 3411 layout)


class EngineIdFormat(Enum):
    IPV4 = "ipv4"
    IPV6 = "ipv6"
    MAC = "mac"
    TEXT = "text"
    OCTETS = "octets"
    ENTERPRISE_SPECIFIC = "enterprise_specific"
    LEGACY = "legacy"


_FORMAT_OCTETS = {
    1: EngineIdFormat.IPV4,
    2: EngineIdFormat.IPV6,
    3: EngineIdFormat.MAC,
    4: EngineIdFormat.TEXT,
    5: EngineIdFormat.OCTETS,
}


@dataclass(frozen=True)
class EngineIdInfo:
    enterprise: int
    format: EngineIdFormat
    mac: bytes | None = None


def classify_engine_id(engine_id: bytes) -> EngineIdInfo:
    """Parse the RFC 3411 layout: high bit set means 4-byte enterprise
    number plus a format octet and body; clear means the legacy scheme."""
    if not 5 <= len(engine_id) <= 32:
        raise MalformedEngineId(f"engine ID length {len(engine_id)} outside 5..32")
    if not engine_id[0] & 0x80:
        enterprise = int.from_bytes(engine_id[:4], "big")
        return EngineIdInfo(enterprise=enterprise, format=EngineIdFormat.LEGACY)
    enterprise = int.from_bytes(engine_id[:4], "big") & 0x7FFFFFFF
    format_octet = engine_id[4]
    body = engine_id[5:]
    if format_octet >= 128:
        return EngineIdInfo(enterprise=enterprise, format=EngineIdFormat.ENTERPRISE_SPECIFIC)
    fmt = _FORMAT_OCTETS.get(format_octet)
    if fmt is None:
        raise MalformedEngineId(f"reserved format octet {format_octet:#04x}")
    if fmt is EngineIdFormat.MAC:
        if len(body) != 6:
            raise MalformedEngineId(f"MAC format requires a 6-byte body, got {len(body)}")
        return EngineIdInfo(enterprise=enterprise, format=fmt, mac=bytes(body))
    return EngineIdInfo(enterprise=enterprise, format=fmt)
