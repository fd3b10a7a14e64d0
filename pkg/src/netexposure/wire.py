"""Request builders and response parsers for the probe protocols.

Every outgoing request the scanner can emit is assembled here, so the full
set of byte templates lives in one reviewable place. Parsers are lenient:
they extract the fields the pipeline needs and raise WireError on anything
structurally broken.
"""

from __future__ import annotations

import re
import struct
import uuid


class WireError(ValueError):
    """A response could not be decoded."""


# ---------------------------------------------------------------------------
# BER (used by SNMP and for walking X.509 DER)

def ber_length(n: int) -> bytes:
    if n < 0x80:
        return bytes([n])
    body = n.to_bytes((n.bit_length() + 7) // 8, "big")
    return bytes([0x80 | len(body)]) + body


def ber_tlv(tag: int, payload: bytes) -> bytes:
    return bytes([tag]) + ber_length(len(payload)) + payload


def ber_integer(value: int) -> bytes:
    body = value.to_bytes((value.bit_length() + 8) // 8, "big", signed=True)
    return ber_tlv(0x02, body)


def ber_decode(data: bytes, offset: int = 0) -> tuple[int, bytes, int]:
    """Read one TLV; returns (tag, value, offset past the TLV)."""
    if offset + 2 > len(data):
        raise WireError("truncated TLV header")
    tag = data[offset]
    length = data[offset + 1]
    pos = offset + 2
    if length & 0x80:
        n = length & 0x7F
        if n == 0 or pos + n > len(data):
            raise WireError("bad long-form length")
        length = int.from_bytes(data[pos : pos + n], "big")
        pos += n
    if pos + length > len(data):
        raise WireError("truncated TLV value")
    return tag, data[pos : pos + length], pos + length


def ber_children(payload: bytes) -> list[tuple[int, bytes]]:
    out: list[tuple[int, bytes]] = []
    offset = 0
    while offset < len(payload):
        tag, value, offset = ber_decode(payload, offset)
        out.append((tag, value))
    return out


def encode_oid(oid: str) -> bytes:
    parts = [int(p) for p in oid.split(".")]
    if len(parts) < 2:
        raise WireError(f"OID too short: {oid}")
    out = bytearray([parts[0] * 40 + parts[1]])
    for part in parts[2:]:
        chunk = [part & 0x7F]
        part >>= 7
        while part:
            chunk.append((part & 0x7F) | 0x80)
            part >>= 7
        out.extend(reversed(chunk))
    return bytes(out)


def decode_oid(data: bytes) -> str:
    if not data:
        raise WireError("empty OID")
    parts = [data[0] // 40, data[0] % 40]
    value = 0
    for byte in data[1:]:
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            parts.append(value)
            value = 0
    return ".".join(str(p) for p in parts)


# ---------------------------------------------------------------------------
# SNMP

SNMP_GETBULK = 0xA5
SNMP_RESPONSE = 0xA2
SNMP_REPORT = 0xA8

MIB2_SYSTEM_OID = "1.3.6.1.2.1.1"

# value rendering for varbinds we care about
_SNMP_INT_TAGS = {0x02, 0x41, 0x42, 0x43, 0x46}  # integer, counters, gauge, timeticks


def _render_snmp_value(tag: int, value: bytes) -> object:
    if tag in _SNMP_INT_TAGS:
        return int.from_bytes(value, "big") if value else 0
    if tag == 0x04:
        return value.decode("utf-8", "replace")
    if tag == 0x06:
        return decode_oid(value)
    if tag == 0x40:  # IpAddress
        return ".".join(str(b) for b in value)
    if tag == 0x05:
        return None
    return value.hex()


def _snmp_varbind(oid: str, value: object) -> bytes:
    if value is None:
        encoded = ber_tlv(0x05, b"")
    elif isinstance(value, int):
        encoded = ber_tlv(0x43, value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big"))
    elif isinstance(value, tuple) and value[0] == "oid":
        encoded = ber_tlv(0x06, encode_oid(value[1]))
    else:
        encoded = ber_tlv(0x04, str(value).encode("utf-8"))
    return ber_tlv(0x30, ber_tlv(0x06, encode_oid(oid)) + encoded)


def build_snmpv2_getbulk(
    request_id: int,
    community: bytes = b"public",
    oid: str = MIB2_SYSTEM_OID,
    non_repeaters: int = 0,
    max_repetitions: int = 16,
) -> bytes:
    varbinds = ber_tlv(0x30, ber_tlv(0x30, ber_tlv(0x06, encode_oid(oid)) + ber_tlv(0x05, b"")))
    pdu = ber_tlv(
        SNMP_GETBULK,
        ber_integer(request_id)
        + ber_integer(non_repeaters)
        + ber_integer(max_repetitions)
        + varbinds,
    )
    return ber_tlv(0x30, ber_integer(1) + ber_tlv(0x04, community) + pdu)


def build_snmpv2_response(
    request_id: int, community: bytes, varbinds: list[tuple[str, object]]
) -> bytes:
    encoded = b"".join(_snmp_varbind(oid, value) for oid, value in varbinds)
    pdu = ber_tlv(
        SNMP_RESPONSE,
        ber_integer(request_id) + ber_integer(0) + ber_integer(0) + ber_tlv(0x30, encoded),
    )
    return ber_tlv(0x30, ber_integer(1) + ber_tlv(0x04, community) + pdu)


def parse_snmpv2_response(data: bytes) -> list[tuple[str, object]]:
    """Varbinds of a v2c response as (dotted OID, rendered value) pairs."""
    tag, message, _ = ber_decode(data)
    if tag != 0x30:
        raise WireError("not an SNMP message")
    children = ber_children(message)
    if len(children) != 3:
        raise WireError("bad SNMP message structure")
    pdu_tag, pdu = children[2]
    if pdu_tag != SNMP_RESPONSE:
        raise WireError(f"unexpected PDU tag {pdu_tag:#x}")
    fields = ber_children(pdu)
    out = []
    for vb_tag, vb in ber_children(fields[3][1]):
        parts = ber_children(vb)
        out.append((decode_oid(parts[0][1]), _render_snmp_value(*parts[1])))
    return out


def build_snmpv3_discovery(msg_id: int, request_id: int) -> bytes:
    """Unauthenticated noAuthNoPriv discovery; servers answer with a report
    carrying their engine ID."""
    usm = ber_tlv(
        0x30,
        ber_tlv(0x04, b"")  # authoritative engine id: unknown
        + ber_integer(0)  # boots
        + ber_integer(0)  # time
        + ber_tlv(0x04, b"")  # user name: empty
        + ber_tlv(0x04, b"")  # auth params
        + ber_tlv(0x04, b""),  # priv params
    )
    global_data = ber_tlv(
        0x30,
        ber_integer(msg_id)
        + ber_integer(65507)
        + ber_tlv(0x04, b"\x04")  # msgFlags: reportable, noAuthNoPriv
        + ber_integer(3),  # USM
    )
    varbinds = ber_tlv(0x30, ber_tlv(0x30, ber_tlv(0x06, encode_oid(MIB2_SYSTEM_OID)) + ber_tlv(0x05, b"")))
    pdu = ber_tlv(
        SNMP_GETBULK,
        ber_integer(request_id) + ber_integer(0) + ber_integer(16) + varbinds,
    )
    scoped = ber_tlv(0x30, ber_tlv(0x04, b"") + ber_tlv(0x04, b"") + pdu)
    return ber_tlv(0x30, ber_integer(3) + global_data + ber_tlv(0x04, usm) + scoped)


def build_snmpv3_report(msg_id: int, request_id: int, engine_id: bytes) -> bytes:
    usm = ber_tlv(
        0x30,
        ber_tlv(0x04, engine_id)
        + ber_integer(1)
        + ber_integer(0)
        + ber_tlv(0x04, b"")
        + ber_tlv(0x04, b"")
        + ber_tlv(0x04, b""),
    )
    global_data = ber_tlv(
        0x30,
        ber_integer(msg_id) + ber_integer(65507) + ber_tlv(0x04, b"\x00") + ber_integer(3),
    )
    stats = _snmp_varbind("1.3.6.1.6.3.15.1.1.4.0", 1)
    pdu = ber_tlv(
        SNMP_REPORT,
        ber_integer(request_id) + ber_integer(0) + ber_integer(0) + ber_tlv(0x30, stats),
    )
    scoped = ber_tlv(0x30, ber_tlv(0x04, engine_id) + ber_tlv(0x04, b"") + pdu)
    return ber_tlv(0x30, ber_integer(3) + global_data + ber_tlv(0x04, usm) + scoped)


def parse_snmpv3_engine_id(data: bytes) -> bytes:
    """msgAuthoritativeEngineID from a v3 message (reports included)."""
    tag, message, _ = ber_decode(data)
    if tag != 0x30:
        raise WireError("not an SNMP message")
    children = ber_children(message)
    if len(children) < 3:
        raise WireError("bad SNMPv3 structure")
    sec_tag, sec_params = children[2]
    if sec_tag != 0x04:
        raise WireError("missing security parameters")
    usm_tag, usm, _ = ber_decode(sec_params)
    usm_children = ber_children(usm)
    engine_id = usm_children[0][1]
    if not engine_id:
        raise WireError("empty engine ID in report")
    return engine_id


# ---------------------------------------------------------------------------
# DNS (also covers mDNS service discovery)

DNS_TYPE_PTR = 12
DNS_TYPE_TXT = 16
DNS_CLASS_IN = 1
DNS_CLASS_CH = 3

DNSSD_ALL_SERVICES = "_services._dns-sd._udp.local"


def _encode_dns_name(name: str) -> bytes:
    out = bytearray()
    for label in name.rstrip(".").split("."):
        raw = label.encode("ascii")
        if not 0 < len(raw) < 64:
            raise WireError(f"bad DNS label: {label!r}")
        out.append(len(raw))
        out.extend(raw)
    out.append(0)
    return bytes(out)


def _read_dns_name(data: bytes, offset: int) -> tuple[str, int]:
    labels: list[str] = []
    jumps = 0
    end = None
    while True:
        if offset >= len(data):
            raise WireError("truncated DNS name")
        length = data[offset]
        if length == 0:
            offset += 1
            break
        if length & 0xC0 == 0xC0:
            if offset + 1 >= len(data):
                raise WireError("truncated compression pointer")
            pointer = ((length & 0x3F) << 8) | data[offset + 1]
            if end is None:
                end = offset + 2
            offset = pointer
            jumps += 1
            if jumps > 32:
                raise WireError("DNS compression loop")
            continue
        labels.append(data[offset + 1 : offset + 1 + length].decode("ascii", "replace"))
        offset += 1 + length
    return ".".join(labels), (end if end is not None else offset)


def build_dns_query(txid: int, qname: str, qtype: int, qclass: int) -> bytes:
    header = struct.pack(">HHHHHH", txid, 0x0000, 1, 0, 0, 0)
    return header + _encode_dns_name(qname) + struct.pack(">HH", qtype, qclass)


def build_version_bind_query(txid: int) -> bytes:
    return build_dns_query(txid, "version.bind", DNS_TYPE_TXT, DNS_CLASS_CH)


def build_dnssd_query(txid: int) -> bytes:
    return build_dns_query(txid, DNSSD_ALL_SERVICES, DNS_TYPE_PTR, DNS_CLASS_IN)


def build_dns_response(
    txid: int, qname: str, qtype: int, qclass: int, answers: list[bytes]
) -> bytes:
    """Answers are pre-encoded rdata blobs for (qname, qtype, qclass)."""
    header = struct.pack(">HHHHHH", txid, 0x8400, 1, len(answers), 0, 0)
    question = _encode_dns_name(qname) + struct.pack(">HH", qtype, qclass)
    body = bytearray(header + question)
    for rdata in answers:
        body += _encode_dns_name(qname)
        body += struct.pack(">HHIH", qtype, qclass, 0, len(rdata))
        body += rdata
    return bytes(body)


def encode_txt_rdata(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 255:
        raw = raw[:255]
    return bytes([len(raw)]) + raw


def encode_ptr_rdata(target: str) -> bytes:
    return _encode_dns_name(target)


def parse_dns_response(data: bytes) -> list[dict[str, object]]:
    """Answer records as dicts with name/type/value keys.

    TXT values are the joined character strings, PTR values the target name,
    everything else hex of the rdata.
    """
    if len(data) < 12:
        raise WireError("short DNS message")
    txid, flags, qdcount, ancount, _, _ = struct.unpack(">HHHHHH", data[:12])
    offset = 12
    for _ in range(qdcount):
        _, offset = _read_dns_name(data, offset)
        offset += 4
    answers = []
    for _ in range(ancount):
        name, offset = _read_dns_name(data, offset)
        if offset + 10 > len(data):
            raise WireError("truncated answer")
        rtype, rclass, _, rdlength = struct.unpack(">HHIH", data[offset : offset + 10])
        offset += 10
        rdata = data[offset : offset + rdlength]
        if len(rdata) < rdlength:
            raise WireError("truncated rdata")
        if rtype == DNS_TYPE_TXT:
            strings = []
            pos = 0
            while pos < len(rdata):
                n = rdata[pos]
                strings.append(rdata[pos + 1 : pos + 1 + n].decode("utf-8", "replace"))
                pos += 1 + n
            value: object = "".join(strings)
        elif rtype == DNS_TYPE_PTR:
            value, _ = _read_dns_name(data, offset)
        else:
            value = rdata.hex()
        offset += rdlength
        answers.append({"name": name, "type": rtype, "value": value})
    return answers


# ---------------------------------------------------------------------------
# NetBIOS name service (node status)

NBSTAT_TYPE = 0x0021
NB_GROUP_FLAG = 0x8000


def encode_netbios_name(name: bytes) -> bytes:
    """First-level encoding of a 16-byte NetBIOS name field."""
    if len(name) != 16:
        raise WireError("NetBIOS name field must be 16 bytes")
    out = bytearray()
    for byte in name:
        out.append(ord("A") + (byte >> 4))
        out.append(ord("A") + (byte & 0x0F))
    return bytes([0x20]) + bytes(out) + b"\x00"


# The wildcard name: '*' then fifteen NULs.
WILDCARD_NB_NAME = encode_netbios_name(b"*" + b"\x00" * 15)


def build_node_status_query(txid: int) -> bytes:
    header = struct.pack(">HHHHHH", txid, 0x0000, 1, 0, 0, 0)
    return header + WILDCARD_NB_NAME + struct.pack(">HH", NBSTAT_TYPE, DNS_CLASS_IN)


def build_node_status_response(
    txid: int, entries: list[tuple[str, int, bool]], mac: bytes = b"\x00" * 6
) -> bytes:
    """Entries are (name, suffix, is_group) triples."""
    rdata = bytearray([len(entries)])
    for name, suffix, is_group in entries:
        padded = name.encode("ascii", "replace")[:15].ljust(15, b" ")
        flags = NB_GROUP_FLAG if is_group else 0x0000
        flags |= 0x0400  # active name
        rdata += padded + bytes([suffix]) + struct.pack(">H", flags)
    rdata += mac + b"\x00" * 40  # statistics block
    header = struct.pack(">HHHHHH", txid, 0x8400, 0, 1, 0, 0)
    answer = WILDCARD_NB_NAME + struct.pack(">HHIH", NBSTAT_TYPE, DNS_CLASS_IN, 0, len(rdata))
    return header + answer + bytes(rdata)


def parse_node_status(data: bytes) -> tuple[list[str], list[str]]:
    """Unique (names, groups) advertised in a node status response."""
    if len(data) < 12:
        raise WireError("short NetBIOS message")
    offset = 12
    _, offset = _read_dns_name(data, offset)
    if offset + 10 > len(data):
        raise WireError("truncated NetBIOS answer")
    rtype, _, _, rdlength = struct.unpack(">HHIH", data[offset : offset + 10])
    if rtype != NBSTAT_TYPE:
        raise WireError(f"not a node status response: type {rtype:#x}")
    offset += 10
    rdata = data[offset : offset + rdlength]
    if not rdata:
        raise WireError("empty node status rdata")
    count = rdata[0]
    names: list[str] = []
    groups: list[str] = []
    pos = 1
    for _ in range(count):
        if pos + 18 > len(rdata):
            raise WireError("truncated name entry")
        raw = rdata[pos : pos + 15].rstrip(b" \x00")
        flags = struct.unpack(">H", rdata[pos + 16 : pos + 18])[0]
        decoded = raw.decode("ascii", "replace")
        bucket = groups if flags & NB_GROUP_FLAG else names
        if decoded and decoded not in bucket:
            bucket.append(decoded)
        pos += 18
    return names, groups


# ---------------------------------------------------------------------------
# NTP

def build_ntp_client() -> bytes:
    # LI 0, version 4, mode 3 (client); all timestamps zero so the template
    # is byte-stable across runs.
    return bytes([0x23]) + bytes(47)


def build_ntp_server_reply(stratum: int = 2, refid: bytes = b"GPS\x00") -> bytes:
    packet = bytearray(48)
    packet[0] = 0x24  # version 4, mode 4 (server)
    packet[1] = stratum
    packet[12:16] = refid[:4].ljust(4, b"\x00")
    return bytes(packet)


def parse_ntp(data: bytes) -> dict[str, object]:
    if len(data) < 48:
        raise WireError("short NTP packet")
    first = data[0]
    return {
        "version": (first >> 3) & 0x07,
        "mode": first & 0x07,
        "stratum": data[1],
        "refid": data[12:16].hex(),
    }


# ---------------------------------------------------------------------------
# HTTP / SSDP

HTTP_BODY_LIMIT = 256 * 1024
BANNER_LIMIT = 4096


def build_http_request(
    method: str,
    path: str,
    host: str,
    user_agent: str,
    headers: list[tuple[str, str]] | None = None,
    body: bytes = b"",
) -> bytes:
    lines = [f"{method} {path} HTTP/1.1", f"Host: {host}", f"User-Agent: {user_agent}"]
    for name, value in headers or []:
        lines.append(f"{name}: {value}")
    if body:
        lines.append(f"Content-Length: {len(body)}")
    lines.append("Accept: */*")
    lines.append("Connection: close")
    return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1") + body


class ByteReader:
    """Buffers a recv callable so parsers can read exact spans."""

    def __init__(self, recv):
        self._recv = recv
        self._buffer = bytearray()
        self._eof = False

    def _fill(self) -> bool:
        if self._eof:
            return False
        chunk = self._recv(65536)
        if not chunk:
            self._eof = True
            return False
        self._buffer.extend(chunk)
        return True

    def read_until(self, marker: bytes, limit: int) -> bytes | None:
        while True:
            idx = self._buffer.find(marker)
            if idx >= 0:
                end = idx + len(marker)
                out = bytes(self._buffer[:end])
                del self._buffer[:end]
                return out
            if len(self._buffer) > limit or not self._fill():
                return None

    def read_exact(self, n: int) -> bytes:
        while len(self._buffer) < n and self._fill():
            pass
        out = bytes(self._buffer[:n])
        del self._buffer[:n]
        return out

    def read_to_eof(self, limit: int) -> bytes:
        while len(self._buffer) < limit and self._fill():
            pass
        out = bytes(self._buffer[:limit])
        del self._buffer[:limit]
        return out


def parse_http_head(head: bytes) -> tuple[int, str, list[tuple[str, str]]]:
    text = head.decode("latin-1")
    lines = text.split("\r\n")
    status_line = lines[0]
    parts = status_line.split(None, 2)
    if len(parts) < 2 or not parts[0].startswith("HTTP/"):
        raise WireError(f"bad status line: {status_line!r}")
    try:
        status = int(parts[1])
    except ValueError as exc:
        raise WireError(f"bad status code in {status_line!r}") from exc
    headers = []
    for line in lines[1:]:
        if not line:
            continue
        if ":" not in line:
            raise WireError(f"bad header line: {line!r}")
        name, _, value = line.partition(":")
        headers.append((name.strip(), value.strip()))
    return status, status_line, headers


def recv_http_response(recv, body_limit: int = HTTP_BODY_LIMIT):
    """Read one HTTP response from a recv callable.

    Returns (status, status_line, headers, body). Body honors
    Content-Length and chunked transfer coding, capped at body_limit.
    """
    reader = ByteReader(recv)
    head = reader.read_until(b"\r\n\r\n", 64 * 1024)
    if head is None:
        raise WireError("no HTTP header terminator")
    status, status_line, headers = parse_http_head(head[:-4])
    lowered = {name.lower(): value for name, value in headers}
    if lowered.get("transfer-encoding", "").lower() == "chunked":
        body = bytearray()
        while True:
            size_line = reader.read_until(b"\r\n", 1024)
            if size_line is None:
                break
            try:
                size = int(size_line.strip().split(b";")[0], 16)
            except ValueError as exc:
                raise WireError("bad chunk size") from exc
            if size == 0:
                reader.read_until(b"\r\n", 1024)
                break
            chunk = reader.read_exact(size)
            reader.read_exact(2)
            body.extend(chunk)
            if len(body) >= body_limit:
                break
        return status, status_line, headers, bytes(body[:body_limit])
    if "content-length" in lowered:
        try:
            length = min(int(lowered["content-length"]), body_limit)
        except ValueError as exc:
            raise WireError("bad content-length") from exc
        return status, status_line, headers, reader.read_exact(length)
    return status, status_line, headers, reader.read_to_eof(body_limit)


SSDP_GROUP = "239.255.255.250"
SSDP_PORT = 1900
MDNS_GROUP = "224.0.0.251"
MDNS_PORT = 5353


def build_msearch(host_header: str, st: str, mx: int, user_agent: str) -> bytes:
    lines = [
        "M-SEARCH * HTTP/1.1",
        f"HOST: {host_header}",
        'MAN: "ssdp:discover"',
        f"MX: {mx}",
        f"ST: {st}",
        f"USER-AGENT: {user_agent}",
    ]
    return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1")


def build_ssdp_reply(headers: dict[str, str]) -> bytes:
    lines = ["HTTP/1.1 200 OK"] + [f"{k}: {v}" for k, v in headers.items()]
    return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1")


def parse_ssdp_reply(data: bytes) -> dict[str, str]:
    """Headers of an SSDP unicast reply, keyed lowercase, first value wins."""
    text = data.decode("latin-1", "replace")
    lines = text.split("\r\n")
    if "200" not in lines[0]:
        raise WireError(f"not an SSDP OK reply: {lines[0]!r}")
    out: dict[str, str] = {}
    for line in lines[1:]:
        if not line or ":" not in line:
            continue
        name, _, value = line.partition(":")
        key = name.strip().lower()
        if key not in out:
            out[key] = value.strip()
    return out


def udn_from_usn(usn: str) -> str:
    """USN is '<UDN>::<extra>' or the bare UDN."""
    return usn.split("::", 1)[0].strip()


# ---------------------------------------------------------------------------
# SMB2 negotiate

def _smb2_header(command: int, flags: int = 0) -> bytes:
    return struct.pack(
        "<4sHHIHHIIQIIQ16s",
        b"\xfeSMB",
        64,  # structure size
        0,  # credit charge
        0,  # status / channel sequence
        command,
        1,  # credits
        flags,
        0,  # next command
        0,  # message id
        0,  # process id
        0,  # tree id
        0,  # session id
        b"\x00" * 16,
    )


def _nbss(payload: bytes) -> bytes:
    return b"\x00" + len(payload).to_bytes(3, "big")


def build_smb2_negotiate() -> bytes:
    body = struct.pack(
        "<HHHHI16sQHH",
        36,  # structure size
        2,  # dialect count
        1,  # security mode: signing enabled
        0,
        0,  # capabilities
        b"\x00" * 16,  # client GUID: zeroed on purpose
        0,  # client start time
        0x0202,
        0x0210,
    )
    message = _smb2_header(0) + body
    return _nbss(message) + message


def build_smb2_negotiate_response(server_guid: bytes) -> bytes:
    if len(server_guid) != 16:
        raise WireError("server GUID must be 16 bytes")
    body = struct.pack(
        "<HHHH16sIIIIQQHHI",
        65,  # structure size
        1,  # security mode
        0x0210,  # dialect
        0,
        server_guid,
        0,  # capabilities
        65536,
        65536,
        65536,
        0,  # system time
        0,  # server start time
        128,  # security buffer offset
        0,  # security buffer length
        0,
    )
    message = _smb2_header(0, flags=0x00000001) + body  # response flag
    return _nbss(message) + message


def parse_smb2_server_guid(data: bytes) -> bytes:
    offset = 0
    if data[:1] == b"\x00" and len(data) >= 4:
        offset = 4
    if data[offset : offset + 4] != b"\xfeSMB":
        raise WireError("not an SMB2 message")
    body = data[offset + 64 :]
    if len(body) < 24:
        raise WireError("short negotiate response")
    structure = struct.unpack("<H", body[0:2])[0]
    if structure != 65:
        raise WireError(f"unexpected negotiate structure size {structure}")
    return body[8:24]


def smb_guid_identifier(guid: bytes) -> tuple[str, bool]:
    """Canonical identifier for a server GUID field.

    Sixteen printable-ASCII bytes are treated as a text identifier rather
    than a GUID (some devices put names in this field); returns
    (value, is_real_guid).
    """
    if len(guid) == 16 and all(0x20 <= b < 0x7F for b in guid):
        return guid.decode("ascii").strip(), False
    return str(uuid.UUID(bytes_le=guid.ljust(16, b"\x00")[:16])), True


# ---------------------------------------------------------------------------
# SSH

def ssh_identification(product: str) -> bytes:
    return f"SSH-2.0-{product}\r\n".encode("ascii")


def parse_ssh_identification(line: bytes) -> str:
    text = line.strip().decode("ascii", "replace")
    if not text.startswith("SSH-"):
        raise WireError(f"not an SSH identification line: {text!r}")
    return text


# ---------------------------------------------------------------------------
# IPP

IPP_GET_PRINTER_ATTRIBUTES = 0x000B


def _ipp_attr(tag: int, name: str, value: str) -> bytes:
    raw_name = name.encode("ascii")
    raw_value = value.encode("utf-8")
    return (
        bytes([tag])
        + struct.pack(">H", len(raw_name))
        + raw_name
        + struct.pack(">H", len(raw_value))
        + raw_value
    )


def build_ipp_request(host: str) -> bytes:
    return (
        b"\x02\x00"  # version 2.0
        + struct.pack(">H", IPP_GET_PRINTER_ATTRIBUTES)
        + struct.pack(">I", 1)
        + b"\x01"  # operation attributes
        + _ipp_attr(0x47, "attributes-charset", "utf-8")
        + _ipp_attr(0x48, "attributes-natural-language", "en")
        + _ipp_attr(0x45, "printer-uri", f"ipp://{host}/ipp/print")
        + b"\x03"  # end of attributes
    )


def build_ipp_response(status: int = 0x0000) -> bytes:
    return b"\x02\x00" + struct.pack(">H", status) + struct.pack(">I", 1) + b"\x03"


# ---------------------------------------------------------------------------
# X.509

def certificate_signature_bits(der: bytes) -> bytes:
    """The signatureValue BIT STRING contents of a DER certificate."""
    tag, certificate, _ = ber_decode(der)
    if tag != 0x30:
        raise WireError("not a DER certificate")
    children = ber_children(certificate)
    if len(children) != 3 or children[2][0] != 0x03:
        raise WireError("missing signature value")
    bits = children[2][1]
    if not bits:
        raise WireError("empty signature value")
    return bits[1:]  # first octet is the unused-bit count


# ---------------------------------------------------------------------------
# Credential-shaped content (cloud metadata probing)

# v1 pattern set: AWS-style access key IDs plus credential JSON fields.
AWS_ACCESS_KEY_RE = re.compile(r"\b(?:A3T[A-Z0-9]|AKIA|ASIA)[A-Z0-9]{16}\b")
CREDENTIAL_FIELD_RE = re.compile(r'"(?:SecretAccessKey|Token)"\s*:')


def detect_credentials(text: str) -> bool:
    return bool(AWS_ACCESS_KEY_RE.search(text) or CREDENTIAL_FIELD_RE.search(text))
