from __future__ import annotations

import hashlib
import random
import uuid

import pytest
from hypothesis import given, strategies as st

from netexposure.identity import (
    EngineIdFormat,
    EngineIdInfo,
    MalformedEngineId,
    MissingField,
    classify_engine_id,
    derive_identifier,
    relaxed_http_hash,
)
from netexposure.model import (
    Derivation,
    Protocol,
    ProbeStatus,
    ServiceResponse,
    Strength,
    STRONG_PROTOCOLS,
)

SEP = b"\x1f"


def response(protocol: Protocol, payload: dict, host="10.0.0.9", port=1) -> ServiceResponse:
    return ServiceResponse(host, protocol, port, ProbeStatus.SUCCESS, payload)


def test_ssh_identifier_is_key_hash_and_deterministic():
    key = "000000077373682d727361deadbeef"
    a = derive_identifier(response(Protocol.SSH, {"banner": "SSH-2.0-a", "host_key": key}, host="10.0.0.1"))
    b = derive_identifier(response(Protocol.SSH, {"banner": "SSH-2.0-b", "host_key": key}, host="10.0.0.2"))
    assert a.value == b.value == hashlib.sha256(bytes.fromhex(key)).hexdigest()
    assert a.strength is Strength.STRONG
    assert a.derivation is Derivation.SSH_HOST_KEY


def test_snmpv2_identifier_matches_independent_digest():
    resp = response(Protocol.SNMPV2, {"sysName": "core-sw1"})
    ident = derive_identifier(resp)
    # field order: sysDescr, sysName, sysLocation, sysObjectID, sysContact
    expected = hashlib.sha256(SEP.join([b"", b"core-sw1", b"", b"", b""])).hexdigest()
    assert ident.value == expected
    assert ident.strength is Strength.WEAK


def test_http_identifier_ignores_cookie_and_caching_headers():
    base = {
        "status_code": 200,
        "status_line": "HTTP/1.1 200 OK",
        "headers": [["Server", "nginx"], ["X-Frame-Options", "DENY"]],
        "body": "hi",
    }
    with_cookie = dict(base, headers=base["headers"] + [["Set-Cookie", "sid=1"], ["Date", "x"]])
    a = derive_identifier(response(Protocol.HTTP, base))
    b = derive_identifier(response(Protocol.HTTP, with_cookie))
    assert a.value == b.value


def test_http_identifier_sensitive_to_other_headers_and_body():
    base = {"status_code": 200, "headers": [["Server", "nginx"]], "body": "hi"}
    a = derive_identifier(response(Protocol.HTTP, base))
    b = derive_identifier(response(Protocol.HTTP, dict(base, body="other")))
    c = derive_identifier(response(Protocol.HTTP, dict(base, headers=[["Server", "apache"]])))
    assert len({a.value, b.value, c.value}) == 3


def test_relaxed_http_hash_oracle():
    resp = response(
        Protocol.HTTP,
        {"status_code": 200, "headers": [["Server", "nginx"]], "body": "hi"},
    )
    expected = hashlib.sha256(b"200" + SEP + b"nginx" + SEP + b"" + SEP + b"hi").hexdigest()
    assert relaxed_http_hash(resp) == expected


def test_relaxed_hash_scope_differs_from_strict():
    base = {"status_code": 200, "headers": [["Server", "nginx"]], "body": "hi"}
    other = {
        "status_code": 200,
        "headers": [["Server", "nginx"], ["X-Frame-Options", "DENY"]],
        "body": "hi",
    }
    a, b = response(Protocol.HTTP, base), response(Protocol.HTTP, other)
    assert relaxed_http_hash(a) == relaxed_http_hash(b)
    assert derive_identifier(a).value != derive_identifier(b).value


def test_relaxed_hash_of_empty_fields_is_stable():
    resp = response(Protocol.HTTP, {"headers": []})
    expected = hashlib.sha256(SEP + SEP + SEP).hexdigest()
    assert relaxed_http_hash(resp) == expected
    assert relaxed_http_hash(resp) == relaxed_http_hash(resp)


def test_https_identifier_matches_cryptography_signature():
    pytest.importorskip("cryptography")
    import datetime

    from cryptography import x509
    from cryptography.hazmat.primitives import hashes, serialization
    from cryptography.hazmat.primitives.asymmetric import ec
    from cryptography.x509.oid import NameOID

    key = ec.generate_private_key(ec.SECP256R1())
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "ident-test")])
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(3)
        .not_valid_before(datetime.datetime(2020, 1, 1))
        .not_valid_after(datetime.datetime(2030, 1, 1))
        .sign(key, hashes.SHA256())
    )
    der = cert.public_bytes(serialization.Encoding.DER)
    resp = response(
        Protocol.HTTPS,
        {"status_code": 200, "headers": [], "body": "", "certificate": der.hex()},
    )
    ident = derive_identifier(resp)
    assert ident.value == hashlib.sha256(cert.signature).hexdigest()
    assert ident.strength is Strength.STRONG
    assert ident.derivation is Derivation.TLS_CERT_SIGNATURE_HASH


def test_smb_guid_forms():
    raw = uuid.uuid4()
    ident = derive_identifier(response(Protocol.SMB, {"server_guid": raw.bytes_le.hex()}))
    assert ident.value == str(raw)
    assert ident.qualifier is None
    assert ident.strength is Strength.WEAK

    text = b"VAN01-MIRROR    ".hex()
    ident = derive_identifier(response(Protocol.SMB, {"server_guid": text}))
    assert ident.value == "VAN01-MIRROR"
    assert ident.qualifier == "non-guid"


def test_upnp_udn_from_usn():
    ident = derive_identifier(
        response(Protocol.UPNP, {"usn": "uuid:abc-123::upnp:rootdevice", "location": "x"})
    )
    assert ident.value == "uuid:abc-123"
    assert ident.strength is Strength.STRONG


def test_netbios_identifier_sorted_and_deterministic():
    a = derive_identifier(
        response(Protocol.NETBIOS, {"names": ["B", "A"], "groups": ["WORKGROUP"]})
    )
    b = derive_identifier(
        response(Protocol.NETBIOS, {"names": ["A", "B"], "groups": ["WORKGROUP"]})
    )
    expected = hashlib.sha256(b"A,B" + SEP + b"WORKGROUP").hexdigest()
    assert a.value == b.value == expected


def test_banner_identifiers():
    telnet = derive_identifier(response(Protocol.TELNET, {"banner": "login: "}))
    assert telnet.value == hashlib.sha256(b"login: ").hexdigest()
    ntp = derive_identifier(response(Protocol.NTP, {"response": "24020000"}))
    assert ntp.value == hashlib.sha256(b"24020000").hexdigest()


def test_strength_matches_probe_table():
    samples = {
        Protocol.HTTP: {"status_code": 200, "headers": [], "body": "x"},
        Protocol.HTTPS: None,  # covered in the certificate test
        Protocol.SMTP: {"banner": "220 x"},
        Protocol.FTP: {"banner": "220 y"},
        Protocol.SSH: {"banner": "SSH-2.0-x", "host_key": "00"},
        Protocol.TELNET: {"banner": "z"},
        Protocol.SMB: {"server_guid": "00" * 16},
        Protocol.DNS: {"version_bind": "dnsmasq"},
        Protocol.NTP: {"response": "24"},
        Protocol.IPP: {"body": "ipp"},
        Protocol.NETBIOS: {"names": ["A"], "groups": []},
        Protocol.SNMPV2: {"sysName": "x"},
        Protocol.SNMPV3: {"engine_id": "80001f880300a0c9112233"},
        Protocol.UPNP: {"usn": "uuid:1::x"},
    }
    for protocol, payload in samples.items():
        if payload is None:
            continue
        ident = derive_identifier(response(protocol, payload))
        expected = Strength.STRONG if protocol in STRONG_PROTOCOLS else Strength.WEAK
        assert ident.strength is expected, protocol


def test_missing_field():
    with pytest.raises(MissingField):
        derive_identifier(response(Protocol.SSH, {"banner": "SSH-2.0-x"}))


def test_derive_requires_success():
    resp = ServiceResponse("10.0.0.1", Protocol.SSH, 22, ProbeStatus.TIMEOUT, {})
    with pytest.raises(ValueError):
        derive_identifier(resp)


# -- engine IDs -----------------------------------------------------------------


def test_engine_id_known_values():
    info = classify_engine_id(bytes.fromhex("80003a8c04"))
    assert info == EngineIdInfo(enterprise=14988, format=EngineIdFormat.TEXT)

    info = classify_engine_id(bytes.fromhex("80001f880300a0c9112233"))
    assert info.enterprise == 8072
    assert info.format is EngineIdFormat.MAC
    assert info.mac == bytes.fromhex("00a0c9112233")


def test_engine_id_mac_length_rule():
    with pytest.raises(MalformedEngineId):
        classify_engine_id(bytes.fromhex("800000090300112233445566"))  # 7-byte body


def test_engine_id_length_limits():
    with pytest.raises(MalformedEngineId):
        classify_engine_id(b"\x80\x00\x00\x01")  # 4 bytes
    with pytest.raises(MalformedEngineId):
        classify_engine_id(b"\x80" + b"\x00" * 32)  # 33 bytes


def test_engine_id_legacy_scheme():
    info = classify_engine_id(bytes.fromhex("000000090102030405060708"))
    assert info.format is EngineIdFormat.LEGACY
    assert info.enterprise == 9


def test_engine_id_reserved_format_is_malformed():
    with pytest.raises(MalformedEngineId):
        classify_engine_id(bytes.fromhex("80001f880700"))  # format 7 is reserved


def _reference_parse(data: bytes):
    """Independent reference parser written directly from the layout rules."""
    if len(data) < 5 or len(data) > 32:
        return ("malformed",)
    if (data[0] >> 7) == 0:
        return ("legacy", (data[0] << 24) | (data[1] << 16) | (data[2] << 8) | data[3], None)
    enterprise = ((data[0] & 0x7F) << 24) | (data[1] << 16) | (data[2] << 8) | data[3]
    fmt, body = data[4], data[5:]
    if fmt == 3:
        return ("mac", enterprise, bytes(body)) if len(body) == 6 else ("malformed",)
    names = {1: "ipv4", 2: "ipv6", 4: "text", 5: "octets"}
    if fmt in names:
        return (names[fmt], enterprise, None)
    if fmt >= 128:
        return ("enterprise_specific", enterprise, None)
    return ("malformed",)


def _random_well_formed(rng: random.Random) -> bytes:
    kind = rng.choice(["ietf", "legacy"])
    if kind == "legacy":
        length = rng.randint(5, 32)
        raw = bytes(rng.getrandbits(8) for _ in range(length))
        return bytes([raw[0] & 0x7F]) + raw[1:]
    enterprise = rng.getrandbits(31)
    fmt = rng.choice([1, 2, 3, 4, 5, rng.randint(128, 255)])
    body_len = 6 if fmt == 3 else rng.randint(0, 27)
    body = bytes(rng.getrandbits(8) for _ in range(body_len))
    return (enterprise | 0x80000000).to_bytes(4, "big") + bytes([fmt]) + body


def test_engine_id_agrees_with_reference_parser():
    rng = random.Random(1234)
    for _ in range(1000):
        data = _random_well_formed(rng)
        expected = _reference_parse(data)
        try:
            info = classify_engine_id(data)
            got = (info.format.value, info.enterprise, info.mac)
        except MalformedEngineId:
            got = ("malformed",)
        assert got == expected, data.hex()


@given(st.binary(min_size=0, max_size=40))
def test_engine_id_never_crashes_and_matches_reference(data):
    expected = _reference_parse(data)
    try:
        info = classify_engine_id(data)
        got = (info.format.value, info.enterprise, info.mac)
    except MalformedEngineId:
        got = ("malformed",)
    assert got == expected


def test_mac_iff_format_octet_3_and_body_6():
    rng = random.Random(7)
    for _ in range(500):
        data = _random_well_formed(rng)
        try:
            info = classify_engine_id(data)
        except MalformedEngineId:
            continue
        is_mac = info.format is EngineIdFormat.MAC
        expected = len(data) >= 5 and data[0] & 0x80 and data[4] == 3 and len(data) - 5 == 6
        assert is_mac == bool(expected)
