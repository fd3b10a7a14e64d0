from __future__ import annotations

import ipaddress
import random

import pytest
from hypothesis import given, strategies as st

from netexposure.model import (
    AddressClass,
    Derivation,
    ExposureEdge,
    MetadataResult,
    ObservedPacket,
    Protocol,
    ProbeStatus,
    RESERVED_RANGES,
    ScanSession,
    ScannerIdentity,
    ServiceIdentifier,
    ServiceResponse,
    Strength,
    STRONG_PROTOCOLS,
    NetworkTarget,
    Provenance,
    TraceHop,
    TraceMode,
    TracerouteResult,
    Transport,
    classify_address,
    is_multicast_or_broadcast,
    slash24,
)


def test_classify_address_examples():
    assert classify_address("10.8.0.1") is AddressClass.RFC1918_10
    assert classify_address("100.100.1.1") is AddressClass.CGNAT
    assert classify_address("198.19.0.7") is AddressClass.BENCHMARK
    assert classify_address("8.8.8.8") is AddressClass.PUBLIC_ROUTABLE


def test_classify_address_boundaries():
    assert classify_address("172.16.0.0") is AddressClass.RFC1918_172
    assert classify_address("172.31.255.255") is AddressClass.RFC1918_172
    assert classify_address("172.32.0.0") is AddressClass.PUBLIC_ROUTABLE
    assert classify_address("169.254.169.254") is AddressClass.LINK_LOCAL
    assert classify_address("240.0.0.0") is AddressClass.CLASS_E
    assert classify_address("255.255.255.255") is AddressClass.CLASS_E
    # multicast and documentation space fall through to public
    assert classify_address("224.0.0.251") is AddressClass.PUBLIC_ROUTABLE
    assert classify_address("192.0.2.1") is AddressClass.PUBLIC_ROUTABLE


def test_classify_address_is_a_partition():
    rng = random.Random(0)
    for _ in range(10_000):
        addr = ipaddress.IPv4Address(rng.getrandbits(32))
        containing = [cls for net, cls in RESERVED_RANGES if addr in net]
        assert len(containing) <= 1
        expected = containing[0] if containing else AddressClass.PUBLIC_ROUTABLE
        assert classify_address(addr) is expected
        assert classify_address(str(addr)) is expected  # rerun, same result


def test_multicast_broadcast_helper():
    assert is_multicast_or_broadcast("224.0.0.251")
    assert is_multicast_or_broadcast("255.255.255.255")
    assert not is_multicast_or_broadcast("10.0.0.1")


def test_slash24():
    assert str(slash24("172.16.5.77")) == "172.16.5.0/24"


def test_network_target_requires_slash24():
    with pytest.raises(ValueError):
        NetworkTarget("10.0.0.0/16", Provenance.MANUAL)


def test_scan_session_validation():
    identity = ScannerIdentity("ua", "ehlo")
    with pytest.raises(ValueError):
        ScanSession("s", "10.0.0.1", "10.0.0.0/24", (), identity, time_budget=0)
    with pytest.raises(ValueError):
        ScanSession("s", "10.0.0.1", "10.0.0.0/24", (), ScannerIdentity("", "e"))
    with pytest.raises(ValueError):
        ScanSession("s", "10.0.0.1", "10.0.0.0/24", (), ScannerIdentity("u", ""))


def test_observed_packet_invariants():
    with pytest.raises(ValueError):
        ObservedPacket("1.2.3.4", "5.6.7.8", Transport.TCP, ttl=64)  # flags required
    with pytest.raises(ValueError):
        ObservedPacket("1.2.3.4", "5.6.7.8", Transport.UDP, ttl=64, tcp_flags=2)
    with pytest.raises(ValueError):
        ObservedPacket("1.2.3.4", "5.6.7.8", Transport.UDP, ttl=0)


def test_service_response_payload_iff_success():
    with pytest.raises(ValueError):
        ServiceResponse("1.2.3.4", Protocol.SSH, 22, ProbeStatus.SUCCESS, payload={})
    with pytest.raises(ValueError):
        ServiceResponse("1.2.3.4", Protocol.SSH, 22, ProbeStatus.TIMEOUT, payload={"x": 1})


def test_identifier_strength_is_checked():
    with pytest.raises(ValueError):
        ServiceIdentifier(Protocol.SSH, Strength.WEAK, "x", Derivation.SSH_HOST_KEY)
    with pytest.raises(ValueError):
        ServiceIdentifier(Protocol.SMB, Strength.STRONG, "x", Derivation.SMB_GUID)


# -- serialization round trips ------------------------------------------------

addresses = st.integers(min_value=1, max_value=2**32 - 2).map(
    lambda n: str(ipaddress.IPv4Address(n))
)
ports = st.integers(min_value=0, max_value=65535)


@st.composite
def packets(draw):
    transport = draw(st.sampled_from(list(Transport)))
    flags = draw(st.integers(0, 255)) if transport is Transport.TCP else None
    return ObservedPacket(
        src=draw(addresses),
        dst=draw(addresses),
        transport=transport,
        ttl=draw(st.integers(1, 255)),
        src_port=draw(st.none() | ports),
        dst_port=draw(st.none() | ports),
        tcp_flags=flags,
        timestamp=draw(st.floats(0, 1e6, allow_nan=False)),
    )


@st.composite
def identifiers(draw):
    protocol = draw(st.sampled_from(list(Protocol)))
    strength = Strength.STRONG if protocol in STRONG_PROTOCOLS else Strength.WEAK
    return ServiceIdentifier(
        protocol=protocol,
        strength=strength,
        value=draw(st.text(min_size=1, max_size=64)),
        derivation=draw(st.sampled_from(list(Derivation))),
        qualifier=draw(st.none() | st.just("non-guid")),
    )


@st.composite
def responses(draw):
    status = draw(st.sampled_from(list(ProbeStatus)))
    payload = {}
    if status is ProbeStatus.SUCCESS:
        payload = draw(
            st.dictionaries(
                st.text(min_size=1, max_size=10),
                st.text(max_size=20) | st.integers(-1000, 1000),
                min_size=1,
                max_size=4,
            )
        )
    return ServiceResponse(
        host=draw(addresses),
        protocol=draw(st.sampled_from(list(Protocol))),
        port=draw(ports),
        status=status,
        payload=payload,
        timestamp=draw(st.floats(0, 1e6, allow_nan=False)),
    )


@st.composite
def edges(draw):
    from netexposure.model import Category

    return ExposureEdge(
        endpoint_id=draw(st.text(min_size=1, max_size=12)),
        identifier=draw(identifiers()),
        host=draw(addresses),
        hop_count=draw(st.none() | st.integers(0, 40)),
        same_slash24=draw(st.booleans()),
        src_class=draw(st.sampled_from(list(AddressClass))),
        dst_class=draw(st.sampled_from(list(AddressClass))),
        category=draw(st.sampled_from(list(Category))),
        internet_visible=draw(st.none() | st.booleans()),
        visibility_low_confidence=draw(st.booleans()),
        oracle_key=draw(st.text(max_size=20)),
        vantage_address=draw(st.none() | addresses),
        asn=draw(st.none() | st.integers(0, 4_000_000_000)),
        country=draw(st.none() | st.text(min_size=2, max_size=2)),
    )


@given(packets())
def test_packet_round_trip(packet):
    assert ObservedPacket.from_json_obj(packet.to_json_obj()) == packet


@given(responses())
def test_response_round_trip(response):
    assert ServiceResponse.from_json_obj(response.to_json_obj()) == response


@given(identifiers())
def test_identifier_round_trip(identifier):
    assert ServiceIdentifier.from_json_obj(identifier.to_json_obj()) == identifier


@given(edges())
def test_edge_round_trip(edge):
    assert ExposureEdge.from_json_obj(edge.to_json_obj()) == edge


def test_traceroute_and_metadata_round_trip():
    trace = TracerouteResult(
        target="10.0.0.1",
        mode=TraceMode.TCP,
        hops=(TraceHop(1, "10.8.0.1", 1.5), TraceHop(2, None, None)),
    )
    assert TracerouteResult.from_json_obj(trace.to_json_obj()) == trace
    meta = MetadataResult("/latest/meta-data/", 200, "ami-id", False)
    assert MetadataResult.from_json_obj(meta.to_json_obj()) == meta


def test_traceroute_hop_indices_validated():
    with pytest.raises(ValueError):
        TracerouteResult("10.0.0.1", TraceMode.ICMP, (TraceHop(2, None), TraceHop(1, None)))
    with pytest.raises(ValueError):
        TracerouteResult("10.0.0.1", TraceMode.ICMP, (TraceHop(65, None),))


def test_network_target_and_session_round_trip():
    target = NetworkTarget("172.16.5.0/24", Provenance.TRACEROUTE, discovered_at=4.5)
    assert NetworkTarget.from_json_obj(target.to_json_obj()) == target
    session = ScanSession(
        "s1",
        "10.8.0.5",
        "10.8.0.0/24",
        ("10.8.0.1",),
        ScannerIdentity("ua/1", "ehlo.example"),
        time_budget=120.0,
        allow_public=True,
    )
    assert ScanSession.from_json_obj(session.to_json_obj()) == session


def test_exposure_graph_round_trip_and_validation():
    from netexposure.model import Category, ExposureGraph

    ident = ServiceIdentifier(Protocol.SSH, Strength.STRONG, "k", Derivation.SSH_HOST_KEY)
    edge = ExposureEdge(
        endpoint_id="e1",
        identifier=ident,
        host="10.0.0.9",
        hop_count=1,
        same_slash24=False,
        src_class=AddressClass.RFC1918_10,
        dst_class=AddressClass.RFC1918_10,
    )
    graph = ExposureGraph(("p",), {"e1": "p"}, (ident,), (edge,))
    assert ExposureGraph.from_json_obj(graph.to_json_obj()).edges[0] == edge
    with pytest.raises(ValueError):
        ExposureGraph(("p",), {"other": "p"}, (ident,), (edge,))
    with pytest.raises(ValueError):
        ExposureGraph(("p",), {"e1": "p"}, (), (edge,))
    with pytest.raises(ValueError):
        ExposureGraph((), {"e1": "p"}, (ident,), (edge,))
