from __future__ import annotations

import json

import pytest

from netexposure.model import ObservedPacket, Protocol, TCP_RST, TCP_SYN, Transport
from netexposure.netaccess import ConnectionRefused, ConnectionTimeout, ReplyKind
from netexposure.simnet import SimNetwork, SpecError, TopologySpec, load_topology

from conftest import make_topology, run_scan, USER_AGENT, EHLO_DOMAIN


def drain_packets(net: SimNetwork) -> list[ObservedPacket]:
    out = []
    while True:
        packet = net.recv_packet(0.0)
        if packet is None:
            return out
        out.append(packet)


def two_router_topology():
    return make_topology(
        subnets=(
            {"cidr": "10.8.0.0/24", "routers": []},
            {"cidr": "172.16.5.0/24", "routers": ["10.8.0.1", "172.16.5.254"]},
        ),
        hosts=(
            {
                "address": "172.16.5.10",
                "initial_ttl": 64,
                "services": [
                    {"protocol": "ssh", "banner": "OpenSSH_6.7", "host_key": "aa" * 16}
                ],
            },
        ),
    )


def test_reply_ttl_reflects_router_distance():
    net = SimNetwork(two_router_topology())
    net.attach()
    reply = net.icmp_echo("172.16.5.10", timeout=1.0)
    assert reply.kind is ReplyKind.REPLY
    packets = drain_packets(net)
    assert packets[-1].src == "172.16.5.10"
    assert packets[-1].ttl == 62  # initial 64 minus two routers


def test_ttl_expiry_walks_the_router_chain():
    net = SimNetwork(two_router_topology())
    net.attach()
    first = net.icmp_echo("172.16.5.10", ttl=1, timeout=1.0)
    second = net.icmp_echo("172.16.5.10", ttl=2, timeout=1.0)
    through = net.icmp_echo("172.16.5.10", ttl=3, timeout=1.0)
    assert (first.kind, first.responder) == (ReplyKind.TTL_EXCEEDED, "10.8.0.1")
    assert (second.kind, second.responder) == (ReplyKind.TTL_EXCEEDED, "172.16.5.254")
    assert (through.kind, through.responder) == (ReplyKind.REPLY, "172.16.5.10")


def test_fixtureless_address_is_silent():
    net = SimNetwork(two_router_topology())
    net.attach()
    before = net.now()
    reply = net.icmp_echo("172.16.5.99", timeout=1.0)
    assert reply.kind is ReplyKind.SILENT
    assert net.now() > before  # silence still costs virtual time
    assert net.udp_exchange("172.16.5.99", 53, b"x", timeout=1.0) is None


def test_tcp_refused_emits_rst_packet():
    net = SimNetwork(two_router_topology())
    net.attach()
    with pytest.raises(ConnectionRefused):
        net.tcp_connect("172.16.5.10", 81, timeout=1.0)
    packets = drain_packets(net)
    assert any(p.transport is Transport.TCP and p.tcp_flags & TCP_RST for p in packets)


def test_unknown_host_times_out():
    net = SimNetwork(two_router_topology())
    net.attach()
    with pytest.raises(ConnectionTimeout):
        net.tcp_connect("172.20.0.1", 80, timeout=1.0)


def test_rst_middlebox_fixture():
    spec = make_topology(
        subnets=(
            {"cidr": "10.8.0.0/24", "routers": []},
            {"cidr": "10.8.1.0/24", "routers": ["10.8.0.1"]},
        ),
        hosts=(
            {
                "address": "10.8.1.7",
                "initial_ttl": 64,
                "rst_middlebox_ttl": 64,
                "services": [
                    {"protocol": "ssh", "banner": "OpenSSH_6.7", "host_key": "bb" * 16}
                ],
            },
        ),
    )
    net = SimNetwork(spec)
    net.attach()
    stream = net.tcp_connect("10.8.1.7", 22, timeout=1.0)
    stream.close()
    packets = drain_packets(net)
    rst = [p for p in packets if p.transport is Transport.TCP and p.tcp_flags & TCP_RST]
    synack = [p for p in packets if p.transport is Transport.TCP and p.tcp_flags & TCP_SYN]
    assert rst and rst[0].ttl == 64
    assert synack and synack[0].ttl == 63


def test_capture_log_http_get_carries_user_agent(identity):
    spec = make_topology(
        subnets=({"cidr": "10.8.0.0/24", "routers": []},),
        hosts=(
            {
                "address": "10.8.0.9",
                "services": [{"protocol": "http", "body": "hello"}],
            },
        ),
    )
    net = SimNetwork(spec)
    net.attach()
    from netexposure.probes.reactive import ProbeSpec, ProbeTransport, probe_once

    response = probe_once(
        net, "10.8.0.9", ProbeSpec.make(Protocol.HTTP, 80, ProbeTransport.TCP), identity
    )
    assert response.status.value == "success"
    gets = [e for e in net.capture_log() if e.data.startswith(b"GET ")]
    assert len(gets) == 1
    assert USER_AGENT.encode() in gets[0].data


def test_capture_log_smtp_ehlo_carries_domain(identity):
    spec = make_topology(
        subnets=({"cidr": "10.8.0.0/24", "routers": []},),
        hosts=(
            {
                "address": "10.8.0.9",
                "services": [
                    {"protocol": "smtp", "greeting": "220 mail", "ehlo_reply": ["250 mail"]}
                ],
            },
        ),
    )
    net = SimNetwork(spec)
    net.attach()
    from netexposure.probes.reactive import ProbeSpec, ProbeTransport, probe_once

    response = probe_once(
        net, "10.8.0.9", ProbeSpec.make(Protocol.SMTP, 25, ProbeTransport.TCP), identity
    )
    assert response.status.value == "success"
    ehlo = [e for e in net.capture_log() if e.data.startswith(b"EHLO ")]
    assert ehlo and ehlo[0].data == f"EHLO {EHLO_DOMAIN}\r\n".encode()


def test_idle_capture_log_is_empty():
    net = SimNetwork(two_router_topology())
    net.attach()
    assert net.capture_log() == []


def test_inject_places_packet_on_sniffer_stream():
    net = SimNetwork(two_router_topology())
    net.attach()
    packet = ObservedPacket("172.17.9.9", "10.8.0.5", Transport.UDP, 64, 5000, 5000)
    net.inject(packet)
    assert net.recv_packet(0.0) == packet


def test_spec_validation_errors():
    with pytest.raises(SpecError):
        make_topology(
            subnets=({"cidr": "10.8.0.0/24", "routers": []},),
            hosts=(
                {"address": "10.8.0.9", "services": []},
                {"address": "10.8.0.9", "services": []},
            ),
        )
    with pytest.raises(SpecError):
        make_topology(
            subnets=({"cidr": "10.8.0.0/24", "routers": []},),
            hosts=({"address": "10.8.0.9", "initial_ttl": 63, "services": []},),
        )
    with pytest.raises(SpecError):
        make_topology(
            subnets=({"cidr": "10.8.0.0/24", "routers": []},),
            hosts=({"address": "192.0.2.44", "services": []},),
        )


def test_topology_file_round_trip(tmp_path):
    spec = two_router_topology()
    path = tmp_path / "topo.json"
    obj = {
        "local": {
            "address": spec.local_address,
            "network": spec.local_network,
            "dns_servers": list(spec.dns_servers),
        },
        "subnets": [{"cidr": s.cidr, "routers": list(s.routers)} for s in spec.subnets],
        "hosts": [
            {
                "address": h.address,
                "initial_ttl": h.initial_ttl,
                "services": [{"protocol": s.protocol.value, "port": s.port, **s.fields} for s in h.services],
            }
            for h in spec.hosts
        ],
    }
    path.write_text(json.dumps(obj))
    loaded = load_topology(path)
    assert loaded.hosts[0].address == "172.16.5.10"
    assert loaded.subnets[1].routers == ("10.8.0.1", "172.16.5.254")


def canonical_records(result):
    """Timestamp-free, sorted view of a session's records."""
    packets = sorted(
        json.dumps({**p.to_json_obj(), "timestamp": None}, sort_keys=True)
        for p in result.packets
    )
    responses = sorted(
        json.dumps({**r.to_json_obj(), "timestamp": None}, sort_keys=True)
        for r in result.responses
    )
    traces = sorted(
        json.dumps(
            {
                "target": t.target,
                "mode": t.mode.value,
                "hops": [(h.index, h.responder) for h in t.hops],
            },
            sort_keys=True,
        )
        for t in result.traceroutes
    )
    return packets, responses, traces


def test_session_determinism_on_same_spec():
    spec = two_router_topology()
    first, _, _ = run_scan(spec)
    second, _, _ = run_scan(spec)
    assert canonical_records(first) == canonical_records(second)
    assert first.termination == second.termination


def test_no_phantom_services():
    spec = two_router_topology()
    result, _, _ = run_scan(spec)
    planted = {("172.16.5.10", Protocol.SSH)}
    observed = {
        (r.host, r.protocol) for r in result.responses if r.status.value == "success"
    }
    assert observed <= planted


def test_seeded_loss_model_is_deterministic():
    obj = {
        "local": {"address": "10.8.0.5", "network": "10.8.0.0/24", "dns_servers": []},
        "costs": {"silence": 0.01, "drop_probability": 0.5},
        "seed": 7,
        "subnets": [{"cidr": "10.8.0.0/24", "routers": []}],
        "hosts": [{"address": "10.8.0.9", "services": []}],
    }
    def outcomes():
        net = SimNetwork(TopologySpec.from_json_obj(obj))
        net.attach()
        return [net.icmp_echo("10.8.0.9", timeout=0.1).kind.value for _ in range(40)]

    first, second = outcomes(), outcomes()
    assert first == second
    assert {"reply", "silent"} == set(first)  # both branches exercised
