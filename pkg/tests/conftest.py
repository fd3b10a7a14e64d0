from __future__ import annotations

import pytest

from netexposure.engine import EngineSettings, Limits, MemorySinks, run_session
from netexposure.model import ScanSession, ScannerIdentity
from netexposure.simnet import SimNetwork, TopologySpec

USER_AGENT = "netexposure-research/0.1 (+https://example.org/scan; abuse@example.org)"
EHLO_DOMAIN = "scan.example.org"


@pytest.fixture
def identity() -> ScannerIdentity:
    return ScannerIdentity(user_agent=USER_AGENT, ehlo_domain=EHLO_DOMAIN)


def make_session(time_budget: float = 900.0, allow_public: bool = False) -> ScanSession:
    return ScanSession(
        session_id="test-session",
        local_address="0.0.0.0",
        local_network="0.0.0.0/0",
        dns_servers=(),
        scanner_identity=ScannerIdentity(USER_AGENT, EHLO_DOMAIN),
        time_budget=time_budget,
        allow_public=allow_public,
    )


def make_topology(
    local: str = "10.8.0.5",
    network: str = "10.8.0.0/24",
    dns: tuple[str, ...] = ("10.8.0.1",),
    gateway: str | None = None,
    subnets: tuple = (),
    hosts: tuple = (),
    multicast: tuple = (),
    metadata: dict | None = None,
    silence: float = 0.02,
) -> TopologySpec:
    obj = {
        "local": {
            "address": local,
            "network": network,
            "dns_servers": list(dns),
            "gateway": gateway,
        },
        "costs": {"link_latency": 0.001, "silence": silence},
        "subnets": [dict(s) for s in subnets],
        "hosts": [dict(h) for h in hosts],
        "multicast": [dict(m) for m in multicast],
    }
    if metadata is not None:
        obj["metadata"] = metadata
    return TopologySpec.from_json_obj(obj)


def run_scan(
    spec: TopologySpec,
    *,
    time_budget: float = 900.0,
    allow_public: bool = False,
    settings: EngineSettings | None = None,
):
    """One full session on a fresh SimNetwork; returns (result, sinks, net)."""
    net = SimNetwork(spec)
    sinks = MemorySinks()
    session = make_session(time_budget=time_budget, allow_public=allow_public)
    settings = settings or EngineSettings(
        limits=Limits(probe_timeout=5.0), multicast_window=0.5
    )
    result = run_session(session, net, sinks, settings)
    return result, sinks, net
