"""The shipped scenario library must load, validate, and behave as labeled."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from netexposure.model import Category
from netexposure.analysis import SessionRecord, build_graph, classify_graph
from netexposure.simnet import load_topology

from conftest import run_scan

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "netexposure" / "scenarios"
ALL = sorted(SCENARIOS.glob("*.json"))


def test_library_has_the_four_scenarios():
    names = {p.stem for p in ALL}
    assert names == {"enduser_lan", "provider_rack", "upstream_core", "cloud_metadata"}


@pytest.mark.parametrize("path", ALL, ids=lambda p: p.stem)
def test_scenarios_load_and_scan(path):
    spec = load_topology(path)
    result, sinks, _ = run_scan(spec)
    assert result.termination.value == "all_done"


def scan_and_classify(name):
    result, _, _ = run_scan(load_topology(SCENARIOS / f"{name}.json"))
    graph = build_graph([SessionRecord("p", "e1", result)])
    return classify_graph(graph)


def test_enduser_lan_is_mostly_end_user():
    graph = scan_and_classify("enduser_lan")
    categories = {e.category for e in graph.edges}
    end_user = [e for e in graph.edges if e.category is Category.END_USER]
    assert len(end_user) >= len(graph.edges) - 1  # the bare DNS router is provider
    assert Category.UPSTREAM not in categories


def test_provider_rack_is_provider_category():
    graph = scan_and_classify("provider_rack")
    assert graph.edges
    assert {e.category for e in graph.edges} == {Category.PROVIDER}


def test_upstream_core_reaches_deep_hosts():
    graph = scan_and_classify("upstream_core")
    by_host = {e.host: e for e in graph.edges}
    assert by_host["172.18.25.80"].hop_count == 5
    assert by_host["172.18.25.80"].category is Category.UPSTREAM
    # the CGNAT-space exposure was discovered through the router on the path
    assert "100.64.7.3" in by_host
    assert by_host["100.64.7.3"].dst_class.value == "cgnat"


def test_cloud_metadata_scenario_leaks_credentials():
    result, _, _ = run_scan(load_topology(SCENARIOS / "cloud_metadata.json"))
    cred = [m for m in result.metadata_findings if m.credentials_detected]
    assert cred and cred[0].endpoint_path == "/latest/meta-data/iam/security-credentials/"
    # header-gated provider variants answered because the probe sent the headers
    statuses = {m.endpoint_path: m.status for m in result.metadata_findings}
    assert statuses["/computeMetadata/v1/"] == 404
