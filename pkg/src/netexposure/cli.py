"""Operator entry point.

Subcommands:
  scan      run one session against a simnet topology or a real interface
  analyze   build, filter, and classify the exposure graph from record dirs
  report    emit the deterministic aggregate report for a graph file
  netcheck  reduced standalone check: sweep the local /24 and its neighbors

Real-interface scanning is deliberately awkward: it requires
--i-am-authorized, and public targets additionally need --allow-public.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import uuid
from pathlib import Path
from typing import Any

from . import __version__, analysis, engine, simnet
from .model import (
    EnvironmentInfo,
    MetadataResult,
    ObservedPacket,
    Provenance,
    ScanSession,
    ScannerIdentity,
    ServiceResponse,
    SessionResult,
    Termination,
    TracerouteResult,
    load_jsonl,
)
from .netaccess import AttachFailure
from .probes import reactive

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

ENV_ORACLE = "NETEXPOSURE_ORACLE"
ENV_ASN_DB = "NETEXPOSURE_ASN_DB"
ENV_GEO_DB = "NETEXPOSURE_GEO_DB"

GRAPH_FORMAT = "netexposure-graph/1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits 2; we use 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="netexposure", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    scan = sub.add_parser("scan", help="run one scan session")
    scan.add_argument("--simnet", help="topology JSON to scan instead of a real interface")
    scan.add_argument("--interface", help="network interface for a real scan")
    scan.add_argument(
        "--i-am-authorized",
        action="store_true",
        help="confirm you are authorized to probe the attached network",
    )
    scan.add_argument("--out", required=True, help="output directory for record files")
    scan.add_argument("--config", help="session config JSON")
    scan.add_argument("--provider", default="unlabeled")
    scan.add_argument("--endpoint-id", default=None)
    scan.add_argument("--entry", default=None, help="endpoint entry address tag")
    scan.add_argument("--vantage", default=None, help="egress vantage address tag")
    scan.add_argument("--time-budget", type=float, default=None)
    scan.add_argument("--allow-public", action="store_true")

    analyze = sub.add_parser("analyze", help="build the exposure graph from record dirs")
    analyze.add_argument("--in", dest="inputs", nargs="+", required=True, help="scan run dirs")
    analyze.add_argument("--out", required=True, help="graph JSON output path")
    analyze.add_argument("--oracle", default=None, help="visibility oracle file")
    analyze.add_argument("--asn-db", default=None)
    analyze.add_argument("--geo-db", default=None)
    analyze.add_argument("--home-net", action="append", default=[], help="CIDR to exclude (repeatable)")

    report = sub.add_parser("report", help="aggregate a graph into the report JSON")
    report.add_argument("--in", dest="graph", required=True)
    report.add_argument("--out", default=None, help="report path (stdout by default)")

    netcheck = sub.add_parser(
        "netcheck", help="standalone reactive check of the local /24 and neighbors"
    )
    netcheck.add_argument("--simnet", help="topology JSON to check")
    netcheck.add_argument("--interface", help="network interface for a real check")
    netcheck.add_argument("--i-am-authorized", action="store_true")
    netcheck.add_argument("--config", help="session config JSON")
    netcheck.add_argument("--timeout", type=float, default=2.0, help="per-probe timeout")

    for sp in (scan, netcheck):
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {path}")
    with open(p, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc


def _identity_from_config(config: dict[str, Any]) -> ScannerIdentity:
    user_agent = str(config.get("user_agent", "") or "")
    ehlo_domain = str(config.get("ehlo_domain", "") or "")
    if not user_agent:
        raise UsageError(
            "scanner identity is incomplete: set user_agent in the session config "
            "(it must identify you to scanned hosts)"
        )
    if not ehlo_domain:
        raise UsageError(
            "scanner identity is incomplete: set ehlo_domain in the session config"
        )
    return ScannerIdentity(user_agent=user_agent, ehlo_domain=ehlo_domain)


def _settings_from_config(config: dict[str, Any]) -> engine.EngineSettings:
    limits = engine.concurrency_limits(config)
    return engine.EngineSettings(
        limits=limits,
        home_networks=tuple(config.get("home_networks", ())),
        control_host=str(config.get("control_host", "192.0.2.1")),
        multicast_window=float(config.get("multicast_window", 3.0)),
        ping_timeout=float(config.get("ping_timeout", 1.0)),
        ping_attempts=int(config.get("ping_attempts", 1)),
        trace_max_hops=int(config.get("trace_max_hops", 30)),
        trace_attempts=int(config.get("trace_attempts", 3)),
        trace_hop_timeout=float(config.get("trace_hop_timeout", 1.0)),
        probe_port_overrides=config.get("probe_ports"),
        disabled_protocols=tuple(config.get("disabled_protocols", ())),
        fetch_upnp_descriptions=bool(config.get("fetch_upnp_descriptions", False)),
    )


def _open_network(args, config: dict[str, Any]):
    if args.simnet:
        path = Path(args.simnet)
        if not path.exists():
            raise UsageError(f"simnet topology not found: {args.simnet}")
        return simnet.build(simnet.load_topology(path))
    if args.interface is not None or config.get("interface"):
        if not args.i_am_authorized:
            raise UsageError(
                "real-interface scanning requires --i-am-authorized; only probe "
                "networks you are allowed to probe"
            )
        from .realnet import RealNetworkAccess

        return RealNetworkAccess(
            args.interface or config.get("interface"),
            dns_servers=tuple(config.get("dns_servers", ())),
        )
    raise UsageError("pick a network: --simnet TOPOLOGY or --interface IFACE")


def _cmd_scan(args) -> int:
    config = _load_config(args.config)
    identity = _identity_from_config(config)
    settings = _settings_from_config(config)
    net = _open_network(args, config)
    allow_public = args.allow_public or bool(config.get("allow_public", False))
    time_budget = args.time_budget or float(config.get("time_budget", 900.0))
    session_id = uuid.uuid4().hex[:12]
    session = ScanSession(
        session_id=session_id,
        local_address="0.0.0.0",
        local_network="0.0.0.0/0",
        dns_servers=tuple(config.get("dns_servers", ())),
        scanner_identity=identity,
        time_budget=time_budget,
        allow_public=allow_public,
    )
    endpoint_id = args.endpoint_id or (
        Path(args.simnet).stem if args.simnet else session_id
    )
    extra = {"provider": args.provider, "endpoint_id": endpoint_id}
    if args.entry:
        extra["entry_address"] = args.entry
    if args.vantage:  # explicit tag beats the external-info lookup
        extra["vantage_address"] = args.vantage
    sinks = engine.JsonlSinks(args.out, summary_extra=extra)
    try:
        result = engine.run_session(session, net, sinks, settings)
    finally:
        sinks.close()
    success = sum(1 for r in result.responses if r.status.value == "success")
    print(
        f"scan {session_id}: {result.termination.value}, "
        f"{len(result.packets)} packets, {success} exposed services, "
        f"records in {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def _load_run_dir(path: Path) -> analysis.SessionRecord:
    summary_path = path / "session.json"
    if not summary_path.exists():
        raise UsageError(f"{path} is not a scan run directory (no session.json)")
    with open(summary_path, "r", encoding="utf-8") as fh:
        summary = json.load(fh)
    identity = ScannerIdentity(
        user_agent=summary["scanner_identity"]["user_agent"],
        ehlo_domain=summary["scanner_identity"]["ehlo_domain"],
    )
    session = ScanSession(
        session_id=summary["session_id"],
        local_address=summary["local_address"],
        local_network=summary["local_network"],
        dns_servers=tuple(summary.get("dns_servers", ())),
        scanner_identity=identity,
        time_budget=summary.get("time_budget", 900.0),
        allow_public=summary.get("allow_public", False),
    )
    env = EnvironmentInfo(
        local_address=summary["local_address"],
        local_network=summary["local_network"],
        dns_servers=tuple(summary.get("dns_servers", ())),
        gateway=summary.get("gateway"),
    )
    packets = tuple(load_jsonl(path / "packets.jsonl", ObservedPacket))
    responses = tuple(load_jsonl(path / "responses.jsonl", ServiceResponse))
    traceroutes = tuple(load_jsonl(path / "traceroutes.jsonl", TracerouteResult))
    metadata = tuple(load_jsonl(path / "metadata.jsonl", MetadataResult))
    result = SessionResult(
        session=session,
        env=env,
        packets=packets,
        responses=responses,
        traceroutes=traceroutes,
        metadata_findings=metadata,
        termination=Termination(summary.get("termination", "all_done")),
    )
    return analysis.SessionRecord(
        provider=summary.get("provider", "unlabeled"),
        endpoint_id=summary.get("endpoint_id", summary["session_id"]),
        result=result,
        entry_address=summary.get("entry_address"),
        vantage_address=summary.get("vantage_address"),
    )


def _cmd_analyze(args) -> int:
    records = []
    for raw in args.inputs:
        path = Path(raw)
        if not path.exists():
            raise UsageError(f"input directory not found: {raw}")
        records.append(_load_run_dir(path))

    oracle_path = args.oracle or os.environ.get(ENV_ORACLE)
    if oracle_path and not Path(oracle_path).exists():
        raise UsageError(f"oracle file not found: {oracle_path}")
    oracle = (
        analysis.VisibilityOracle.load(oracle_path)
        if oracle_path
        else analysis.VisibilityOracle.from_pairs(())
    )

    graph = analysis.build_graph(records, home_networks=tuple(args.home_net))
    graph = analysis.filter_internet_visible(graph, oracle)
    graph = analysis.classify_graph(graph)

    asn_path = args.asn_db or os.environ.get(ENV_ASN_DB)
    geo_path = args.geo_db or os.environ.get(ENV_GEO_DB)
    if asn_path and geo_path:
        for p in (asn_path, geo_path):
            if not Path(p).exists():
                raise UsageError(f"database file not found: {p}")
        graph = analysis.enrich_graph(
            graph, analysis.PrefixTable.load(asn_path), analysis.PrefixTable.load(geo_path)
        )

    payload = {
        "format": GRAPH_FORMAT,
        "graph": graph.to_json_obj(),
        "endpoints": {
            record.endpoint_id: {
                "provider": record.provider,
                "entry": record.entry_address,
                "vantage": record.vantage_address,
            }
            for record in records
        },
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(
        f"analyze: {len(graph.edges)} edges, {len(graph.identifiers)} identifiers, "
        f"graph in {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def _cmd_report(args) -> int:
    path = Path(args.graph)
    if not path.exists():
        raise UsageError(f"graph file not found: {args.graph}")
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != GRAPH_FORMAT:
        raise UsageError(f"{args.graph} is not a {GRAPH_FORMAT} file")
    from .model import ExposureGraph

    graph = ExposureGraph.from_json_obj(payload["graph"])
    shared = analysis.shared_infra_report(graph, payload.get("endpoints", {}))
    report = analysis.build_report(graph, shared)
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_netcheck(args) -> int:
    """Sweep the local /24 and its neighbors, then summarize exposures."""
    config = _load_config(args.config)
    if "user_agent" not in config:
        config["user_agent"] = f"netexposure-netcheck/{__version__}"
    if "ehlo_domain" not in config:
        config["ehlo_domain"] = "netcheck.invalid"
    identity = _identity_from_config(config)
    net = _open_network(args, config)
    env = net.attach()
    try:
        queue = engine.WorkQueue(clock=net.now)
        engine.expand_and_enqueue(queue, env.local_address, Provenance.MANUAL)
        specs = reactive.default_probe_specs(
            config.get("probe_ports"), tuple(config.get("disabled_protocols", ()))
        )
        print(f"netcheck from {env.local_address} ({env.local_network})")
        total = 0
        while True:
            target = queue.take(0.0)
            if target is None:
                break
            responders = reactive.ping_sweep(target, net, timeout=args.timeout)
            print(f"  {target.network}: {len(responders)} responsive hosts")
            if not responders:
                queue.task_done(target)
                continue
            found = reactive.scan_services(
                responders, specs, net, identity, timeout=args.timeout
            )
            for response in sorted(
                (r for r in found if r.status.value == "success"),
                key=lambda r: (r.host, r.protocol.value),
            ):
                detail = _describe_payload(response)
                print(f"    {response.host:<15} {response.protocol.value:<8} {detail}")
                total += 1
            queue.task_done(target)
        print(f"netcheck: {total} exposed services on {len(queue.swept)} networks")
    finally:
        net.detach()
    return EXIT_OK


def _describe_payload(response: ServiceResponse) -> str:
    payload = response.payload
    for key in ("banner", "status_line", "sysName", "usn", "version_bind"):
        if payload.get(key):
            return str(payload[key])[:60]
    if payload.get("names"):
        return ",".join(payload["names"])[:60]
    if payload.get("engine_id"):
        return f"engine-id {payload['engine_id'][:24]}"
    if payload.get("server_guid"):
        return f"guid {payload['server_guid'][:24]}"
    return ""


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    handlers = {
        "scan": _cmd_scan,
        "analyze": _cmd_analyze,
        "report": _cmd_report,
        "netcheck": _cmd_netcheck,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AttachFailure as exc:
        print(f"attach failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # runtime failures map to exit 2
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
