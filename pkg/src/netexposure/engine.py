"""Session orchestration: the publish-subscribe work queue feeding reactive
probes, adjacent-subnet expansion with its safety rules, and the
stop-condition logic.

One run_session call owns one attached network. The sniffer, the active
probes, and a bounded pool of sweep workers run concurrently; the WorkQueue
is the single synchronization point.
"""

from __future__ import annotations

import ipaddress
import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .model import (
    MetadataResult,
    NetworkTarget,
    ObservedPacket,
    Provenance,
    ScanSession,
    ServiceResponse,
    SessionResult,
    TargetState,
    Termination,
    TracerouteResult,
    classify_address,
    is_multicast_or_broadcast,
    slash24,
    AddressClass,
)
from .netaccess import AttachFailure, NetworkAccess
from .probes import active, reactive


class ConfigError(ValueError):
    pass


class EnqueueAfterClose(RuntimeError):
    """The queue no longer accepts work (active probes have finished)."""


@dataclass(frozen=True)
class Limits:
    max_sweeps: int = 4
    max_probes: int = 64
    probe_timeout: float = 10.0


def concurrency_limits(config: Mapping[str, Any] | None = None) -> Limits:
    """Effective worker bounds from a config mapping; defaults otherwise."""
    config = config or {}
    limits = Limits(
        max_sweeps=int(config.get("max_sweeps", Limits.max_sweeps)),
        max_probes=int(config.get("max_probes", Limits.max_probes)),
        probe_timeout=float(config.get("probe_timeout", Limits.probe_timeout)),
    )
    if limits.max_sweeps < 1:
        raise ConfigError(f"max_sweeps must be >= 1, got {limits.max_sweeps}")
    if limits.max_probes < 1:
        raise ConfigError(f"max_probes must be >= 1, got {limits.max_probes}")
    if limits.probe_timeout <= 0:
        raise ConfigError(f"probe_timeout must be positive, got {limits.probe_timeout}")
    return limits


class WorkQueue:
    """FIFO of /24 targets with a session-wide seen set.

    Thread-safe. A network that entered the seen set is never re-enqueued;
    once closed, publish attempts raise EnqueueAfterClose.
    """

    def __init__(
        self,
        *,
        allow_public: bool = False,
        home_networks: tuple[str, ...] = (),
        clock=time.monotonic,
    ):
        self.allow_public = allow_public
        self.home_networks = tuple(ipaddress.IPv4Network(n) for n in home_networks)
        self.clock = clock
        self._pending: deque[NetworkTarget] = deque()
        self._seen: set[str] = set()
        self._closed = False
        self._outstanding = 0  # queued plus in-flight
        self._swept: list[NetworkTarget] = []
        self._cond = threading.Condition()

    @property
    def closed(self) -> bool:
        with self._cond:
            return self._closed

    @property
    def seen(self) -> set[str]:
        with self._cond:
            return set(self._seen)

    @property
    def swept(self) -> list[NetworkTarget]:
        with self._cond:
            return list(self._swept)

    def publish(self, target: NetworkTarget) -> bool:
        """Enqueue unless already seen; False on dedup hit."""
        with self._cond:
            if self._closed:
                raise EnqueueAfterClose(f"queue closed, rejected {target.network}")
            if target.network in self._seen:
                return False
            self._seen.add(target.network)
            self._pending.append(target)
            self._outstanding += 1
            self._cond.notify()
            return True

    def take(self, timeout: float) -> NetworkTarget | None:
        with self._cond:
            if not self._pending:
                self._cond.wait(timeout)
            if not self._pending:
                return None
            target = self._pending.popleft().with_state(TargetState.IN_FLIGHT)
            self._swept.append(target)
            return target

    def task_done(self, target: NetworkTarget) -> None:
        with self._cond:
            for i in range(len(self._swept) - 1, -1, -1):
                entry = self._swept[i]
                if entry.network == target.network and entry.state is TargetState.IN_FLIGHT:
                    self._swept[i] = entry.with_state(TargetState.DONE)
                    break
            self._outstanding -= 1
            self._cond.notify_all()

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def idle(self) -> bool:
        with self._cond:
            return self._outstanding == 0


def expand_and_enqueue(
    queue: WorkQueue, addr: str, provenance: Provenance
) -> list[NetworkTarget]:
    """Enqueue the /24 of addr plus both numeric neighbors.

    Candidates are dropped when public (unless the session allows public
    targets), when they leave the reserved range containing the seed, when
    they overlap a home network, or when already seen.
    """
    if queue.closed:
        raise EnqueueAfterClose(f"queue closed, cannot expand {addr}")
    seed = slash24(addr)
    seed_class = classify_address(seed.network_address)
    base = int(seed.network_address)
    candidates = [base]
    if base - 256 >= 0:
        candidates.insert(0, base - 256)
    if base + 256 <= int(ipaddress.IPv4Address("255.255.255.0")):
        candidates.append(base + 256)

    enqueued: list[NetworkTarget] = []
    for candidate in candidates:
        network = ipaddress.IPv4Network((candidate, 24))
        cls = classify_address(network.network_address)
        if not queue.allow_public:
            if cls is AddressClass.PUBLIC_ROUTABLE:
                continue
            if network != seed and cls is not seed_class:
                continue  # expansion never leaves the seed's reserved range
        if any(network.overlaps(home) for home in queue.home_networks):
            continue
        prov = provenance if network == seed else Provenance.EXPANSION
        target = NetworkTarget(str(network), prov, discovered_at=queue.clock())
        try:
            if queue.publish(target):
                enqueued.append(target)
        except EnqueueAfterClose:
            raise
    return enqueued


# ---------------------------------------------------------------------------
# record sinks


class RecordSinks:
    """Incremental writers for session records. Base class drops everything."""

    def write_packet(self, packet: ObservedPacket) -> None: ...

    def write_response(self, response: ServiceResponse) -> None: ...

    def write_traceroute(self, result: TracerouteResult) -> None: ...

    def write_metadata(self, result: MetadataResult) -> None: ...

    def write_summary(self, summary: dict[str, Any]) -> None: ...

    def close(self) -> None: ...


class MemorySinks(RecordSinks):
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.packets: list[ObservedPacket] = []
        self.responses: list[ServiceResponse] = []
        self.traceroutes: list[TracerouteResult] = []
        self.metadata: list[MetadataResult] = []
        self.summary: dict[str, Any] | None = None

    def write_packet(self, packet: ObservedPacket) -> None:
        with self._lock:
            self.packets.append(packet)

    def write_response(self, response: ServiceResponse) -> None:
        with self._lock:
            self.responses.append(response)

    def write_traceroute(self, result: TracerouteResult) -> None:
        with self._lock:
            self.traceroutes.append(result)

    def write_metadata(self, result: MetadataResult) -> None:
        with self._lock:
            self.metadata.append(result)

    def write_summary(self, summary: dict[str, Any]) -> None:
        with self._lock:
            self.summary = summary


class JsonlSinks(RecordSinks):
    """One JSON Lines file per record kind under a run directory.

    summary_extra is merged into the session summary, which is how the CLI
    attaches provider/endpoint tags for the analyzer.
    """

    def __init__(self, directory: str | Path, summary_extra: dict[str, Any] | None = None):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.summary_extra = dict(summary_extra or {})
        self._lock = threading.Lock()
        self._files = {
            "packets": open(self.directory / "packets.jsonl", "w", encoding="utf-8"),
            "responses": open(self.directory / "responses.jsonl", "w", encoding="utf-8"),
            "traceroutes": open(self.directory / "traceroutes.jsonl", "w", encoding="utf-8"),
            "metadata": open(self.directory / "metadata.jsonl", "w", encoding="utf-8"),
        }

    def _write(self, kind: str, record) -> None:
        line = json.dumps(record.to_json_obj(), sort_keys=True)
        with self._lock:
            fh = self._files[kind]
            fh.write(line + "\n")
            fh.flush()

    def write_packet(self, packet: ObservedPacket) -> None:
        self._write("packets", packet)

    def write_response(self, response: ServiceResponse) -> None:
        self._write("responses", response)

    def write_traceroute(self, result: TracerouteResult) -> None:
        self._write("traceroutes", result)

    def write_metadata(self, result: MetadataResult) -> None:
        self._write("metadata", result)

    def write_summary(self, summary: dict[str, Any]) -> None:
        merged = {**summary, **self.summary_extra}
        with self._lock:
            with open(self.directory / "session.json", "w", encoding="utf-8") as fh:
                json.dump(merged, fh, sort_keys=True, indent=2)
                fh.write("\n")

    def close(self) -> None:
        with self._lock:
            for fh in self._files.values():
                fh.close()


# ---------------------------------------------------------------------------
# session runner


@dataclass(frozen=True)
class EngineSettings:
    limits: Limits = field(default_factory=Limits)
    home_networks: tuple[str, ...] = ()
    control_host: str = "192.0.2.1"
    multicast_window: float = 3.0
    ping_timeout: float = 1.0
    ping_attempts: int = 1
    trace_max_hops: int = active.DEFAULT_MAX_HOPS
    trace_attempts: int = active.DEFAULT_ATTEMPTS
    trace_hop_timeout: float = active.DEFAULT_HOP_TIMEOUT
    probe_port_overrides: Mapping[str, int] | None = None
    disabled_protocols: tuple[str, ...] = ()
    fetch_upnp_descriptions: bool = False
    # third-party lookups (egress address, NAT type); stub knows nothing
    external_info: active.ExternalInfoProvider = field(
        default_factory=active.StubExternalInfo
    )


def run_session(
    session: ScanSession,
    net: NetworkAccess,
    sinks: RecordSinks,
    settings: EngineSettings | None = None,
) -> SessionResult:
    """Run one full scan session against an attached network.

    Active probes launch immediately; addresses surfacing from the sniffer
    and the probes expand into the queue; sweep workers consume it. Once the
    active probes complete the queue closes to new work, and the session
    ends when in-flight work drains or the time budget elapses. Records are
    written to sinks incrementally, so partial results survive an abort.
    """
    settings = settings or EngineSettings()
    limits = settings.limits
    try:
        env = net.attach()
    except Exception as exc:
        raise AttachFailure(str(exc)) from exc

    effective = replace(
        session,
        local_address=env.local_address,
        local_network=env.local_network,
        dns_servers=env.dns_servers or session.dns_servers,
    )
    start = net.now()
    deadline = start + effective.time_budget
    queue = WorkQueue(
        allow_public=effective.allow_public,
        home_networks=settings.home_networks,
        clock=net.now,
    )
    stop = threading.Event()
    actives_done = threading.Event()
    lock = threading.Lock()
    packets: list[ObservedPacket] = []
    responses: list[ServiceResponse] = []
    traceroutes: list[TracerouteResult] = []
    metadata: list[MetadataResult] = []
    sweep_log: list[dict[str, Any]] = []
    home_nets = tuple(ipaddress.IPv4Network(n) for n in settings.home_networks)

    def in_home(addr: str) -> bool:
        ip = ipaddress.IPv4Address(addr)
        return any(ip in home for home in home_nets)

    def feed(addr: str, provenance: Provenance) -> None:
        """Expansion guard for discovered addresses."""
        if addr == effective.local_address:
            return
        if is_multicast_or_broadcast(addr):
            return
        if in_home(addr):
            return
        if (
            classify_address(addr) is AddressClass.PUBLIC_ROUTABLE
            and not effective.allow_public
        ):
            return
        try:
            expand_and_enqueue(queue, addr, provenance)
        except EnqueueAfterClose:
            pass  # late sniffer hits after active probes finished

    def sniffer() -> None:
        for packet in reactive.sniff_loop(net, stop):
            with lock:
                packets.append(packet)
            sinks.write_packet(packet)
            feed(packet.src, Provenance.SNIFFER)

    def run_traceroute(target: str, mode) -> None:
        result = active.traceroute(
            target,
            mode,
            net,
            max_hops=settings.trace_max_hops,
            attempts=settings.trace_attempts,
            hop_timeout=settings.trace_hop_timeout,
            stop=stop,
        )
        with lock:
            traceroutes.append(result)
        sinks.write_traceroute(result)
        for responder in dict.fromkeys(result.responders()):
            feed(responder, Provenance.TRACEROUTE)

    def run_link_local() -> None:
        found = active.discover_link_local(
            net,
            effective.scanner_identity,
            lambda addr: feed(addr, Provenance.SNIFFER),
            window=settings.multicast_window,
        )
        with lock:
            responses.extend(found)
        for item in found:
            sinks.write_response(item)

    def run_metadata() -> None:
        found = active.probe_cloud_metadata(
            net, effective.scanner_identity, timeout=limits.probe_timeout, stop=stop
        )
        with lock:
            metadata.extend(found)
        for item in found:
            sinks.write_metadata(item)

    def run_actives() -> None:
        jobs: list[threading.Thread] = []
        for target, mode in active.build_traceroute_targets(settings.control_host):
            jobs.append(threading.Thread(target=run_traceroute, args=(target, mode)))
        jobs.append(threading.Thread(target=run_link_local))
        jobs.append(threading.Thread(target=run_metadata))
        for job in jobs:
            job.start()
        for job in jobs:
            job.join()
        actives_done.set()
        queue.close()

    specs = reactive.default_probe_specs(
        settings.probe_port_overrides, settings.disabled_protocols
    )
    probe_semaphore = threading.Semaphore(limits.max_probes)

    def record_response(response: ServiceResponse) -> None:
        with lock:
            responses.append(response)
        sinks.write_response(response)

    def sweep_worker() -> None:
        while not stop.is_set():
            target = queue.take(0.02)
            if target is None:
                if queue.closed and queue.idle():
                    return
                continue
            started = net.now()
            responders: list[str] = []
            try:
                if net.now() < deadline and not stop.is_set():
                    responders = reactive.ping_sweep(
                        target,
                        net,
                        timeout=settings.ping_timeout,
                        attempts=settings.ping_attempts,
                    )
                    if responders and not stop.is_set():
                        reactive.scan_services(
                            responders,
                            specs,
                            net,
                            effective.scanner_identity,
                            timeout=limits.probe_timeout,
                            max_workers=limits.max_probes,
                            semaphore=probe_semaphore,
                            stop=stop,
                            fetch_upnp_descriptions=settings.fetch_upnp_descriptions,
                            on_response=record_response,
                        )
            finally:
                with lock:
                    sweep_log.append(
                        {
                            "network": target.network,
                            "provenance": target.provenance.value,
                            "started": started,
                            "finished": net.now(),
                            "responders": len(responders),
                        }
                    )
                queue.task_done(target)

    # Seed the queue from the environment (configuration provenance).
    expand_and_enqueue(queue, effective.local_address, Provenance.CONFIGURATION)
    for server in effective.dns_servers:
        feed(server, Provenance.CONFIGURATION)
    if env.gateway:
        feed(env.gateway, Provenance.CONFIGURATION)

    sniffer_thread = threading.Thread(target=sniffer, name="sniffer")
    actives_thread = threading.Thread(target=run_actives, name="active-probes")
    workers = [
        threading.Thread(target=sweep_worker, name=f"sweep-{i}")
        for i in range(limits.max_sweeps)
    ]
    sniffer_thread.start()
    actives_thread.start()
    for worker in workers:
        worker.start()

    termination = Termination.ALL_DONE
    try:
        while True:
            if net.now() >= deadline:
                termination = Termination.TIME_BUDGET
                break
            if actives_done.is_set() and queue.closed and queue.idle():
                termination = Termination.ALL_DONE
                break
            time.sleep(0.002)
    finally:
        stop.set()
        queue.close()
        actives_thread.join()
        for worker in workers:
            worker.join()
        sniffer_thread.join()
        net.detach()

    result = SessionResult(
        session=effective,
        env=env,
        packets=tuple(packets),
        responses=tuple(responses),
        traceroutes=tuple(traceroutes),
        metadata_findings=tuple(metadata),
        termination=termination,
    )
    summary = {
        "session_id": effective.session_id,
        "local_address": effective.local_address,
        "local_network": effective.local_network,
        "dns_servers": list(effective.dns_servers),
        "gateway": env.gateway,
        "vantage_address": settings.external_info.vantage_address(),
        "nat_type": settings.external_info.nat_type(),
        "time_budget": effective.time_budget,
        "allow_public": effective.allow_public,
        "scanner_identity": {
            "user_agent": effective.scanner_identity.user_agent,
            "ehlo_domain": effective.scanner_identity.ehlo_domain,
        },
        "termination": termination.value,
        "started_at": start,
        "finished_at": net.now(),
        "seen_networks": sorted(queue.seen),
        "sweeps": sorted(sweep_log, key=lambda s: (s["started"], s["network"])),
        "counts": {
            "packets": len(packets),
            "responses": len(responses),
            "success_responses": sum(
                1 for r in responses if r.status.value == "success"
            ),
            "traceroutes": len(traceroutes),
            "metadata": len(metadata),
        },
    }
    sinks.write_summary(summary)
    return result
