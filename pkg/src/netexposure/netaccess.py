"""Attach/detach boundary between the scanner and a network.

Two implementations exist: the in-process simulator (simnet) and the raw
socket backend (realnet). All blocking calls take explicit timeouts and all
timestamps come from the backend clock, so simulated runs can resolve
timeout paths without real waiting.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .model import EnvironmentInfo, ObservedPacket


class AttachFailure(RuntimeError):
    """The network interface could not be opened."""


class CaptureFailure(RuntimeError):
    """The packet sniffer broke mid-session."""


class ConnectionRefused(ConnectionError):
    pass


class ConnectionTimeout(ConnectionError):
    pass


class ReplyKind(Enum):
    REPLY = "reply"  # echo reply / SYN-ACK from the target
    RST = "rst"  # TCP reset from the target
    TTL_EXCEEDED = "ttl_exceeded"  # ICMP time exceeded from a router
    SILENT = "silent"


@dataclass(frozen=True)
class ProbeReply:
    kind: ReplyKind
    responder: str | None = None
    rtt_ms: float | None = None


class Stream(ABC):
    """A connected byte stream (TCP or TLS)."""

    @abstractmethod
    def send(self, data: bytes) -> None: ...

    @abstractmethod
    def recv(self, max_bytes: int, timeout: float) -> bytes:
        """Up to max_bytes; b'' on orderly close or timeout."""

    @abstractmethod
    def close(self) -> None: ...

    def recv_line(self, timeout: float, limit: int = 4096) -> bytes:
        """Read through the next LF (or until close/limit)."""
        out = bytearray()
        while len(out) < limit:
            chunk = self.recv(1, timeout)
            if not chunk:
                break
            out.extend(chunk)
            if chunk == b"\n":
                break
        return bytes(out)

    def __enter__(self) -> "Stream":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class NetworkAccess(ABC):
    """Everything the engine and the probes need from a network."""

    @abstractmethod
    def attach(self) -> EnvironmentInfo: ...

    @abstractmethod
    def detach(self) -> None: ...

    @abstractmethod
    def now(self) -> float:
        """Monotonic session clock in seconds."""

    @abstractmethod
    def recv_packet(self, timeout: float) -> ObservedPacket | None:
        """Next sniffed inbound packet, or None if none arrived in time."""

    @abstractmethod
    def icmp_echo(
        self, dst: str, *, ttl: int | None = None, timeout: float = 1.0
    ) -> ProbeReply: ...

    @abstractmethod
    def ping_many(
        self, addrs: Sequence[str], *, timeout: float = 1.0, attempts: int = 1
    ) -> list[str]:
        """Addresses that answered an echo with a matching source."""

    @abstractmethod
    def tcp_syn_probe(
        self, dst: str, port: int, *, ttl: int, timeout: float = 1.0
    ) -> ProbeReply: ...

    @abstractmethod
    def udp_exchange(
        self, dst: str, port: int, payload: bytes, *, timeout: float = 2.0
    ) -> bytes | None:
        """Send one datagram, return the first reply payload or None."""

    @abstractmethod
    def multicast_exchange(
        self, group: str, port: int, payload: bytes, *, wait: float = 3.0
    ) -> list[tuple[str, bytes]]:
        """Send to a multicast group; collect unicast (source, payload) replies."""

    @abstractmethod
    def tcp_connect(self, dst: str, port: int, *, timeout: float = 10.0) -> Stream:
        """Raises ConnectionRefused / ConnectionTimeout."""

    @abstractmethod
    def tls_connect(
        self, dst: str, port: int, *, timeout: float = 10.0
    ) -> tuple[Stream, bytes]:
        """TLS with any-certificate trust; returns (stream, leaf cert DER)."""

    @abstractmethod
    def ssh_exchange(
        self, dst: str, port: int, client_identification: bytes, *, timeout: float = 10.0
    ) -> tuple[str, bytes]:
        """Run the key exchange far enough to receive the host key.

        Returns (server identification line, host key blob). Like TLS, the
        crypto channel lives behind the backend; the identification line is
        the only scanner-authored payload.
        """
