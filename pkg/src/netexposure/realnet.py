"""Raw-socket NetworkAccess backend for scanning a real attached network.

ICMP probing and the packet sniffer need CAP_NET_RAW (run as root); the
TCP/UDP/TLS exchanges work unprivileged. The SSH exchange performs a real
group14 key exchange just far enough to receive the server host key, then
disconnects before any authentication.
"""

from __future__ import annotations

import errno
import os
import select
import socket
import ssl
import struct
import threading
import time

from .model import EnvironmentInfo, ObservedPacket, Transport, slash24
from .netaccess import (
    AttachFailure,
    ConnectionRefused,
    ConnectionTimeout,
    NetworkAccess,
    ProbeReply,
    ReplyKind,
    Stream,
)

ICMP_ECHO_REQUEST = 8
ICMP_ECHO_REPLY = 0
ICMP_TIME_EXCEEDED = 11
ETH_P_IP = 0x0800


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f">{len(data) // 2}H", data))
    total = (total >> 16) + (total & 0xFFFF)
    total += total >> 16
    return ~total & 0xFFFF


def _build_echo(ident: int, seq: int) -> bytes:
    header = struct.pack(">BBHHH", ICMP_ECHO_REQUEST, 0, 0, ident, seq)
    payload = b"netexposure"
    checksum = _checksum(header + payload)
    return struct.pack(">BBHHH", ICMP_ECHO_REQUEST, 0, checksum, ident, seq) + payload


def _parse_ipv4(packet: bytes) -> tuple[dict, bytes] | None:
    if len(packet) < 20:
        return None
    version_ihl = packet[0]
    if version_ihl >> 4 != 4:
        return None
    ihl = (version_ihl & 0x0F) * 4
    if len(packet) < ihl:
        return None
    proto = packet[9]
    ttl = packet[8]
    src = socket.inet_ntoa(packet[12:16])
    dst = socket.inet_ntoa(packet[16:20])
    return {"proto": proto, "ttl": ttl, "src": src, "dst": dst}, packet[ihl:]


def _detect_local_address() -> str:
    # Routing-table trick; no packet leaves the host.
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as probe:
        probe.connect(("192.0.2.1", 9))
        return probe.getsockname()[0]


class RealStream(Stream):
    def __init__(self, sock: socket.socket):
        self._sock = sock

    def send(self, data: bytes) -> None:
        self._sock.sendall(data)

    def recv(self, max_bytes: int, timeout: float) -> bytes:
        self._sock.settimeout(timeout)
        try:
            return self._sock.recv(max_bytes)
        except socket.timeout:
            return b""
        except OSError:
            return b""

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class RealNetworkAccess(NetworkAccess):
    """Scan through the host network stack.

    interface selects the capture device (required for sniffing); without
    CAP_NET_RAW, attach fails with instructions rather than degrading
    silently.
    """

    def __init__(
        self,
        interface: str | None = None,
        *,
        local_address: str | None = None,
        dns_servers: tuple[str, ...] = (),
        require_sniffer: bool = True,
    ):
        self.interface = interface
        self._local_address = local_address
        self._dns_servers = dns_servers
        self._require_sniffer = require_sniffer
        self._capture: socket.socket | None = None
        self._icmp_lock = threading.Lock()
        self._start = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._start

    def attach(self) -> EnvironmentInfo:
        self._start = time.monotonic()
        local = self._local_address or _detect_local_address()
        if self._require_sniffer:
            try:
                capture = socket.socket(
                    socket.AF_PACKET, socket.SOCK_RAW, socket.htons(ETH_P_IP)
                )
                if self.interface:
                    capture.bind((self.interface, 0))
                capture.setblocking(False)
                self._capture = capture
            except (AttributeError, PermissionError, OSError) as exc:
                raise AttachFailure(
                    f"cannot open packet capture ({exc}); run with CAP_NET_RAW "
                    "or pass require_sniffer=False"
                ) from exc
        return EnvironmentInfo(
            local_address=local,
            local_network=str(slash24(local)),
            dns_servers=self._dns_servers,
        )

    def detach(self) -> None:
        if self._capture is not None:
            self._capture.close()
            self._capture = None

    def recv_packet(self, timeout: float) -> ObservedPacket | None:
        if self._capture is None:
            time.sleep(min(timeout, 0.05))
            return None
        ready, _, _ = select.select([self._capture], [], [], timeout)
        if not ready:
            return None
        try:
            frame = self._capture.recv(65535)
        except OSError:
            return None
        parsed = _parse_ipv4(frame[14:])  # skip ethernet header
        if parsed is None:
            return None
        header, rest = parsed
        transport = {1: Transport.ICMP, 6: Transport.TCP, 17: Transport.UDP}.get(
            header["proto"], Transport.OTHER
        )
        src_port = dst_port = None
        tcp_flags = None
        if transport in (Transport.TCP, Transport.UDP) and len(rest) >= 4:
            src_port, dst_port = struct.unpack(">HH", rest[:4])
            if transport is Transport.TCP and len(rest) >= 14:
                tcp_flags = rest[13]
        if transport is Transport.TCP and tcp_flags is None:
            tcp_flags = 0
        return ObservedPacket(
            src=header["src"],
            dst=header["dst"],
            transport=transport,
            ttl=max(1, header["ttl"]),
            src_port=src_port,
            dst_port=dst_port,
            tcp_flags=tcp_flags,
            timestamp=self.now(),
        )

    # -- ICMP ---------------------------------------------------------------

    def _icmp_socket(self) -> socket.socket:
        try:
            return socket.socket(socket.AF_INET, socket.SOCK_RAW, socket.IPPROTO_ICMP)
        except PermissionError as exc:
            raise AttachFailure(f"raw ICMP needs CAP_NET_RAW: {exc}") from exc

    def icmp_echo(self, dst: str, *, ttl: int | None = None, timeout: float = 1.0) -> ProbeReply:
        ident = os.getpid() & 0xFFFF
        with self._icmp_lock, self._icmp_socket() as sock:
            if ttl is not None:
                sock.setsockopt(socket.IPPROTO_IP, socket.IP_TTL, ttl)
            started = time.monotonic()
            sock.sendto(_build_echo(ident, 1), (dst, 0))
            deadline = started + timeout
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return ProbeReply(ReplyKind.SILENT)
                ready, _, _ = select.select([sock], [], [], remaining)
                if not ready:
                    return ProbeReply(ReplyKind.SILENT)
                data, addr = sock.recvfrom(2048)
                parsed = _parse_ipv4(data)
                if parsed is None:
                    continue
                _, icmp = parsed
                if len(icmp) < 8:
                    continue
                icmp_type = icmp[0]
                rtt = (time.monotonic() - started) * 1000
                if icmp_type == ICMP_ECHO_REPLY:
                    reply_ident = struct.unpack(">H", icmp[4:6])[0]
                    if reply_ident == ident:
                        return ProbeReply(ReplyKind.REPLY, addr[0], rtt)
                elif icmp_type == ICMP_TIME_EXCEEDED:
                    inner = _parse_ipv4(icmp[8:])
                    if inner is not None and inner[0]["dst"] == dst:
                        return ProbeReply(ReplyKind.TTL_EXCEEDED, addr[0], rtt)

    def ping_many(
        self, addrs, *, timeout: float = 1.0, attempts: int = 1
    ) -> list[str]:
        targets = set(addrs)
        responders: set[str] = set()
        with self._icmp_lock, self._icmp_socket() as sock:
            ident = os.getpid() & 0xFFFF
            for round_no in range(max(1, attempts)):
                for seq, addr in enumerate(addrs):
                    if addr in responders:
                        continue
                    try:
                        sock.sendto(_build_echo(ident, seq & 0xFFFF), (addr, 0))
                    except OSError:
                        continue
                deadline = time.monotonic() + timeout
                while time.monotonic() < deadline:
                    ready, _, _ = select.select([sock], [], [], 0.05)
                    if not ready:
                        continue
                    try:
                        data, addr = sock.recvfrom(2048)
                    except OSError:
                        continue
                    parsed = _parse_ipv4(data)
                    if parsed is None:
                        continue
                    _, icmp = parsed
                    if len(icmp) >= 8 and icmp[0] == ICMP_ECHO_REPLY and addr[0] in targets:
                        responders.add(addr[0])
        return [a for a in addrs if a in responders]

    def tcp_syn_probe(self, dst: str, port: int, *, ttl: int, timeout: float = 1.0) -> ProbeReply:
        """connect() with a clamped TTL while listening for time-exceeded."""
        icmp = None
        try:
            icmp = self._icmp_socket()
            icmp.setblocking(False)
        except AttachFailure:
            icmp = None
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_TTL, ttl)
        sock.setblocking(False)
        started = time.monotonic()
        try:
            code = sock.connect_ex((dst, port))
            deadline = started + timeout
            while time.monotonic() < deadline:
                if icmp is not None:
                    ready, _, _ = select.select([icmp], [], [], 0)
                    if ready:
                        data, addr = icmp.recvfrom(2048)
                        parsed = _parse_ipv4(data)
                        if parsed is not None:
                            _, body = parsed
                            if len(body) >= 8 and body[0] == ICMP_TIME_EXCEEDED:
                                inner = _parse_ipv4(body[8:])
                                if inner is not None and inner[0]["dst"] == dst:
                                    rtt = (time.monotonic() - started) * 1000
                                    return ProbeReply(ReplyKind.TTL_EXCEEDED, addr[0], rtt)
                _, writable, _ = select.select([], [sock], [], 0.02)
                if writable:
                    error = sock.getsockopt(socket.SOL_SOCKET, socket.SO_ERROR)
                    rtt = (time.monotonic() - started) * 1000
                    if error == 0:
                        return ProbeReply(ReplyKind.REPLY, dst, rtt)
                    if error == errno.ECONNREFUSED:  # RST came back
                        return ProbeReply(ReplyKind.RST, dst, rtt)
                    return ProbeReply(ReplyKind.SILENT)
            return ProbeReply(ReplyKind.SILENT)
        finally:
            sock.close()
            if icmp is not None:
                icmp.close()

    # -- UDP / multicast ------------------------------------------------------

    def udp_exchange(self, dst: str, port: int, payload: bytes, *, timeout: float = 2.0) -> bytes | None:
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
            sock.settimeout(timeout)
            sock.sendto(payload, (dst, port))
            deadline = time.monotonic() + timeout
            while time.monotonic() < deadline:
                try:
                    data, addr = sock.recvfrom(65535)
                except socket.timeout:
                    return None
                except OSError:
                    return None
                if addr[0] == dst:
                    return data
            return None

    def multicast_exchange(
        self, group: str, port: int, payload: bytes, *, wait: float = 3.0
    ) -> list[tuple[str, bytes]]:
        replies: list[tuple[str, bytes]] = []
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
            sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, 1)
            sock.sendto(payload, (group, port))
            deadline = time.monotonic() + wait
            sock.settimeout(0.1)
            while time.monotonic() < deadline:
                try:
                    data, addr = sock.recvfrom(65535)
                except socket.timeout:
                    continue
                except OSError:
                    break
                replies.append((addr[0], data))
        return replies

    # -- TCP / TLS -------------------------------------------------------------

    def tcp_connect(self, dst: str, port: int, *, timeout: float = 10.0) -> Stream:
        try:
            sock = socket.create_connection((dst, port), timeout=timeout)
        except ConnectionRefusedError as exc:
            raise ConnectionRefused(str(exc)) from exc
        except (socket.timeout, TimeoutError) as exc:
            raise ConnectionTimeout(str(exc)) from exc
        except OSError as exc:
            raise ConnectionTimeout(str(exc)) from exc
        return RealStream(sock)

    def tls_connect(self, dst: str, port: int, *, timeout: float = 10.0):
        context = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
        context.check_hostname = False
        context.verify_mode = ssl.CERT_NONE
        try:  # accept ancient internal appliances when OpenSSL allows it
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                context.minimum_version = ssl.TLSVersion.TLSv1
            context.set_ciphers("DEFAULT:@SECLEVEL=0")
        except (ssl.SSLError, ValueError):
            pass
        base = self.tcp_connect(dst, port, timeout=timeout)
        assert isinstance(base, RealStream)
        raw = base._sock
        try:
            raw.settimeout(timeout)
            wrapped = context.wrap_socket(raw, server_hostname=dst)
            der = wrapped.getpeercert(binary_form=True)
        except (ssl.SSLError, OSError) as exc:
            base.close()
            raise ConnectionTimeout(f"TLS handshake failed: {exc}") from exc
        if der is None:
            base.close()
            raise ConnectionTimeout("peer sent no certificate")
        return RealStream(wrapped), der

    # -- SSH --------------------------------------------------------------------

    def ssh_exchange(
        self, dst: str, port: int, client_identification: bytes, *, timeout: float = 10.0
    ) -> tuple[str, bytes]:
        stream = self.tcp_connect(dst, port, timeout=timeout)
        with stream:
            banner = _read_ssh_banner(stream, timeout)
            stream.send(client_identification)
            host_key = _ssh_group14_host_key(stream, timeout)
        return banner, host_key


# SSH transport helpers (pre-encryption phase only).

_SSH_MSG_KEXINIT = 20
_SSH_MSG_KEXDH_INIT = 30
_SSH_MSG_KEXDH_REPLY = 31

# RFC 3526 group 14 prime.
_GROUP14_P = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
    "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)


def _ssh_string(data: bytes) -> bytes:
    return len(data).to_bytes(4, "big") + data


def _ssh_namelist(names: list[str]) -> bytes:
    return _ssh_string(",".join(names).encode("ascii"))


def _ssh_packet(payload: bytes) -> bytes:
    # No encryption yet: block size 8, minimum 4 bytes of padding.
    padding = 8 - ((len(payload) + 5) % 8)
    if padding < 4:
        padding += 8
    body = bytes([padding]) + payload + b"\x00" * padding
    return len(body).to_bytes(4, "big") + body


def _read_exact(stream: Stream, n: int, timeout: float) -> bytes:
    out = bytearray()
    while len(out) < n:
        chunk = stream.recv(n - len(out), timeout)
        if not chunk:
            raise ConnectionTimeout("SSH peer closed mid-packet")
        out.extend(chunk)
    return bytes(out)


def _read_ssh_packet(stream: Stream, timeout: float) -> bytes:
    header = _read_exact(stream, 4, timeout)
    length = int.from_bytes(header, "big")
    if not 1 <= length <= 65536:
        raise ConnectionTimeout(f"implausible SSH packet length {length}")
    body = _read_exact(stream, length, timeout)
    padding = body[0]
    return body[1 : length - padding]


def _read_ssh_banner(stream: Stream, timeout: float) -> str:
    # Servers may send pre-banner lines; the identification starts SSH-.
    for _ in range(32):
        line = stream.recv_line(timeout)
        if not line:
            break
        text = line.strip().decode("ascii", "replace")
        if text.startswith("SSH-"):
            return text
    raise ConnectionTimeout("no SSH identification line")


def _build_kexinit() -> bytes:
    payload = bytes([_SSH_MSG_KEXINIT]) + b"\x00" * 16
    payload += _ssh_namelist(["diffie-hellman-group14-sha256", "diffie-hellman-group14-sha1"])
    payload += _ssh_namelist(
        ["ssh-ed25519", "ecdsa-sha2-nistp256", "rsa-sha2-256", "rsa-sha2-512", "ssh-rsa"]
    )
    for _ in range(2):  # ciphers both directions
        payload += _ssh_namelist(["aes128-ctr", "aes256-ctr"])
    for _ in range(2):  # macs
        payload += _ssh_namelist(["hmac-sha2-256", "hmac-sha1"])
    for _ in range(2):  # compression
        payload += _ssh_namelist(["none"])
    for _ in range(2):  # languages
        payload += _ssh_namelist([])
    payload += b"\x00"  # first_kex_packet_follows
    payload += b"\x00\x00\x00\x00"
    return payload


def _ssh_group14_host_key(stream: Stream, timeout: float) -> bytes:
    stream.send(_ssh_packet(_build_kexinit()))
    deadline = time.monotonic() + timeout
    # Server's KEXINIT may arrive before or after ours; skip until seen.
    while True:
        if time.monotonic() > deadline:
            raise ConnectionTimeout("no server KEXINIT")
        packet = _read_ssh_packet(stream, timeout)
        if packet and packet[0] == _SSH_MSG_KEXINIT:
            break
    exponent = int.from_bytes(os.urandom(32), "big") | 1
    public = pow(2, exponent, _GROUP14_P)
    raw = public.to_bytes((public.bit_length() + 7) // 8, "big")
    if raw[0] & 0x80:
        raw = b"\x00" + raw
    stream.send(_ssh_packet(bytes([_SSH_MSG_KEXDH_INIT]) + _ssh_string(raw)))
    while True:
        if time.monotonic() > deadline:
            raise ConnectionTimeout("no KEXDH reply")
        packet = _read_ssh_packet(stream, timeout)
        if packet and packet[0] == _SSH_MSG_KEXDH_REPLY:
            key_len = int.from_bytes(packet[1:5], "big")
            if 0 < key_len <= len(packet) - 5:
                return packet[5 : 5 + key_len]
            raise ConnectionTimeout("malformed KEXDH reply")
