"""Decoding of ARP observations from classic pcap files and line records.

Two input formats are supported:

* classic libpcap captures (micro- or nanosecond magic, either byte order,
  Ethernet link type), and
* a whitespace-separated text format, one packet per line::

      timestamp_us src_mac dst_mac opcode sender_ip target_ip

Both produce the same canonical :class:`ArpObservation` stream.
"""
from __future__ import annotations

import io
import ipaddress
import re
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator

BROADCAST_MAC = "ff:ff:ff:ff:ff:ff"
ZERO_MAC = "00:00:00:00:00:00"

ETHERTYPE_ARP = 0x0806
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_VLAN = 0x8100
LINKTYPE_ETHERNET = 1

ARP_REQUEST = 1
ARP_REPLY = 2
ARP_PAYLOAD_LEN = 28

MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D

_MAC_RE = re.compile(r"^[0-9a-fA-F]{2}(:[0-9a-fA-F]{2}){5}$")


class IngestError(Exception):
    """Base class for fatal capture-file errors."""


class BadMagic(IngestError):
    pass


class UnsupportedLinkType(IngestError):
    pass


class TruncatedHeader(IngestError):
    """The capture ends inside a header or a declared record body."""

    def __init__(self, message: str, records_read: int = 0):
        super().__init__(f"{message} (records read: {records_read})")
        self.records_read = records_read


@dataclass(frozen=True, order=True)
class ArpObservation:
    timestamp_us: int
    src_mac: str
    dst_mac: str
    opcode: int
    sender_ip: str
    target_ip: str

    def to_record(self) -> str:
        return (f"{self.timestamp_us} {self.src_mac} {self.dst_mac} "
                f"{self.opcode} {self.sender_ip} {self.target_ip}")


@dataclass
class IngestStats:
    packets_total: int = 0
    arp_packets: int = 0
    dropped_malformed: int = 0
    dropped_non_arp: int = 0

    def merge(self, other: "IngestStats") -> "IngestStats":
        return IngestStats(
            self.packets_total + other.packets_total,
            self.arp_packets + other.arp_packets,
            self.dropped_malformed + other.dropped_malformed,
            self.dropped_non_arp + other.dropped_non_arp,
        )


def mac_to_str(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def mac_to_bytes(mac: str) -> bytes:
    return bytes(int(part, 16) for part in mac.split(":"))


def ip_to_str(raw: bytes) -> str:
    return ".".join(str(b) for b in raw)


def ip_to_bytes(ip: str) -> bytes:
    return ipaddress.IPv4Address(ip).packed


def _valid(obs: ArpObservation) -> bool:
    return (obs.opcode in (ARP_REQUEST, ARP_REPLY)
            and obs.timestamp_us >= 0
            and obs.src_mac != BROADCAST_MAC)


# --------------------------------------------------------------------------
# pcap


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    # read() on pipes/sockets may return short; keep going until EOF
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _decode_frame(frame: bytes, timestamp_us: int):
    """Return an ArpObservation, or the string 'non_arp' / 'malformed'."""
    if len(frame) < 14:
        return "malformed"
    dst, src = frame[0:6], frame[6:12]
    (ethertype,) = struct.unpack_from("!H", frame, 12)
    offset = 14
    if ethertype == ETHERTYPE_VLAN:
        if len(frame) < 18:
            return "malformed"
        (ethertype,) = struct.unpack_from("!H", frame, 16)
        offset = 18
    if ethertype != ETHERTYPE_ARP:
        return "non_arp"
    payload = frame[offset:]
    if len(payload) < ARP_PAYLOAD_LEN:
        return "malformed"
    htype, ptype, hlen, plen, opcode = struct.unpack_from("!HHBBH", payload, 0)
    if (htype, ptype, hlen, plen) != (1, ETHERTYPE_IPV4, 6, 4):
        return "malformed"
    obs = ArpObservation(
        timestamp_us=timestamp_us,
        src_mac=mac_to_str(src),
        dst_mac=mac_to_str(dst),
        opcode=opcode,
        sender_ip=ip_to_str(payload[14:18]),
        target_ip=ip_to_str(payload[24:28]),
    )
    return obs if _valid(obs) else "malformed"


def iter_pcap(source: bytes | BinaryIO, stats: IngestStats | None = None
              ) -> Iterator[ArpObservation]:
    """Yield ARP observations from a classic pcap stream in capture order.

    ``stats`` (if given) is updated in place as records are consumed.
    """
    stream = io.BytesIO(source) if isinstance(source, (bytes, bytearray)) else source
    stats = stats if stats is not None else IngestStats()

    header = _read_exact(stream, 24)
    if len(header) < 4:
        raise BadMagic("stream too short for a pcap global header")
    magic_le = struct.unpack("<I", header[:4])[0]
    if magic_le in (MAGIC_US, MAGIC_NS):
        endian = "<"
    elif struct.unpack(">I", header[:4])[0] in (MAGIC_US, MAGIC_NS):
        endian = ">"
    else:
        raise BadMagic(f"unknown pcap magic {header[:4].hex()}")
    nanos = struct.unpack(endian + "I", header[:4])[0] == MAGIC_NS
    if len(header) < 24:
        raise TruncatedHeader("pcap global header is shorter than 24 bytes", 0)
    linktype = struct.unpack(endian + "I", header[20:24])[0] & 0x0FFFFFFF
    if linktype != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {linktype} is not Ethernet")

    records = 0
    record_fmt = endian + "IIII"
    while True:
        rec_header = _read_exact(stream, 16)
        if not rec_header:
            return
        if len(rec_header) < 16:
            raise TruncatedHeader("capture ends inside a record header", records)
        ts_sec, ts_frac, incl_len, _orig_len = struct.unpack(record_fmt, rec_header)
        frame = _read_exact(stream, incl_len)
        if len(frame) < incl_len:
            raise TruncatedHeader(
                f"record declares {incl_len} bytes but only {len(frame)} remain",
                records)
        records += 1
        stats.packets_total += 1
        ts_us = ts_sec * 1_000_000 + (ts_frac // 1000 if nanos else ts_frac)
        decoded = _decode_frame(frame, ts_us)
        if decoded == "non_arp":
            stats.dropped_non_arp += 1
        elif decoded == "malformed":
            stats.dropped_malformed += 1
        else:
            stats.arp_packets += 1
            yield decoded


def parse_pcap(source: bytes | BinaryIO) -> tuple[list[ArpObservation], IngestStats]:
    stats = IngestStats()
    observations = list(iter_pcap(source, stats))
    return observations, stats


def _encode_frame(obs: ArpObservation) -> bytes:
    # target hardware address is unknown in a request, echoed in a reply
    tha = ZERO_MAC if obs.opcode == ARP_REQUEST else obs.dst_mac
    frame = (mac_to_bytes(obs.dst_mac) + mac_to_bytes(obs.src_mac)
             + struct.pack("!H", ETHERTYPE_ARP)
             + struct.pack("!HHBBH", 1, ETHERTYPE_IPV4, 6, 4, obs.opcode)
             + mac_to_bytes(obs.src_mac) + ip_to_bytes(obs.sender_ip)
             + mac_to_bytes(tha) + ip_to_bytes(obs.target_ip))
    return frame.ljust(60, b"\x00")


def write_pcap(observations: Iterable[ArpObservation], stream: BinaryIO) -> int:
    """Write observations as a little-endian microsecond pcap. Returns record count."""
    stream.write(struct.pack("<IHHiIII", MAGIC_US, 2, 4, 0, 0, 65535, LINKTYPE_ETHERNET))
    n = 0
    for obs in observations:
        frame = _encode_frame(obs)
        sec, usec = divmod(obs.timestamp_us, 1_000_000)
        stream.write(struct.pack("<IIII", sec, usec, len(frame), len(frame)))
        stream.write(frame)
        n += 1
    return n


# --------------------------------------------------------------------------
# line records


def parse_record_line(line: str) -> ArpObservation | None:
    """Parse one record line; None when the line is malformed."""
    parts = line.split()
    if len(parts) != 6:
        return None
    ts, src, dst, opcode, sender_ip, target_ip = parts
    if not (_MAC_RE.match(src) and _MAC_RE.match(dst)):
        return None
    try:
        obs = ArpObservation(
            timestamp_us=int(ts),
            src_mac=src.lower(),
            dst_mac=dst.lower(),
            opcode=int(opcode),
            sender_ip=str(ipaddress.IPv4Address(sender_ip)),
            target_ip=str(ipaddress.IPv4Address(target_ip)),
        )
    except ValueError:
        return None
    return obs if _valid(obs) else None


def parse_records(lines: str | Iterable[str]) -> tuple[list[ArpObservation], IngestStats]:
    if isinstance(lines, str):
        lines = lines.splitlines()
    stats = IngestStats()
    observations = []
    for line in lines:
        if not line.strip():
            continue
        stats.packets_total += 1
        obs = parse_record_line(line)
        if obs is None:
            stats.dropped_malformed += 1
        else:
            stats.arp_packets += 1
            observations.append(obs)
    return observations, stats


def write_records(observations: Iterable[ArpObservation], stream) -> int:
    n = 0
    for obs in observations:
        stream.write(obs.to_record() + "\n")
        n += 1
    return n


def read_file(path, fmt: str) -> tuple[list[ArpObservation], IngestStats]:
    """Load a capture or record file; ``fmt`` is ``pcap`` or ``records``."""
    if fmt == "pcap":
        with open(path, "rb") as fh:
            return parse_pcap(fh)
    if fmt == "records":
        with open(path, "r", encoding="ascii") as fh:
            return parse_records(fh)
    raise ValueError(f"unknown input format {fmt!r}")
