"""Classic libpcap files (not pcapng).

Only headers are read: timestamps, wire length and the IPv4/TCP-or-UDP
4-tuple. Payload bytes are skipped.
"""
from __future__ import annotations

import ipaddress
import struct
from pathlib import Path
from typing import Sequence

from ..errors import ConfigError, DataError
from ..trace import C2S, S2C, Record, Trace

MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D
LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_IPV4 = 228

_GLOBAL = "IHHiIII"
_RECORD = "IIII"


def parse_endpoint(spec: str) -> tuple[str, int]:
    """``"A.B.C.D:port"`` -> (ip, port)."""
    try:
        host, port = spec.rsplit(":", 1)
        ipaddress.IPv4Address(host)
        port_i = int(port)
        if not 0 <= port_i < 65536:
            raise ValueError(port)
    except ValueError:
        raise ConfigError("bad-filter", f"expected A.B.C.D:port, got {spec!r}") from None
    return host, port_i


def _read_header(buf: bytes) -> tuple[str, int, int]:
    if len(buf) < 24:
        raise DataError("not-pcap", "file shorter than a pcap global header")
    for endian in ("<", ">"):
        magic = struct.unpack(endian + "I", buf[:4])[0]
        if magic in (MAGIC_US, MAGIC_NS):
            fields = struct.unpack(endian + _GLOBAL, buf[:24])
            return endian, (1 if magic == MAGIC_NS else 1000), fields[6]
    raise DataError("not-pcap", f"bad magic {buf[:4].hex()}")


def _endpoints(frame: bytes, linktype: int):
    if linktype == LINKTYPE_ETHERNET:
        if len(frame) < 14 or frame[12:14] != b"\x08\x00":
            return None
        frame = frame[14:]
    elif linktype not in (LINKTYPE_RAW, LINKTYPE_IPV4):
        raise DataError("unsupported-linktype", str(linktype))
    if len(frame) < 20 or frame[0] >> 4 != 4:
        return None
    ihl = (frame[0] & 0x0F) * 4
    proto = frame[9]
    if proto not in (6, 17) or len(frame) < ihl + 4:
        return None
    src = str(ipaddress.IPv4Address(frame[12:16]))
    dst = str(ipaddress.IPv4Address(frame[16:20]))
    sport, dport = struct.unpack("!HH", frame[ihl:ihl + 4])
    return (src, sport), (dst, dport)


def import_pcap(path: str | Path, filter: str, max_packets: int | None = None) -> list[Trace]:
    """Streams exchanged with the ``filter`` endpoint, one Trace per 4-tuple.

    Packets sent by the filter endpoint are server->client. With
    ``max_packets`` each stream is cut to its first ``max_packets`` records
    and shorter streams are dropped.
    """
    server = parse_endpoint(filter)
    buf = Path(path).read_bytes()
    endian, ns_scale, linktype = _read_header(buf)
    rec_fmt = struct.Struct(endian + _RECORD)
    streams: dict[tuple, list[Record]] = {}
    off = 24
    while off < len(buf):
        if off + 16 > len(buf):
            raise DataError("truncated-pcap", f"record header at byte {off}")
        sec, frac, incl, orig = rec_fmt.unpack_from(buf, off)
        off += 16
        if off + incl > len(buf):
            raise DataError("truncated-pcap", f"record body at byte {off}")
        ends = _endpoints(buf[off:off + min(incl, 64)], linktype)
        off += incl
        if ends is None:
            continue
        src, dst = ends
        if src == server:
            client, d = dst, S2C
        elif dst == server:
            client, d = src, C2S
        else:
            continue
        sid = f"{client[0]}:{client[1]}"
        streams.setdefault((client, server), []).append(Record(sec * 1_000_000_000 + frac * ns_scale, orig, d, sid))
    out = []
    for recs in streams.values():
        if max_packets is not None:
            if len(recs) < max_packets:
                continue
            recs = recs[:max_packets]
        recs.sort(key=lambda r: r.ts_ns)
        out.append(Trace.from_records(recs))
    return out


def _ip_header(src: str, dst: str, total_len: int) -> bytes:
    return struct.pack(
        "!BBHHHBBH4s4s", 0x45, 0, total_len, 0, 0x4000, 64, 6, 0,
        ipaddress.IPv4Address(src).packed, ipaddress.IPv4Address(dst).packed,
    )


def _tcp_header(sport: int, dport: int) -> bytes:
    return struct.pack("!HHIIBBHHH", sport, dport, 0, 0, 5 << 4, 0x18, 65535, 0, 0)


def export_pcap(
    traces: Sequence[Trace],
    path: str | Path,
    *,
    server: str = "10.0.0.1:443",
    nanosecond: bool = True,
    big_endian: bool = False,
) -> dict[str, str]:
    """Write traces as raw-IPv4 TCP packets of their recorded sizes.

    Streams named ``A.B.C.D:port`` keep that client address; any other
    stream id is assigned ``10.0.1.x:40000+i``. Returns the id mapping.
    """
    srv = parse_endpoint(server)
    endian = ">" if big_endian else "<"
    mapping: dict[str, str] = {}
    rows = []
    for i, tr in enumerate(traces):
        try:
            client = parse_endpoint(tr.stream_id)
        except ConfigError:
            client = (f"10.0.1.{1 + i // 20000}", 40000 + i % 20000)
        mapping[tr.stream_id] = f"{client[0]}:{client[1]}"
        for r in tr.records():
            if r.size < 40:
                raise DataError("packet-too-small", f"{r.size} bytes cannot hold IPv4+TCP headers")
            if r.size > 65535:
                raise DataError("packet-too-large", f"{r.size} bytes exceeds the IPv4 total-length field")
            rows.append((r.ts_ns, i, r, client))
    rows.sort(key=lambda x: (x[0], x[1]))
    scale = 1 if nanosecond else 1000
    with open(path, "wb") as fh:
        fh.write(struct.pack(endian + _GLOBAL, MAGIC_NS if nanosecond else MAGIC_US, 2, 4, 0, 0, 262144, LINKTYPE_RAW))
        for ts, _, r, client in rows:
            src, dst = (srv, client) if r.dir == S2C else (client, srv)
            hdr = _ip_header(src[0], dst[0], r.size) + _tcp_header(src[1], dst[1])
            body = hdr + bytes(r.size - len(hdr))
            sec, rem = divmod(ts, 1_000_000_000)
            fh.write(struct.pack(endian + _RECORD, sec, rem // scale, r.size, r.size))
            fh.write(body)
    return mapping
