"""Shared builders and independent oracles for the test suite.

The frame and pcap builders here are written independently from the package's
own writers (int.to_bytes assembly instead of struct templates) so they can
serve as a second opinion on the binary formats.
"""
from __future__ import annotations

import ipaddress
from typing import Iterable, List, Optional, Tuple

from darklens.model import (
    DarknetConfig,
    PacketMeta,
    Protocol,
    ip_to_int,
    validate_config,
)

US = 1_000_000


def make_cfg(
    prefixes=("10.0.0.0/22",),
    event_timeout_s: float = 600.0,
    dispersion_fraction: float = 0.10,
    alpha: float = 0.0001,
) -> DarknetConfig:
    cfg = DarknetConfig(
        darknet_prefixes=[ipaddress.IPv4Network(p) for p in prefixes],
        event_timeout_s=event_timeout_s,
        dispersion_fraction=dispersion_fraction,
        alpha=alpha,
    )
    return validate_config(cfg)


def cfg_sized(total: int, fraction: float = 0.10) -> DarknetConfig:
    """Telescope config with an exact (non power of two) address count."""
    nets = []
    addr = ip_to_int("10.0.0.0")
    remaining = total
    for bit in range(31, -1, -1):
        size = 1 << bit
        if remaining >= size:
            nets.append(ipaddress.IPv4Network((addr, 32 - bit)))
            addr += size
            remaining -= size
    return validate_config(
        DarknetConfig(darknet_prefixes=nets, dispersion_fraction=fraction)
    )


def mk_pkt(
    ts_us: int,
    src: str | int,
    dst: str | int,
    proto: str = "udp",
    sport: Optional[int] = 40000,
    dport: Optional[int] = 53,
    flags: Optional[int] = None,
    seq: Optional[int] = None,
    ip_id: int = 7,
    icmp_type: Optional[int] = None,
    pkt_len: int = 60,
) -> PacketMeta:
    """PacketMeta builder with protocol-appropriate defaults."""
    src_i = ip_to_int(src) if isinstance(src, str) else src
    dst_i = ip_to_int(dst) if isinstance(dst, str) else dst
    protocol = Protocol(proto)
    if protocol is Protocol.TCP:
        return PacketMeta(
            ts_us, src_i, dst_i, protocol, sport, dport,
            0x02 if flags is None else flags, ip_id,
            0 if seq is None else seq, None, pkt_len,
        )
    if protocol is Protocol.UDP:
        return PacketMeta(ts_us, src_i, dst_i, protocol, sport, dport, None, ip_id, None, None, pkt_len)
    return PacketMeta(
        ts_us, src_i, dst_i, protocol, None, None, None, ip_id, None,
        8 if icmp_type is None else icmp_type, pkt_len,
    )


# ---------------------------------------------------------------------------
# Independent wire-format builders (oracle side).


def oracle_ipv4(
    src: str, dst: str, proto: int, payload: bytes, ip_id: int = 0, frag_off: int = 0
) -> bytes:
    hdr = bytearray(20)
    hdr[0] = 0x45
    total_len = 20 + len(payload)
    hdr[2:4] = total_len.to_bytes(2, "big")
    hdr[4:6] = ip_id.to_bytes(2, "big")
    hdr[6:8] = frag_off.to_bytes(2, "big")
    hdr[8] = 64
    hdr[9] = proto
    hdr[12:16] = bytes(int(x) for x in src.split("."))
    hdr[16:20] = bytes(int(x) for x in dst.split("."))
    return bytes(hdr) + payload


def oracle_tcp(sport: int, dport: int, seq: int, flags: int) -> bytes:
    hdr = bytearray(20)
    hdr[0:2] = sport.to_bytes(2, "big")
    hdr[2:4] = dport.to_bytes(2, "big")
    hdr[4:8] = seq.to_bytes(4, "big")
    hdr[12] = 5 << 4
    hdr[13] = flags
    hdr[14:16] = (8192).to_bytes(2, "big")
    return bytes(hdr)


def oracle_udp(sport: int, dport: int) -> bytes:
    return sport.to_bytes(2, "big") + dport.to_bytes(2, "big") + (8).to_bytes(2, "big") + b"\x00\x00"


def oracle_icmp(icmp_type: int) -> bytes:
    return bytes([icmp_type, 0, 0, 0, 0, 1, 0, 1])


ETH = bytes(6) + bytes(6) + b"\x08\x00"


def eth_frame(ip_packet: bytes) -> bytes:
    return ETH + ip_packet


def build_pcap(
    records: Iterable[Tuple[int, bytes]],
    endian: str = "<",
    nanos: bool = False,
    linktype: int = 1,
    magic_override: Optional[int] = None,
) -> bytes:
    """Classic pcap bytes assembled by hand, any endianness, us or ns."""
    if magic_override is not None:
        magic = magic_override
    elif nanos:
        magic = 0xA1B23C4D
    else:
        magic = 0xA1B2C3D4
    big = endian == ">"
    order = "big" if big else "little"
    out = bytearray()
    out += magic.to_bytes(4, order)
    out += (2).to_bytes(2, order) + (4).to_bytes(2, order)
    out += (0).to_bytes(4, order) + (0).to_bytes(4, order)
    out += (65535).to_bytes(4, order) + linktype.to_bytes(4, order)
    for ts_us, frame in records:
        sec, rem = divmod(ts_us, US)
        frac = rem * 1000 if nanos else rem
        out += sec.to_bytes(4, order) + frac.to_bytes(4, order)
        out += len(frame).to_bytes(4, order) + len(frame).to_bytes(4, order)
        out += frame
    return bytes(out)


# ---------------------------------------------------------------------------
# Independent oracles.


def oracle_ecdf(values, alpha) -> int:
    """Full-sort order statistic with the ceiling done in integer arithmetic."""
    from fractions import Fraction

    s = sorted(values)
    n = len(s)
    q = (1 - Fraction(alpha)) * n
    k = -((-q.numerator) // q.denominator)  # ceil without math.ceil
    k = min(max(k, 1), n)
    return s[k - 1]


def offline_intervals(ts_sorted: List[int], timeout_us: int) -> List[Tuple[int, int]]:
    """Split one key's ascending timestamps at gaps strictly above the timeout."""
    assert ts_sorted
    intervals = []
    start = last = ts_sorted[0]
    for t in ts_sorted[1:]:
        if t - last > timeout_us:
            intervals.append((start, last))
            start = last = t
        else:
            last = t
    intervals.append((start, last))
    return intervals
