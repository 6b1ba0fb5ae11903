"""Scanner tool fingerprinting from IP header quirks.

Two widely deployed scanners leave recognizable marks in the IPv4 ID field:
one stamps a fixed constant, the other derives the ID from destination and
sequence fields so it can validate responses statelessly. The rules live in a
small config object rather than code so updated fingerprints can ship without
touching logic. Rule order matters and the fixed-constant check wins ties.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Iterable

from .model import DarknetEvent, PacketMeta, Protocol, TrafficType


class ProbeTool(str, enum.Enum):
    ZMAP = "zmap"
    MASSCAN = "masscan"
    OTHER = "other"


@dataclass(frozen=True)
class FingerprintRules:
    zmap_ip_id: int = 54321


DEFAULT_RULES = FingerprintRules()


def masscan_ip_id(dst_ip: int, dst_port: int, tcp_seq: int) -> int:
    """IP ID the stateless-validation scanner would emit for this probe.

    dst_port and tcp_seq are zero-extended to 32 bits before the XOR; only the
    low 16 bits survive into the ID field.
    """
    return (dst_ip ^ dst_port ^ tcp_seq) & 0xFFFF


def fingerprint_packet(p: PacketMeta, rules: FingerprintRules = DEFAULT_RULES) -> ProbeTool:
    if p.ip_id == rules.zmap_ip_id:
        return ProbeTool.ZMAP
    if p.protocol is Protocol.TCP and p.tcp_seq is not None:
        if p.ip_id == masscan_ip_id(p.dst_ip, p.dst_port, p.tcp_seq):
            return ProbeTool.MASSCAN
    return ProbeTool.OTHER


_TYPE_TO_PROTOCOL = {
    TrafficType.TCP_SYN: "tcp",
    TrafficType.UDP: "udp",
    TrafficType.ICMP_ECHO_REQUEST: "icmp",
}

PORT_TABLE_FIELDS = ["port", "protocol", "zmap_pkts", "masscan_pkts", "other_pkts", "total_pkts"]


@dataclass(frozen=True, slots=True)
class PortFingerprintRow:
    port: int
    protocol: str
    zmap_pkts: int
    masscan_pkts: int
    other_pkts: int

    @property
    def total_pkts(self) -> int:
        return self.zmap_pkts + self.masscan_pkts + self.other_pkts


def port_fingerprint_table(
    events: Iterable[DarknetEvent], top_n: int = 0
) -> list[PortFingerprintRow]:
    """Aggregate per-packet tool counts by (port, protocol), busiest first.

    Ties on total packets break toward the lower port number, then protocol
    name, so the ranking is deterministic. top_n of 0 means no truncation.
    ICMP rows appear under port 0.
    """
    counts: dict[tuple[int, str], list[int]] = {}
    for ev in events:
        key = (ev.key.dst_port, _TYPE_TO_PROTOCOL[ev.key.traffic_type])
        cell = counts.get(key)
        if cell is None:
            cell = counts[key] = [0, 0, 0]
        cell[0] += ev.zmap_pkts
        cell[1] += ev.masscan_pkts
        cell[2] += ev.other_pkts
    rows = [
        PortFingerprintRow(port, proto, z, m, o)
        for (port, proto), (z, m, o) in counts.items()
    ]
    rows.sort(key=lambda r: (-r.total_pkts, r.port, r.protocol))
    if top_n > 0:
        rows = rows[:top_n]
    return rows


def write_port_table_csv(path, rows: Iterable[PortFingerprintRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PORT_TABLE_FIELDS)
        for r in rows:
            writer.writerow([r.port, r.protocol, r.zmap_pkts, r.masscan_pkts, r.other_pkts, r.total_pkts])
