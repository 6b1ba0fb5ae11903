"""Core domain types and configuration for the darknet analytics engine.

Everything downstream (event building, detection, impact estimation) speaks in
terms of the types defined here. Conventions that matter:

* Timestamps are integers in microseconds since the Unix epoch. No floats, so
  two runs over the same capture produce byte-identical output.
* IPv4 addresses travel as unsigned 32-bit integers internally and are only
  rendered dotted-quad at file boundaries.
* Days are UTC calendar days.
"""
from __future__ import annotations

import enum
import ipaddress
import json
import socket
import struct
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, NamedTuple, Optional

US_PER_S = 1_000_000
US_PER_DAY = 86_400 * US_PER_S
TOTAL_IPV4 = 2 ** 32
_EPOCH_DAY = date(1970, 1, 1)

# TCP flag bits in wire order (low 6 bits of the flags byte).
TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10
TCP_URG = 0x20

# Letter encoding used by the flow CSV format: any subset of "SAFRPU".
_FLAG_LETTERS = (
    ("S", TCP_SYN),
    ("A", TCP_ACK),
    ("F", TCP_FIN),
    ("R", TCP_RST),
    ("P", TCP_PSH),
    ("U", TCP_URG),
)
_FLAG_BY_LETTER = {letter: bit for letter, bit in _FLAG_LETTERS}


def flags_to_letters(flags: int) -> str:
    """Render a TCP flag bitmask as its canonical letter string (S before A)."""
    return "".join(letter for letter, bit in _FLAG_LETTERS if flags & bit)


def letters_to_flags(letters: str) -> int:
    flags = 0
    for ch in letters:
        bit = _FLAG_BY_LETTER.get(ch)
        if bit is None:
            raise ValueError(f"unknown TCP flag letter {ch!r}")
        flags |= bit
    return flags


def ip_to_int(text: str) -> int:
    """Dotted-quad string to unsigned 32-bit integer. Raises ValueError."""
    try:
        return struct.unpack("!I", socket.inet_aton(text))[0]
    except OSError as exc:
        raise ValueError(f"invalid IPv4 address {text!r}") from exc


def int_to_ip(value: int) -> str:
    return socket.inet_ntoa(struct.pack("!I", value & 0xFFFFFFFF))


def utc_day(ts_us: int) -> date:
    """UTC calendar day containing the given microsecond timestamp."""
    return _EPOCH_DAY + timedelta(days=ts_us // US_PER_DAY)


def day_start_us(day: date) -> int:
    return (day - _EPOCH_DAY).days * US_PER_DAY


def day_end_us(day: date) -> int:
    """Exclusive upper bound of the day in microseconds."""
    return day_start_us(day) + US_PER_DAY


class TrafficType(str, enum.Enum):
    """The three scanning traffic classes tracked by the engine.

    Anything else seen on the darknet (backscatter SYN-ACKs, other ICMP,
    fragments) is not a scanning probe and never enters an event.
    """

    TCP_SYN = "tcp_syn"
    UDP = "udp"
    ICMP_ECHO_REQUEST = "icmp_echo_request"


class Protocol(str, enum.Enum):
    TCP = "tcp"
    UDP = "udp"
    ICMP = "icmp"


class Direction(str, enum.Enum):
    INGRESS = "I"
    EGRESS = "E"


@dataclass(slots=True)
class PacketMeta:
    """Decoded header fields of one captured packet.

    Port, flag, seq and icmp fields are present exactly when the transport
    protocol defines them; readers never emit a PacketMeta that violates this.
    """

    ts_us: int
    src_ip: int
    dst_ip: int
    protocol: Protocol
    src_port: Optional[int]
    dst_port: Optional[int]
    tcp_flags: Optional[int]
    ip_id: int
    tcp_seq: Optional[int]
    icmp_type: Optional[int]
    pkt_len: int

    def validate(self) -> None:
        """Assert the structural invariants. Used by tests, not hot paths."""
        if self.ts_us < 0:
            raise ValueError("negative timestamp")
        is_tcp = self.protocol is Protocol.TCP
        is_udp = self.protocol is Protocol.UDP
        is_icmp = self.protocol is Protocol.ICMP
        if (self.src_port is not None) != (is_tcp or is_udp):
            raise ValueError("src_port present iff TCP or UDP")
        if (self.dst_port is not None) != (is_tcp or is_udp):
            raise ValueError("dst_port present iff TCP or UDP")
        if (self.tcp_flags is not None) != is_tcp:
            raise ValueError("tcp_flags present iff TCP")
        if (self.tcp_seq is not None) != is_tcp:
            raise ValueError("tcp_seq present iff TCP")
        if (self.icmp_type is not None) != is_icmp:
            raise ValueError("icmp_type present iff ICMP")
        if not 0 <= self.ip_id <= 0xFFFF:
            raise ValueError("ip_id out of range")


class EventKey(NamedTuple):
    """Identity of a logical scan: one source hitting one service.

    ICMP echo events carry dst_port 0 as a sentinel since ICMP has no ports.
    """

    src_ip: int
    dst_port: int
    traffic_type: TrafficType


@dataclass(frozen=True, slots=True)
class DarknetEvent:
    """A closed logical scan event.

    start_ts and end_ts are integer microseconds; end_ts is the timestamp of
    the last packet folded in, so start_ts == end_ts for single-packet events.
    """

    key: EventKey
    start_ts: int
    end_ts: int
    pkt_count: int
    unique_dst_count: int
    zmap_pkts: int
    masscan_pkts: int
    other_pkts: int

    def validate(self, darknet_size: Optional[int] = None) -> None:
        if not self.start_ts <= self.end_ts:
            raise ValueError("start_ts must be <= end_ts")
        if self.pkt_count < 1:
            raise ValueError("pkt_count must be >= 1")
        upper = self.pkt_count if darknet_size is None else min(self.pkt_count, darknet_size)
        if not 1 <= self.unique_dst_count <= upper:
            raise ValueError("unique_dst_count out of range")
        if self.zmap_pkts + self.masscan_pkts + self.other_pkts != self.pkt_count:
            raise ValueError("fingerprint counters must partition pkt_count")
        if (self.key.traffic_type is TrafficType.ICMP_ECHO_REQUEST) != (self.key.dst_port == 0):
            raise ValueError("dst_port 0 is reserved for ICMP echo events")

    def to_json_obj(self) -> dict:
        return {
            "key": {
                "src_ip": int_to_ip(self.key.src_ip),
                "dst_port": self.key.dst_port,
                "traffic_type": self.key.traffic_type.value,
            },
            "start_ts": self.start_ts,
            "end_ts": self.end_ts,
            "pkt_count": self.pkt_count,
            "unique_dst_count": self.unique_dst_count,
            "zmap_pkts": self.zmap_pkts,
            "masscan_pkts": self.masscan_pkts,
            "other_pkts": self.other_pkts,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_json_obj(), separators=(",", ":"))

    @classmethod
    def from_json_obj(cls, obj: dict) -> "DarknetEvent":
        key = obj["key"]
        return cls(
            key=EventKey(
                src_ip=ip_to_int(key["src_ip"]),
                dst_port=int(key["dst_port"]),
                traffic_type=TrafficType(key["traffic_type"]),
            ),
            start_ts=int(obj["start_ts"]),
            end_ts=int(obj["end_ts"]),
            pkt_count=int(obj["pkt_count"]),
            unique_dst_count=int(obj["unique_dst_count"]),
            zmap_pkts=int(obj["zmap_pkts"]),
            masscan_pkts=int(obj["masscan_pkts"]),
            other_pkts=int(obj["other_pkts"]),
        )

    @classmethod
    def from_json_line(cls, line: str) -> "DarknetEvent":
        return cls.from_json_obj(json.loads(line))


@dataclass(slots=True)
class AhVerdict:
    """Per-source, per-day classification result for an aggressive scanner."""

    src_ip: int
    day: date
    matched_defs: frozenset[str]
    max_dispersion: float
    max_event_pkts: int
    distinct_ports: int
    is_daily: bool
    is_active: bool
    acked: bool = False
    acked_org: Optional[str] = None

    def validate(self) -> None:
        if not self.matched_defs:
            raise ValueError("emitted verdicts must match at least one definition")
        if not self.matched_defs <= {"D1", "D2", "D3"}:
            raise ValueError("unknown definition tag")
        if self.is_daily and not self.is_active:
            raise ValueError("is_daily implies is_active")

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "src_ip": int_to_ip(self.src_ip),
                "day": self.day.isoformat(),
                "matched_defs": sorted(self.matched_defs),
                "max_dispersion": self.max_dispersion,
                "max_event_pkts": self.max_event_pkts,
                "distinct_ports": self.distinct_ports,
                "is_daily": self.is_daily,
                "is_active": self.is_active,
                "acked": self.acked,
                "acked_org": self.acked_org,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json_line(cls, line: str) -> "AhVerdict":
        obj = json.loads(line)
        return cls(
            src_ip=ip_to_int(obj["src_ip"]),
            day=date.fromisoformat(obj["day"]),
            matched_defs=frozenset(obj["matched_defs"]),
            max_dispersion=float(obj["max_dispersion"]),
            max_event_pkts=int(obj["max_event_pkts"]),
            distinct_ports=int(obj["distinct_ports"]),
            is_daily=bool(obj["is_daily"]),
            is_active=bool(obj["is_active"]),
            acked=bool(obj["acked"]),
            acked_org=obj.get("acked_org"),
        )


@dataclass(slots=True)
class FlowRecord:
    """One sampled flow export row from a vantage router."""

    router_id: str
    ts_us: int
    direction: Direction
    src_ip: int
    dst_ip: int
    protocol: Protocol
    src_port: Optional[int]
    dst_port: Optional[int]
    sampled_pkts: int
    sampling_denominator: int
    tcp_flags: Optional[int]

    @property
    def estimated_pkts(self) -> int:
        """Horvitz-Thompson inversion of the sampling process."""
        return self.sampled_pkts * self.sampling_denominator


@dataclass(frozen=True, slots=True)
class Thresholds:
    """Detection thresholds for one observation dataset."""

    volume_threshold_pkts: int
    ports_threshold: int
    dataset_label: str = ""

    def validate(self) -> None:
        if self.volume_threshold_pkts < 1 or self.ports_threshold < 1:
            raise ValueError("thresholds must be >= 1")


class ConfigError(ValueError):
    pass


class EmptyPrefixListError(ConfigError):
    pass


class OverlappingPrefixesError(ConfigError):
    pass


class InvalidFractionError(ConfigError):
    pass


@dataclass
class DarknetConfig:
    """Operator configuration for one telescope deployment.

    darknet_size is always derived from the prefixes by validate_config and
    never trusted from input.
    """

    darknet_prefixes: list[ipaddress.IPv4Network] = field(default_factory=list)
    event_timeout_s: float = 600.0
    assumed_scan_rate_pps: float = 100.0
    dispersion_fraction: float = 0.10
    alpha: float = 0.0001
    darknet_size: int = 0

    def contains(self, ip: int) -> bool:
        for net in self.darknet_prefixes:
            if (ip & int(net.netmask)) == int(net.network_address):
                return True
        return False


def validate_config(cfg: DarknetConfig) -> DarknetConfig:
    """Check invariants and fill in darknet_size. Returns cfg for chaining."""
    if not cfg.darknet_prefixes:
        raise EmptyPrefixListError("darknet_prefixes must not be empty")
    nets = sorted(cfg.darknet_prefixes, key=lambda n: (int(n.network_address), n.prefixlen))
    for a, b in zip(nets, nets[1:]):
        if a.overlaps(b):
            raise OverlappingPrefixesError(f"prefixes {a} and {b} overlap")
    size = sum(n.num_addresses for n in cfg.darknet_prefixes)
    if size < 256:
        raise ConfigError(f"darknet too small ({size} addresses, need >= 256)")
    if not 0.0 < cfg.dispersion_fraction <= 1.0:
        raise InvalidFractionError(f"dispersion_fraction {cfg.dispersion_fraction} not in (0, 1]")
    if not 0.0 < cfg.alpha < 1.0:
        raise InvalidFractionError(f"alpha {cfg.alpha} not in (0, 1)")
    if cfg.event_timeout_s <= 0:
        raise ConfigError("event_timeout_s must be positive")
    if cfg.assumed_scan_rate_pps <= 0:
        raise ConfigError("assumed_scan_rate_pps must be positive")
    cfg.darknet_size = size
    return cfg


# Keys accepted by the flat key-value config file. darknet_size is tolerated
# on input but always recomputed.
_CONFIG_KEYS = {
    "darknet_prefixes",
    "event_timeout_s",
    "assumed_scan_rate_pps",
    "dispersion_fraction",
    "alpha",
    "darknet_size",
}


def parse_config_text(text: str) -> DarknetConfig:
    cfg = DarknetConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key == "darknet_prefixes":
            try:
                cfg.darknet_prefixes = [
                    ipaddress.IPv4Network(part.strip()) for part in value.split(",") if part.strip()
                ]
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from exc
        elif key == "darknet_size":
            continue
        else:
            try:
                setattr(cfg, key, float(value))
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {key} must be numeric") from exc
    return validate_config(cfg)


def load_config(path) -> DarknetConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def compute_timeout(
    darknet_size: int,
    total_ipv4: int = TOTAL_IPV4,
    rate_pps: float = 100.0,
    safety_factor: float = 1.0,
) -> float:
    """Seconds a full-IPv4 scan at rate_pps needs between hits on this darknet.

    A scanner sweeping the whole v4 space at rate_pps lands on a block of
    darknet_size addresses once every (total_ipv4 / darknet_size) / rate_pps
    seconds on average; safety_factor widens that to absorb rate jitter.
    """
    if darknet_size <= 0 or total_ipv4 <= 0:
        raise ValueError("address space sizes must be positive")
    if rate_pps <= 0 or safety_factor <= 0:
        raise ValueError("rate_pps and safety_factor must be positive")
    return safety_factor * (total_ipv4 / darknet_size) / rate_pps


def slash24_of(ip: int) -> int:
    return ip & 0xFFFFFF00


def count_slash24s(ips: Iterable[int]) -> int:
    return len({ip & 0xFFFFFF00 for ip in ips})
