"""Traffic impact of aggressive scanners, from sampled flows or raw packets.

Flow exports are 1:k packet-sampled, so every estimate here inverts the
sampling first (sampled_pkts * sampling_denominator) and only then forms
ratios. Attribution is by exact source address match against the blocklist
under test. The packet-stream path bins a capture into fixed windows and
tracks both instantaneous and cumulative aggressive fractions.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .enrich import match_acked
from .feeds import AckedList, RdnsMap
from .model import (
    FlowRecord,
    PacketMeta,
    Protocol,
    TCP_ACK,
    TCP_SYN,
    TrafficType,
    US_PER_S,
    utc_day,
)


class NoFlowsForDayError(ValueError):
    pass


class EmptyAhSetError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class RouterImpact:
    ah_pkts_est: int
    total_pkts_est: int

    @property
    def fraction(self) -> float:
        return self.ah_pkts_est / self.total_pkts_est if self.total_pkts_est else 0.0


def _accumulate_day(
    flows: Iterable[FlowRecord], members: Set[int], day: date
) -> Dict[str, Tuple[int, int]]:
    sums: Dict[str, List[int]] = {}
    for rec in flows:
        if utc_day(rec.ts_us) != day:
            continue
        cell = sums.setdefault(rec.router_id, [0, 0])
        est = rec.sampled_pkts * rec.sampling_denominator
        cell[1] += est
        if rec.src_ip in members:
            cell[0] += est
    return {router: (ah, total) for router, (ah, total) in sums.items()}


def flow_impact(
    flows: Iterable[FlowRecord], ah: Set[int], day: date
) -> Dict[str, RouterImpact]:
    """Estimated aggressive share of each router's traffic on one UTC day."""
    if not ah:
        raise EmptyAhSetError("flow_impact needs a nonempty AH set")
    sums = _accumulate_day(flows, ah, day)
    if not sums:
        raise NoFlowsForDayError(f"no flow records fall on {day.isoformat()}")
    return {router: RouterImpact(ah_est, total) for router, (ah_est, total) in sums.items()}


def acked_impact(
    flows: Iterable[FlowRecord],
    ah: Set[int],
    acked: AckedList,
    rdns: Optional[RdnsMap],
    day: date,
) -> Dict[str, RouterImpact]:
    """flow_impact restricted to the acknowledged subset of the AH set.

    An empty acknowledged subset is a legitimate outcome (nobody registered),
    reported as zero aggressive packets over the day's totals rather than an
    error.
    """
    if not ah:
        raise EmptyAhSetError("acked_impact needs a nonempty AH set")
    rdns = rdns or RdnsMap()
    subset = {ip for ip in ah if match_acked(ip, acked, rdns).acked}
    sums = _accumulate_day(flows, subset, day)
    if not sums:
        raise NoFlowsForDayError(f"no flow records fall on {day.isoformat()}")
    return {router: RouterImpact(ah_est, total) for router, (ah_est, total) in sums.items()}


@dataclass(slots=True)
class ImpactBin:
    bin_start_us: int
    ah_pkts: int = 0
    total_pkts: int = 0


@dataclass
class ImpactSeries:
    """Binned view of one vantage's packet stream against an AH set.

    Bins are contiguous, non-overlapping and ascending; interior windows with
    no traffic are materialized as zero bins so gaps stay visible.
    """

    vantage_id: str
    bin_width_s: float
    bins: List[ImpactBin] = field(default_factory=list)

    def instantaneous_fractions(self) -> List[float]:
        """Per-bin aggressive fraction; an empty bin reports 0 (see flags)."""
        return [b.ah_pkts / b.total_pkts if b.total_pkts else 0.0 for b in self.bins]

    def empty_bin_flags(self) -> List[bool]:
        return [b.total_pkts == 0 for b in self.bins]

    def cumulative_fractions(self) -> List[float]:
        """Prefix-sum fraction up to and including each bin.

        Integer prefix sums with one division per bin, so the last value is
        exactly total_ah / total_pkts.
        """
        out: List[float] = []
        ah_sum = 0
        total_sum = 0
        for b in self.bins:
            ah_sum += b.ah_pkts
            total_sum += b.total_pkts
            out.append(ah_sum / total_sum if total_sum else 0.0)
        return out

    def totals(self) -> Tuple[int, int]:
        return sum(b.ah_pkts for b in self.bins), sum(b.total_pkts for b in self.bins)


def stream_impact(
    pkts: Iterable[PacketMeta],
    ah: Set[int],
    bin_width_s: float = 1.0,
    vantage_id: str = "stream",
) -> ImpactSeries:
    if bin_width_s <= 0:
        raise ValueError("bin_width_s must be positive")
    width_us = round(bin_width_s * US_PER_S)
    counts: Dict[int, List[int]] = {}
    for p in pkts:
        idx = p.ts_us // width_us
        cell = counts.get(idx)
        if cell is None:
            cell = counts[idx] = [0, 0]
        cell[1] += 1
        if p.src_ip in ah:
            cell[0] += 1
    series = ImpactSeries(vantage_id=vantage_id, bin_width_s=bin_width_s)
    if not counts:
        return series
    for idx in range(min(counts), max(counts) + 1):
        ah_pkts, total = counts.get(idx, (0, 0))
        series.bins.append(ImpactBin(idx * width_us, ah_pkts, total))
    return series


def normalize_per_slash24(series: ImpactSeries, num_slash24: int) -> List[float]:
    """Aggressive packets per second per /24 of monitored space, per bin."""
    if num_slash24 <= 0:
        raise ValueError("num_slash24 must be positive")
    return [b.ah_pkts / series.bin_width_s / num_slash24 for b in series.bins]


def flag_high_load_bins(series: ImpactSeries) -> List[int]:
    """Indexes of bins in the top decile of both load and aggressive share.

    Top decile means value >= the 90th-percentile order statistic (1-based
    index ceil(0.9 * n) of the ascending sort), so ties at the cut are
    included.
    """
    n = len(series.bins)
    if n == 0:
        return []
    totals = [b.total_pkts for b in series.bins]
    fractions = series.instantaneous_fractions()
    k = -(-9 * n // 10)  # ceil(0.9n) in exact integer arithmetic
    total_cut = sorted(totals)[k - 1]
    frac_cut = sorted(fractions)[k - 1]
    return [
        i
        for i in range(n)
        if totals[i] >= total_cut and fractions[i] >= frac_cut
    ]


@dataclass(frozen=True, slots=True)
class ProtocolMix:
    """Scanning-traffic split in percent, plus what could not be classified."""

    pct_tcp_syn: float
    pct_udp: float
    pct_icmp_echo: float
    pkts_tcp_syn: int
    pkts_udp: int
    pkts_icmp_echo: int
    classified_pkts: int
    unclassifiable_pkts: int


def _mix(tcp_syn: int, udp: int, icmp: int, unclassifiable: int) -> ProtocolMix:
    classified = tcp_syn + udp + icmp
    if classified == 0:
        return ProtocolMix(0.0, 0.0, 0.0, tcp_syn, udp, icmp, 0, unclassifiable)
    return ProtocolMix(
        pct_tcp_syn=100.0 * tcp_syn / classified,
        pct_udp=100.0 * udp / classified,
        pct_icmp_echo=100.0 * icmp / classified,
        pkts_tcp_syn=tcp_syn,
        pkts_udp=udp,
        pkts_icmp_echo=icmp,
        classified_pkts=classified,
        unclassifiable_pkts=unclassifiable,
    )


def protocol_breakdown_darknet(events, ah: Set[int]) -> ProtocolMix:
    """Packet split over the three scanning classes for AH darknet events."""
    counts = {TrafficType.TCP_SYN: 0, TrafficType.UDP: 0, TrafficType.ICMP_ECHO_REQUEST: 0}
    for ev in events:
        if ev.key.src_ip in ah:
            counts[ev.key.traffic_type] += ev.pkt_count
    return _mix(
        counts[TrafficType.TCP_SYN],
        counts[TrafficType.UDP],
        counts[TrafficType.ICMP_ECHO_REQUEST],
        unclassifiable=0,
    )


def protocol_breakdown_flows(flows: Iterable[FlowRecord], ah: Set[int]) -> ProtocolMix:
    """Same split from sampled flows, inverted to pre-sampling estimates.

    A TCP flow is the SYN class when its flag union has SYN set and ACK clear.
    TCP flows without flags, or whose union says established traffic, cannot
    be assigned to a scanning class and are tallied separately.
    """
    tcp_syn = udp = icmp = unclassifiable = 0
    for rec in flows:
        if rec.src_ip not in ah:
            continue
        est = rec.sampled_pkts * rec.sampling_denominator
        if rec.protocol is Protocol.UDP:
            udp += est
        elif rec.protocol is Protocol.ICMP:
            icmp += est
        elif rec.tcp_flags is not None and rec.tcp_flags & TCP_SYN and not rec.tcp_flags & TCP_ACK:
            tcp_syn += est
        else:
            unclassifiable += est
    return _mix(tcp_syn, udp, icmp, unclassifiable)


def ah_presence(flows: Iterable[FlowRecord], ah: Set[int]) -> Dict[str, float]:
    """Share of the AH set each router observed as a source at all."""
    if not ah:
        raise EmptyAhSetError("ah_presence needs a nonempty AH set")
    seen: Dict[str, Set[int]] = {}
    for rec in flows:
        if rec.src_ip in ah:
            seen.setdefault(rec.router_id, set()).add(rec.src_ip)
    return {router: len(ips) / len(ah) for router, ips in seen.items()}


IMPACT_CSV_FIELDS = ["vantage_id", "date", "ah_pkts_est", "total_pkts_est", "fraction"]

SERIES_CSV_FIELDS = [
    "bin_start_ts", "ah_pkts", "total_pkts", "inst_fraction", "cum_fraction", "per_slash24_rate",
]


def write_impact_csv(path, rows: Iterable[Tuple[str, date, RouterImpact]]) -> None:
    """rows: (vantage_id, day, impact) triples, written in the order given."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(IMPACT_CSV_FIELDS)
        for vantage_id, day, imp in rows:
            writer.writerow(
                [vantage_id, day.isoformat(), imp.ah_pkts_est, imp.total_pkts_est, repr(imp.fraction)]
            )


def write_series_csv(path, series: ImpactSeries, num_slash24: int = 1) -> None:
    inst = series.instantaneous_fractions()
    cum = series.cumulative_fractions()
    rates = normalize_per_slash24(series, num_slash24)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SERIES_CSV_FIELDS)
        for b, i_frac, c_frac, rate in zip(series.bins, inst, cum, rates):
            writer.writerow(
                [b.bin_start_us, b.ah_pkts, b.total_pkts, repr(i_frac), repr(c_frac), repr(rate)]
            )
