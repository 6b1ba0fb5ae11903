"""Streaming reconstruction of logical scan events from darknet packets.

A logical event is everything one source sends at one (port, traffic type)
without pausing longer than the quiet-period timeout. The builder keeps one
open state per active key, closes a key's event when a new packet for that
key arrives after the timeout, and sweeps the whole table every half timeout
of stream time so idle keys cannot pin memory. A closed event's end_ts is the
timestamp of its last packet; a gap of exactly the timeout does NOT split.

Packets must arrive roughly in time order. Arrivals older than the watermark
minus the reorder slack are dropped and counted, never folded into state, so
a garbled capture cannot corrupt event boundaries.
"""
from __future__ import annotations

import json
from typing import Iterable, Iterator, List, Optional

from .fingerprint import DEFAULT_RULES, FingerprintRules, ProbeTool, fingerprint_packet
from .hll import Hll
from .model import DarknetConfig, DarknetEvent, EventKey, PacketMeta, US_PER_S
from .pcap import classify_traffic_type

# Darknets up to this many addresses track destinations exactly; above it the
# per-event sets would dominate memory and a 1% sketch is fine.
EXACT_DST_THRESHOLD = 2 ** 20


class _OpenEvent:
    __slots__ = (
        "key", "start_ts", "last_ts", "pkt_count",
        "dst_exact", "dst_sketch", "zmap_pkts", "masscan_pkts", "other_pkts",
    )

    def __init__(self, key: EventKey, ts: int, exact: bool):
        self.key = key
        self.start_ts = ts
        self.last_ts = ts
        self.pkt_count = 0
        self.dst_exact: Optional[set] = set() if exact else None
        self.dst_sketch: Optional[Hll] = None if exact else Hll()
        self.zmap_pkts = 0
        self.masscan_pkts = 0
        self.other_pkts = 0


def unique_dst_count(state: _OpenEvent, darknet_size: int) -> int:
    """Distinct destinations of an open event, clamped to its hard bounds.

    The sketch path may drift a little, so the result is clamped into
    [1, min(pkt_count, darknet_size)] which always holds for the true value.
    """
    if state.dst_exact is not None:
        n = len(state.dst_exact)
    else:
        n = state.dst_sketch.estimate()
    return max(1, min(n, state.pkt_count, darknet_size))


class EventBuilder:
    """One streaming pass: feed packets in, collect closed DarknetEvents out.

    Conservation holds at all times once flush() has run:
    packets_in == dropped_non_scanning + out_of_order + sum of event pkt_count.
    """

    def __init__(
        self,
        cfg: DarknetConfig,
        reorder_slack_s: float = 0.0,
        exact_threshold: int = EXACT_DST_THRESHOLD,
        rules: FingerprintRules = DEFAULT_RULES,
    ):
        if cfg.darknet_size <= 0:
            raise ValueError("config not validated: darknet_size unset")
        self.cfg = cfg
        self.timeout_us = round(cfg.event_timeout_s * US_PER_S)
        self.slack_us = round(reorder_slack_s * US_PER_S)
        self.sweep_interval_us = max(1, self.timeout_us // 2)
        self.exact_mode = cfg.darknet_size <= exact_threshold
        self.rules = rules
        self.open_events: dict[EventKey, _OpenEvent] = {}
        self.watermark: Optional[int] = None
        self._next_sweep: Optional[int] = None
        self.packets_in = 0
        self.dropped_non_scanning = 0
        self.out_of_order = 0
        self.events_emitted = 0
        self.pkts_emitted = 0

    def _close(self, state: _OpenEvent) -> DarknetEvent:
        ev = DarknetEvent(
            key=state.key,
            start_ts=state.start_ts,
            end_ts=state.last_ts,
            pkt_count=state.pkt_count,
            unique_dst_count=unique_dst_count(state, self.cfg.darknet_size),
            zmap_pkts=state.zmap_pkts,
            masscan_pkts=state.masscan_pkts,
            other_pkts=state.other_pkts,
        )
        self.events_emitted += 1
        self.pkts_emitted += ev.pkt_count
        return ev

    def _sweep(self, now_us: int) -> List[DarknetEvent]:
        deadline = now_us - self.timeout_us
        expired = [st for st in self.open_events.values() if st.last_ts < deadline]
        if not expired:
            return []
        expired.sort(key=lambda st: st.key)
        for st in expired:
            del self.open_events[st.key]
        return [self._close(st) for st in expired]

    def ingest_packet(self, p: PacketMeta) -> List[DarknetEvent]:
        """Fold one packet in; returns any events this arrival closed."""
        self.packets_in += 1
        ttype = classify_traffic_type(p)
        if ttype is None:
            self.dropped_non_scanning += 1
            return []
        ts = p.ts_us
        wm = self.watermark
        if wm is None:
            self.watermark = ts
            self._next_sweep = ts + self.sweep_interval_us
        elif ts < wm - self.slack_us:
            self.out_of_order += 1
            return []
        elif ts > wm:
            self.watermark = ts

        closed: List[DarknetEvent] = []
        if ts >= self._next_sweep:
            closed = self._sweep(ts)
            self._next_sweep = ts + self.sweep_interval_us

        key = EventKey(p.src_ip, p.dst_port if p.dst_port is not None else 0, ttype)
        state = self.open_events.get(key)
        if state is not None and state.last_ts < ts - self.timeout_us:
            # quiet period exceeded strictly: this arrival starts a new event
            del self.open_events[key]
            closed.append(self._close(state))
            state = None
        if state is None:
            state = _OpenEvent(key, ts, self.exact_mode)
            self.open_events[key] = state
        state.pkt_count += 1
        if ts > state.last_ts:
            state.last_ts = ts
        elif ts < state.start_ts:
            # slack-admitted stragglers may predate the first packet seen
            state.start_ts = ts
        if state.dst_exact is not None:
            state.dst_exact.add(p.dst_ip)
        else:
            state.dst_sketch.add_int(p.dst_ip)
        tool = fingerprint_packet(p, self.rules)
        if tool is ProbeTool.ZMAP:
            state.zmap_pkts += 1
        elif tool is ProbeTool.MASSCAN:
            state.masscan_pkts += 1
        else:
            state.other_pkts += 1
        return closed

    def ingest(self, packets: Iterable[PacketMeta]) -> Iterator[DarknetEvent]:
        """Stream packets through, yielding events as they close."""
        for p in packets:
            yield from self.ingest_packet(p)

    def flush(self, end_of_stream_ts: Optional[int] = None) -> List[DarknetEvent]:
        """Close every open event, ordered by ascending key.

        end_of_stream_ts is accepted for callers that track capture bounds but
        does not change any event: end_ts is always the last packet folded in.
        """
        remaining = sorted(self.open_events.values(), key=lambda st: st.key)
        self.open_events.clear()
        return [self._close(st) for st in remaining]


def write_event_log(path, events: Iterable[DarknetEvent]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(ev.to_json_line())
            fh.write("\n")
            count += 1
    return count


def read_event_log(path) -> Iterator[DarknetEvent]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield DarknetEvent.from_json_line(line)
