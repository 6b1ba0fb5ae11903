import random
from datetime import date

import pytest

from darklens.feeds import AckedList, RdnsMap
from darklens.impact import (
    EmptyAhSetError,
    IMPACT_CSV_FIELDS,
    ImpactBin,
    ImpactSeries,
    NoFlowsForDayError,
    RouterImpact,
    SERIES_CSV_FIELDS,
    acked_impact,
    ah_presence,
    flag_high_load_bins,
    flow_impact,
    normalize_per_slash24,
    protocol_breakdown_darknet,
    protocol_breakdown_flows,
    stream_impact,
    write_impact_csv,
    write_series_csv,
)
from darklens.model import (
    DarknetEvent,
    Direction,
    EventKey,
    FlowRecord,
    Protocol,
    TrafficType,
    ip_to_int,
)
from helpers import US, mk_pkt

JUNE1 = date(2022, 6, 1)
JUNE2 = date(2022, 6, 2)
DAY0_US = 1654041600 * US

AH_IP = ip_to_int("198.18.0.1")
OTHER_IP = ip_to_int("100.64.0.1")


def _flow(src=AH_IP, sampled=1, denom=1000, router="router-1", ts_us=DAY0_US + 5,
          protocol=Protocol.TCP, flags=0x02):
    if protocol is Protocol.TCP:
        sport, dport = 51000, 23
    elif protocol is Protocol.UDP:
        sport, dport, flags = 51000, 53, None
    else:
        sport = dport = flags = None
    return FlowRecord(
        router_id=router, ts_us=ts_us, direction=Direction.INGRESS, src_ip=src,
        dst_ip=ip_to_int("192.0.2.10"), protocol=protocol, src_port=sport,
        dst_port=dport, sampled_pkts=sampled, sampling_denominator=denom,
        tcp_flags=flags,
    )


class TestFlowImpact:
    def test_inversion_and_fraction(self):
        flows = [
            _flow(sampled=3),                 # 3000 est, aggressive
            _flow(sampled=2),                 # 2000 est, aggressive
            _flow(src=OTHER_IP, sampled=5),   # 5000 est, benign
        ]
        res = flow_impact(flows, {AH_IP}, JUNE1)
        imp = res["router-1"]
        assert imp.ah_pkts_est == 5000
        assert imp.total_pkts_est == 10000
        assert imp.fraction == 0.5

    def test_routers_kept_separate(self):
        flows = [_flow(), _flow(router="router-2", src=OTHER_IP)]
        res = flow_impact(flows, {AH_IP}, JUNE1)
        assert res["router-1"].fraction == 1.0
        assert res["router-2"].fraction == 0.0

    def test_mixed_denominators(self):
        flows = [_flow(sampled=1, denom=1000), _flow(src=OTHER_IP, sampled=10, denom=100)]
        imp = flow_impact(flows, {AH_IP}, JUNE1)["router-1"]
        assert (imp.ah_pkts_est, imp.total_pkts_est) == (1000, 2000)

    def test_only_requested_day_counted(self):
        flows = [_flow(), _flow(ts_us=DAY0_US + 86_400 * US, src=OTHER_IP)]
        imp = flow_impact(flows, {AH_IP}, JUNE1)["router-1"]
        assert imp.total_pkts_est == 1000
        assert flow_impact(flows, {AH_IP}, JUNE2)["router-1"].fraction == 0.0

    def test_no_flows_for_day_raises(self):
        with pytest.raises(NoFlowsForDayError):
            flow_impact([_flow()], {AH_IP}, JUNE2)

    def test_empty_ah_set_raises(self):
        with pytest.raises(EmptyAhSetError):
            flow_impact([_flow()], set(), JUNE1)

    def test_yearly_scale_fraction(self):
        # Magnitudes seen at a mid-size transit provider: ~5.85% of all
        # packets attributable to aggressive scanners.
        imp = RouterImpact(ah_pkts_est=20_400_000_000, total_pkts_est=348_700_000_000)
        assert imp.fraction == pytest.approx(0.0585, abs=0.0002)

    def test_zero_total_reports_zero(self):
        assert RouterImpact(0, 0).fraction == 0.0


class TestAckedImpact:
    def _acked(self, ips=()):
        acked = AckedList()
        for ip in ips:
            acked.ips.add(ip)
        return acked

    def test_empty_acked_subset_is_zero_not_error(self):
        res = acked_impact([_flow()], {AH_IP}, self._acked(), None, JUNE1)
        imp = res["router-1"]
        assert imp.ah_pkts_est == 0
        assert imp.total_pkts_est == 1000

    def test_acked_member_counted(self):
        res = acked_impact([_flow()], {AH_IP}, self._acked([AH_IP]), RdnsMap(), JUNE1)
        assert res["router-1"].fraction == 1.0

    def test_acked_non_ah_source_not_counted(self):
        # Acked but not aggressive: outside the set under test.
        flows = [_flow(), _flow(src=OTHER_IP)]
        res = acked_impact(flows, {AH_IP}, self._acked([OTHER_IP]), None, JUNE1)
        assert res["router-1"].ah_pkts_est == 0


class TestStreamImpact:
    def test_binning_and_gap_fill(self):
        pkts = [
            mk_pkt(0, "198.18.0.1", "10.0.0.1"),
            mk_pkt(1, "100.64.0.1", "10.0.0.2"),
            mk_pkt(2 * US + 1, "198.18.0.1", "10.0.0.3"),  # bin 2; bin 1 is silent
        ]
        series = stream_impact(pkts, {AH_IP}, bin_width_s=1.0)
        assert [b.bin_start_us for b in series.bins] == [0, US, 2 * US]
        assert [(b.ah_pkts, b.total_pkts) for b in series.bins] == [(1, 2), (0, 0), (1, 1)]
        assert series.empty_bin_flags() == [False, True, False]
        assert series.instantaneous_fractions() == [0.5, 0.0, 1.0]

    def test_cumulative_final_equals_total_ratio(self):
        rng = random.Random(31337)
        pkts = []
        t = 0
        for _ in range(5000):
            t += rng.randrange(0, 3 * US)
            src = AH_IP if rng.random() < 0.3 else OTHER_IP
            pkts.append(mk_pkt(t, src, "10.0.0.9"))
        series = stream_impact(pkts, {AH_IP}, bin_width_s=7.0)
        ah_total, total = series.totals()
        assert total == 5000
        assert series.cumulative_fractions()[-1] == ah_total / total

    def test_empty_stream_has_no_bins(self):
        series = stream_impact([], {AH_IP})
        assert series.bins == []
        assert series.cumulative_fractions() == []

    def test_bad_width_rejected(self):
        with pytest.raises(ValueError):
            stream_impact([], {AH_IP}, bin_width_s=0.0)

    def test_bins_contiguous_on_random_stream(self):
        rng = random.Random(5150)
        pkts = [mk_pkt(rng.randrange(0, 1000 * US), AH_IP, "10.0.0.1") for _ in range(200)]
        pkts.sort(key=lambda p: p.ts_us)
        series = stream_impact(pkts, {AH_IP}, bin_width_s=3.0)
        width = round(3.0 * US)
        for a, b in zip(series.bins, series.bins[1:]):
            assert b.bin_start_us - a.bin_start_us == width


class TestNormalization:
    def test_rate_per_slash24(self):
        series = ImpactSeries("v", 10.0, [ImpactBin(0, ah_pkts=1000, total_pkts=5000)])
        assert normalize_per_slash24(series, 50) == [2.0]

    def test_one_slash24(self):
        series = ImpactSeries("v", 1.0, [ImpactBin(0, ah_pkts=7, total_pkts=7)])
        assert normalize_per_slash24(series, 1) == [7.0]

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            normalize_per_slash24(ImpactSeries("v", 1.0), 0)


class TestHighLoadBins:
    def _series(self, cells):
        return ImpactSeries("v", 1.0, [ImpactBin(i * US, a, t) for i, (a, t) in enumerate(cells)])

    def test_requires_both_top_deciles(self):
        cells = [(0, 100)] * 8 + [(90, 100)] + [(5, 1000)]
        # bin 8 has top aggressive share but middling load; bin 9 top load but
        # low share; with n=10 the cut index is 9 so both metrics' cuts bind.
        series = self._series(cells)
        flagged = flag_high_load_bins(series)
        oracle = self._oracle(series)
        assert flagged == oracle

    @staticmethod
    def _oracle(series):
        n = len(series.bins)
        totals = [b.total_pkts for b in series.bins]
        fr = [
            (b.ah_pkts / b.total_pkts if b.total_pkts else 0.0) for b in series.bins
        ]
        k = (9 * n + 9) // 10
        tcut = sorted(totals)[k - 1]
        fcut = sorted(fr)[k - 1]
        return [i for i in range(n) if totals[i] >= tcut and fr[i] >= fcut]

    def test_ties_at_cut_included(self):
        cells = [(1, 10)] * 10
        assert flag_high_load_bins(self._series(cells)) == list(range(10))

    def test_empty(self):
        assert flag_high_load_bins(ImpactSeries("v", 1.0)) == []

    def test_matches_oracle_randomized(self):
        rng = random.Random(90210)
        for _ in range(300):
            n = rng.randrange(1, 60)
            cells = []
            for _ in range(n):
                total = rng.randrange(0, 50)
                ah = rng.randrange(0, total + 1)
                cells.append((ah, total))
            series = self._series(cells)
            assert flag_high_load_bins(series) == self._oracle(series)


def _ev(src, tt, pkts):
    port = 0 if tt is TrafficType.ICMP_ECHO_REQUEST else 23
    return DarknetEvent(
        key=EventKey(src, port, tt), start_ts=0, end_ts=1, pkt_count=pkts,
        unique_dst_count=1, zmap_pkts=pkts, masscan_pkts=0, other_pkts=0,
    )


class TestProtocolMix:
    def test_darknet_split(self):
        evs = [
            _ev(AH_IP, TrafficType.TCP_SYN, 904),
            _ev(AH_IP, TrafficType.UDP, 94),
            _ev(AH_IP, TrafficType.ICMP_ECHO_REQUEST, 2),
            _ev(OTHER_IP, TrafficType.UDP, 10_000),  # not in AH set
        ]
        mix = protocol_breakdown_darknet(evs, {AH_IP})
        assert mix.pct_tcp_syn == pytest.approx(90.4)
        assert mix.pct_udp == pytest.approx(9.4)
        assert mix.pct_icmp_echo == pytest.approx(0.2)
        assert mix.classified_pkts == 1000
        assert mix.unclassifiable_pkts == 0

    def test_flow_split_inverts_sampling(self):
        flows = [
            _flow(sampled=9, protocol=Protocol.TCP, flags=0x02),
            _flow(sampled=1, protocol=Protocol.UDP),
        ]
        mix = protocol_breakdown_flows(flows, {AH_IP})
        assert mix.pkts_tcp_syn == 9000
        assert mix.pkts_udp == 1000
        assert mix.pct_tcp_syn == 90.0

    def test_flow_split_unclassifiable_tcp(self):
        flows = [
            _flow(sampled=1, flags=0x12),   # SYN+ACK union: established
            _flow(sampled=1, flags=None),   # exporter gave no flags
            _flow(sampled=2, flags=0x02),
        ]
        mix = protocol_breakdown_flows(flows, {AH_IP})
        assert mix.unclassifiable_pkts == 2000
        assert mix.classified_pkts == 2000
        assert mix.pct_tcp_syn == 100.0

    def test_all_unclassifiable(self):
        mix = protocol_breakdown_flows([_flow(flags=None)], {AH_IP})
        assert mix.classified_pkts == 0
        assert mix.pct_tcp_syn == 0.0


class TestPresence:
    def test_share_of_ah_set_seen(self):
        ah = {AH_IP, AH_IP + 1, AH_IP + 2, AH_IP + 3}
        flows = [
            _flow(src=AH_IP), _flow(src=AH_IP + 1),
            _flow(src=AH_IP, router="router-2"),
            _flow(src=OTHER_IP, router="router-2"),
        ]
        pres = ah_presence(flows, ah)
        assert pres == {"router-1": 0.5, "router-2": 0.25}

    def test_empty_ah_raises(self):
        with pytest.raises(EmptyAhSetError):
            ah_presence([], set())


class TestCsvWriters:
    def test_impact_csv(self, tmp_path):
        p = tmp_path / "impact.csv"
        write_impact_csv(p, [("router-1", JUNE1, RouterImpact(5000, 10000))])
        lines = p.read_text().splitlines()
        assert lines[0] == ",".join(IMPACT_CSV_FIELDS)
        assert lines[1] == "router-1,2022-06-01,5000,10000,0.5"

    def test_series_csv(self, tmp_path):
        series = ImpactSeries("v", 1.0, [ImpactBin(0, 1, 2), ImpactBin(US, 0, 0)])
        p = tmp_path / "series.csv"
        write_series_csv(p, series, num_slash24=4)
        lines = p.read_text().splitlines()
        assert lines[0] == ",".join(SERIES_CSV_FIELDS)
        assert lines[1] == "0,1,2,0.5,0.5,0.25"
        assert lines[2].startswith(f"{US},0,0,0.0,0.5,")
