import math
import random
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnslab.client import ClientConfig, Constant, InterArrival
from dnslab.codec import B32_ALPHABET, encode_payload
from dnslab.detect import (
    DEFAULT_RAMPS,
    Thresholds,
    TraceStats,
    compute_stats,
    generate_benign_trace,
    otsu_separation,
    report,
    score_trace,
    shannon_entropy,
    window_scores,
    windows_csv,
)
from dnslab.errors import ConfigError, TraceTooShort
from dnslab.sim import QUERY_SENT, NetConfig, TraceEvent, matching_behavior, run_simulation


def tunnel_trace(seed, mode="nxdomain", delay=None, size=2000, **kw):
    payload = random.Random(seed).randbytes(size)
    cs = encode_payload(payload, rng=random.Random(seed))
    cfg = ClientConfig(mode=mode, delay=delay or Constant(1000), **kw)
    trace, _ = run_simulation(cfg, cs, matching_behavior(mode), NetConfig(jitter=5, seed=seed))
    return trace


def sent(names, gap=100.0):
    return [TraceEvent(i * gap, QUERY_SENT, i, n, None) for i, n in enumerate(names)]


def test_entropy_single_symbol_is_zero():
    stats = compute_stats(sent(["aaaa.example.com"] * 10))
    assert stats.label_entropy == 0.0


def test_entropy_uniform_32_symbols_is_five():
    assert shannon_entropy(B32_ALPHABET * 7) == pytest.approx(5.0)
    stats = compute_stats(sent([B32_ALPHABET + ".x.com", B32_ALPHABET[::-1] + ".x.com"]))
    assert stats.label_entropy == pytest.approx(5.0)


@settings(max_examples=100, deadline=None)
@given(st.text(min_size=1, max_size=300))
def test_entropy_bounds(text):
    assert 0.0 <= shannon_entropy(text) <= math.log2(len(set(text))) + 1e-9


def test_too_short():
    with pytest.raises(TraceTooShort):
        compute_stats(sent(["a.b"]))
    with pytest.raises(TraceTooShort):
        compute_stats([])


def test_stats_ratios_in_range():
    stats = compute_stats(tunnel_trace(1))
    for name in ("nxdomain_ratio", "unique_lld_ratio"):
        assert 0.0 <= getattr(stats, name) <= 1.0
    assert all(math.isfinite(v) for v in stats.to_dict().values())


def test_all_zero_stats_score_zero():
    assert score_trace(TraceStats()) == (0.0, [])


def test_nxresponder_trace_is_flagged():
    rep = report(tunnel_trace(3))
    assert rep["stats"]["nxdomain_ratio"] == 1.0
    assert rep["flagged"] and "nxdomain_ratio" in rep["triggered"]


def test_benign_trace_not_flagged():
    for seed in range(5):
        assert not report(generate_benign_trace(seed=seed))["flagged"]


def test_tunnel_entropy_beats_benign_in_pairs():
    for seed in range(5):
        t = compute_stats(tunnel_trace(seed)).label_entropy
        b = compute_stats(generate_benign_trace(seed=seed)).label_entropy
        assert t > b


def test_median_scores_ordered_per_mode():
    benign = [score_trace(compute_stats(generate_benign_trace(seed=s)))[0] for s in range(8)]
    for mode in ("prefetch", "nxdomain", "blackhole"):
        tun = [score_trace(compute_stats(tunnel_trace(s, mode)))[0] for s in range(8)]
        assert statistics.median(tun) > statistics.median(benign)


def test_interarrival_more_bimodal_than_constant():
    inter = compute_stats(tunnel_trace(4, delay=InterArrival(1000, 500), size=600,
                                       uplink_random_bits=40))
    const = compute_stats(tunnel_trace(4, size=600))
    assert inter.interarrival_bimodality > const.interarrival_bimodality


def test_otsu_examples():
    assert otsu_separation([5.0] * 10) == 0.0
    assert otsu_separation([1.0] * 10 + [9.0] * 10) == pytest.approx(1.0)
    assert 0.5 < otsu_separation([1, 2, 1, 2, 9, 10, 9, 10]) < 1.0


stat_values = st.floats(0, 100, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.builds(TraceStats, queries=st.integers(2, 10**4), query_rate=stat_values,
                 nxdomain_ratio=st.floats(0, 1), unique_lld_ratio=st.floats(0, 1),
                 mean_label_len=stat_values, label_entropy=st.floats(0, 6),
                 interarrival_cv=stat_values, interarrival_bimodality=st.floats(0, 1)),
       st.sampled_from(sorted(DEFAULT_RAMPS)), st.floats(0, 50))
def test_score_monotone(stats, name, bump):
    before, _ = score_trace(stats)
    d = stats.to_dict()
    d[name] += bump
    after, _ = score_trace(TraceStats(**d))
    assert 0.0 <= before <= after <= 1.0


def test_thresholds_from_dict():
    th = Thresholds.from_dict({"flag_at": 0.3, "ramps": {
        "query_rate": {"low": 1, "high": 2, "weight": 1.0}}})
    assert th.flag_at == 0.3 and th.ramps["query_rate"] == (1.0, 2.0, 1.0)
    assert th.ramps["label_entropy"] == DEFAULT_RAMPS["label_entropy"]
    with pytest.raises(ConfigError):
        Thresholds.from_dict({"ramps": {"bogus": [0, 1, 1]}})
    with pytest.raises(ConfigError):
        Thresholds.from_dict({"ramps": {"query_rate": [2, 1, 1]}})
    with pytest.raises(ConfigError):
        Thresholds.from_dict({"flag": 1})


def test_window_csv():
    trace = tunnel_trace(5, size=4000)
    rows = window_scores(trace, window_s=30)
    assert rows and all(r["queries"] >= 2 for r in rows)
    text = windows_csv(rows)
    lines = text.strip().splitlines()
    assert lines[0] == "start_ms,queries,score,flagged"
    assert len(lines) == len(rows) + 1


def test_benign_generator_deterministic():
    a = generate_benign_trace(seed=7)
    assert a == generate_benign_trace(seed=7)
    assert a != generate_benign_trace(seed=8)
    assert sum(1 for e in a if e.kind == QUERY_SENT) == 600
