import json
import random

import pytest

from dnslab.client import ClientConfig, Constant, InterArrival
from dnslab.codec import BASE64_DNS, TransformPipeline, encode_payload
from dnslab.errors import ConfigError
from dnslab.server import BehaviorKind, ServerBehavior
from dnslab.sim import (
    DROPPED,
    QUERY_DELIVERED,
    QUERY_SENT,
    TIMEOUT,
    NetConfig,
    Trace,
    TraceEvent,
    apply_middlebox,
    bit_error_rate,
    matching_behavior,
    max_outstanding,
    read_trace,
    run_simulation,
)

PAYLOAD = bytes(range(125))


def run(payload=PAYLOAD, pipeline=TransformPipeline(), lld=50, **kw):
    cfg = kw.pop("cfg", ClientConfig(lld_size=lld))
    cs = encode_payload(payload, pipeline, lld, session_id=kw.pop("sid", 1))
    return run_simulation(cfg, cs, kw.pop("behavior", None), kw.pop("net", None),
                          pipeline=pipeline, payload=payload, **kw)


def test_four_chunk_schedule():
    trace, out = run()
    assert out.delivered and out.bytes == 125
    # last send at 3000 ms, plus one 20 ms round trip
    assert out.duration_ms == 3020.0
    sends = [e.t_ms for e in trace if e.kind == QUERY_SENT]
    assert sends == [0.0, 1000.0, 2000.0, 3000.0]


def test_total_loss_fails_delivery():
    cfg = ClientConfig(max_retries=2, timeout=500)
    trace, out = run(cfg=cfg, net=NetConfig(loss=1.0))
    assert not out.delivered and out.error == "DeliveryFailed"
    assert sorted(out.client_failed) == [0, 1, 2, 3]
    kinds = {e.kind for e in trace}
    assert kinds <= {QUERY_SENT, DROPPED, TIMEOUT} and QUERY_SENT in kinds
    assert out.retransmits == 8


def test_same_seed_same_trace():
    net = NetConfig(jitter=20, loss=0.2, seed=11)
    cfg = ClientConfig(timeout=800, max_retries=6)
    a, _ = run(bytes(2000), cfg=cfg, net=net)
    b, _ = run(bytes(2000), cfg=cfg, net=net)
    assert a.to_jsonl() == b.to_jsonl()
    c, _ = run(bytes(2000), cfg=cfg, net=NetConfig(jitter=20, loss=0.2, seed=12))
    assert c.to_jsonl() != a.to_jsonl()


def test_trace_schema(tmp_path):
    trace, _ = run()
    path = tmp_path / "t.jsonl"
    trace.write(path)
    lines = path.read_text().splitlines()
    for line in lines:
        d = json.loads(line)
        assert list(d) == ["t_ms", "kind", "seq", "qname", "rcode"]
        assert isinstance(d["t_ms"], float)
    events = read_trace(path)
    assert Trace.from_events(events).to_jsonl() == trace.to_jsonl()


def test_causality_and_order():
    net = NetConfig(base_latency=7, jitter=30, loss=0.1, seed=3)
    trace, _ = run(bytes(3000), cfg=ClientConfig(timeout=600, max_retries=8), net=net)
    times = [e.t_ms for e in trace]
    assert times == sorted(times)
    sent = {}
    for e in trace:
        if e.kind == QUERY_SENT:
            sent.setdefault((e.seq, e.qname), []).append(e.t_ms)
        elif e.kind == QUERY_DELIVERED:
            assert sent.get((e.seq, e.qname)), "delivered without a send"
            assert e.t_ms >= min(sent[(e.seq, e.qname)]) + 7.0


@pytest.mark.parametrize("period,lld,pipeline,expect", [
    (1000, 50, TransformPipeline(), 31.25),
    (500, 50, TransformPipeline(), 62.5),
    (1000, 20, TransformPipeline(), 12.5),
    # 40 chars carry 30 bytes, but '+' and '/' cost two chars: 2 of 64 symbols
    (1000, 40, TransformPipeline(text_encoding=BASE64_DNS), 30.0 / (1 + 2 / 64)),
])
def test_throughput_law(period, lld, pipeline, expect):
    payload = random.Random(period + lld).randbytes(int(expect * 300))
    cfg = ClientConfig(delay=Constant(period), lld_size=lld)
    _, out = run(payload, pipeline, lld, cfg=cfg)
    assert out.delivered
    assert abs(out.throughput - expect) / expect < 0.02


def test_middlebox_bounds():
    rng = random.Random(0)
    assert apply_middlebox(12.5, NetConfig(), rng) == 12.5
    vals = [apply_middlebox(0.0, NetConfig(middlebox_delay=400), rng) for _ in range(2000)]
    assert 0 <= min(vals) and max(vals) <= 400 and 150 < sum(vals) / len(vals) < 250


def test_small_middlebox_keeps_timing_clean():
    cfg = ClientConfig(downlink="timing")
    beh = ServerBehavior(BehaviorKind.TIMING_DOWNLINK, random_bits=1000)
    _, out = run(bytes(300), cfg=cfg, behavior=beh, net=NetConfig(middlebox_delay=20, seed=4))
    assert len(out.downlink_sent) == 1000 and out.downlink_ber == 0.0


def test_storage_downlink_ber_tracks_loss():
    cfg = ClientConfig(downlink="storage", delay=Constant(100), timeout=80)
    beh = ServerBehavior(BehaviorKind.STORAGE_DOWNLINK, random_bits=10_000)
    # 312500 zero bytes -> 10^4 chunks, so every carrier has its own seq
    _, out = run(bytes(312_500), cfg=cfg, behavior=beh, net=NetConfig(loss=0.1, seed=8))
    # a 1 survives only if query and response both get through: BER = 0.5 * 0.19
    assert abs(out.downlink_ber - 0.095) <= 0.015
    assert out.retransmits == 0


def test_lost_query_costs_one_bit_only():
    # carriers cycle through few chunks; a loss must not shift later bits
    cfg = ClientConfig(downlink="storage", delay=Constant(100), timeout=80)
    beh = ServerBehavior(BehaviorKind.STORAGE_DOWNLINK, random_bits=2000)
    _, out = run(bytes(300), cfg=cfg, behavior=beh, net=NetConfig(loss=0.05, seed=8))
    assert out.downlink_ber < 0.2


def test_wire_mode_identical():
    net = NetConfig(jitter=5, seed=2)
    a, _ = run(bytes(500), net=net)
    b, _ = run(bytes(500), net=net, wire=True)
    assert a.to_jsonl() == b.to_jsonl()


def test_blackhole_cap_and_slowdown():
    cfg_b = ClientConfig(mode="blackhole", delay=Constant(100))
    cfg_n = ClientConfig(mode="nxdomain", delay=Constant(100))
    payload = bytes(2000)
    tb, ob = run(payload, cfg=cfg_b, behavior=matching_behavior("blackhole"))
    tn, on = run(payload, cfg=cfg_n, behavior=matching_behavior("nxdomain"))
    assert ob.delivered and on.delivered
    assert max_outstanding(tb) == ob.max_outstanding == 8
    assert ob.throughput < on.throughput


def test_uplink_in_simulation():
    cfg = ClientConfig(delay=InterArrival(1000, 500), uplink_random_bits=200)
    _, out = run(bytes(100), cfg=cfg, net=NetConfig(jitter=20, seed=5))
    assert out.uplink_ber == 0.0 and len(out.uplink_sent) == 200


def test_bit_error_rate():
    assert bit_error_rate([1, 0, 1, 1], [1, 1, 1]) == 0.5
    assert bit_error_rate([0, 1], [0, None]) == 0.5
    assert bit_error_rate([], []) == 0.0


def test_net_config_validation():
    with pytest.raises(ConfigError):
        NetConfig(loss=1.5)
    with pytest.raises(ConfigError):
        NetConfig(jitter=-1)


def test_max_outstanding_from_events():
    ev = [TraceEvent(0, QUERY_SENT, 0), TraceEvent(1, QUERY_SENT, 1),
          TraceEvent(2, TIMEOUT, 0), TraceEvent(3, QUERY_SENT, 2)]
    assert max_outstanding(ev) == 2
