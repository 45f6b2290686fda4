import os
import random
import socket

import pytest

from dnslab.client import ClientConfig, Constant
from dnslab.codec import BASE64_DNS, TransformPipeline, encode_payload
from dnslab.errors import ConfigError, DeliveryFailed
from dnslab.live import LiveServer, check_bind, is_loopback, parse_addr, read_capture, send
from dnslab.server import BehaviorKind, ServerBehavior
from dnslab.sim import QUERY_DELIVERED, QUERY_SENT, RESPONSE_SENT, read_trace
from dnslab.wire import NXDOMAIN, QTYPE_A, DnsQuery, Fqdn, decode_message, encode_message

FAST = ClientConfig(delay=Constant(1), timeout=300, max_retries=5)


def free_port():
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def server(tmp_path):
    srv = LiveServer("127.0.0.1:0", out_dir=str(tmp_path / "srv"),
                     trace_path=str(tmp_path / "server.jsonl"),
                     capture_path=str(tmp_path / "cap.bin"))
    with srv:
        yield srv


def addr(srv):
    host, port = srv.address[:2]
    return f"{host}:{port}"


def test_addr_helpers():
    assert parse_addr("127.0.0.1:5353") == ("127.0.0.1", 5353)
    assert parse_addr("[::1]:53") == ("::1", 53)
    assert parse_addr("localhost", 99) == ("localhost", 99)
    assert is_loopback("127.0.0.5") and is_loopback("::1") and not is_loopback("10.0.0.1")
    with pytest.raises(ConfigError):
        check_bind("0.0.0.0", False)
    check_bind("0.0.0.0", True)
    with pytest.raises(ConfigError):
        parse_addr("host:port")


def test_loopback_one_kib(server, tmp_path):
    payload = random.Random(1).randbytes(1024)
    cs = encode_payload(payload, session_id=0x1234)
    events, client = send(addr(server), cs, FAST, trace_path=str(tmp_path / "client.jsonl"))
    assert client.finished.failed == ()
    path = server.written[0x1234]
    with open(path, "rb") as f:
        assert f.read() == payload
    kinds = {e.kind for e in read_trace(tmp_path / "client.jsonl")}
    assert QUERY_SENT in kinds
    assert {e.kind for e in read_trace(tmp_path / "server.jsonl")} >= {
        QUERY_DELIVERED, RESPONSE_SENT}


def test_loopback_base64_zlib(tmp_path):
    pl = TransformPipeline(compress="zlib", text_encoding=BASE64_DNS)
    payload = random.Random(2).randbytes(3000)
    with LiveServer("127.0.0.1:0", pipeline=pl, out_dir=str(tmp_path)) as srv:
        send(addr(srv), encode_payload(payload, pl, session_id=77), FAST)
        with open(srv.written[77], "rb") as f:
            assert f.read() == payload


def test_blackhole_over_loopback(tmp_path):
    cfg = ClientConfig(mode="blackhole", delay=Constant(5), timeout=100)
    with LiveServer("127.0.0.1:0", ServerBehavior(BehaviorKind.BLACKHOLE),
                    out_dir=str(tmp_path)) as srv:
        send(addr(srv), encode_payload(bytes(500), session_id=5), cfg)
        with open(srv.written[5], "rb") as f:
            assert f.read() == bytes(500)


def test_no_server_delivery_failed():
    cfg = ClientConfig(delay=Constant(1), timeout=50, max_retries=2)
    with pytest.raises(DeliveryFailed) as exc:
        send(f"127.0.0.1:{free_port()}", encode_payload(bytes(100), session_id=1), cfg,
             wall_limit=10_000)
    assert exc.value.failed == [0, 1, 2, 3]  # 160 chars -> 4 chunks


def test_noise_query_answered(server):
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.settimeout(2)
        s.sendto(encode_message(DnsQuery(9, Fqdn.parse("randomhost.example.org"), QTYPE_A)),
                 server.address)
        resp = decode_message(s.recv(512))
    assert resp.id == 9 and resp.rcode == NXDOMAIN
    assert server.channel.noise == 1 and not server.channel.sessions


def test_garbage_dropped_then_still_serving(server):
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.settimeout(2)
        s.sendto(b"\x00\x01garbage", server.address)
        s.sendto(encode_message(DnsQuery(3, Fqdn.parse("a.mydomain.com"), QTYPE_A)),
                 server.address)
        assert decode_message(s.recv(512)).id == 3


def test_capture_readable(server, tmp_path):
    send(addr(server), encode_payload(b"hi", session_id=2), FAST)
    server.log.close()
    recs = list(read_capture(tmp_path / "cap.bin"))
    assert [out for _, out, _ in recs] == [False, True]
    assert decode_message(recs[0][2]).qname.labels[0].startswith("aaac")
    assert os.path.getsize(tmp_path / "cap.bin") == sum(11 + len(d) for _, _, d in recs)
