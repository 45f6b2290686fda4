import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnslab.errors import (
    BadLabelLength,
    DnsLabError,
    InvalidName,
    NameTooLong,
    TruncatedMessage,
    UnsupportedType,
)
from dnslab.wire import (
    NOERROR,
    NXDOMAIN,
    QTYPE_A,
    QTYPE_NULL,
    QTYPE_TXT,
    DnsQuery,
    DnsResponse,
    Fqdn,
    build_fqdn,
    decode_message,
    encode_message,
)


def test_query_layout_a_b():
    wire = encode_message(DnsQuery(0, Fqdn.parse("a.b"), QTYPE_A))
    assert wire[:12] == bytes([0, 0, 0x01, 0x00, 0, 1, 0, 0, 0, 0, 0, 0])
    assert wire[12:] == bytes([1, ord("a"), 1, ord("b"), 0, 0, 1, 0, 1])


def test_response_flags():
    wire = encode_message(DnsResponse(0x1234, Fqdn.parse("x.y"), QTYPE_A, NXDOMAIN))
    qid, flags, qd, an = struct.unpack("!HHHH", wire[:8])
    assert (qid, qd, an) == (0x1234, 1, 0)
    assert flags & 0x8000 and flags & 0x0400 and flags & 0xF == 3


def test_lld_of_62_plus_domain_is_75_octets():
    name = build_fqdn("a" * 62, Fqdn.parse("mydomain.com"))
    assert len(name.text) == 75


def test_four_63_labels_too_long():
    with pytest.raises(NameTooLong):
        Fqdn(("a" * 63,) * 4 + ("com",))
    with pytest.raises(NameTooLong):
        build_fqdn("b" * 63, Fqdn(("a" * 63,) * 3))


def test_hyphen_rules():
    for bad in ("-abc", "abc-", "a_b", "", "a" * 64):
        with pytest.raises(InvalidName):
            build_fqdn(bad, "mydomain.com")
    assert build_fqdn("a-b", "mydomain.com").text == "a-b.mydomain.com"


def test_253_boundary():
    labels = ("a" * 63,) * 3 + ("b" * 61,)
    assert len(Fqdn(labels).text) == 253
    with pytest.raises(NameTooLong):
        Fqdn(labels[:-1] + ("b" * 62,))


def test_short_input_truncated():
    with pytest.raises(TruncatedMessage):
        decode_message(b"\x00" * 11)


def test_unsupported_qtype():
    wire = bytearray(encode_message(DnsQuery(7, Fqdn.parse("a.b"), QTYPE_A)))
    wire[-3] = 28  # AAAA
    with pytest.raises(UnsupportedType) as exc:
        decode_message(bytes(wire))
    assert exc.value.qtype == 28 and exc.value.query_id == 7


def test_nxdomain_with_answers_rejected():
    with pytest.raises(ValueError):
        DnsResponse(1, Fqdn.parse("a.b"), QTYPE_A, NXDOMAIN, ((QTYPE_A, b"\x01\x02\x03\x04"),))


def test_compression_pointer_followed():
    q = encode_message(DnsQuery(1, Fqdn.parse("abc.example"), QTYPE_A))
    hdr = bytearray(q[:12])
    hdr[2] |= 0x80  # QR
    hdr[7] = 1      # ANCOUNT
    body = q[12:]
    rr = b"\xc0\x0c" + struct.pack("!HHIH", QTYPE_A, 1, 60, 4) + b"\x0a\x00\x00\x01"
    msg = decode_message(bytes(hdr) + body + rr)
    assert msg.answers == ((QTYPE_A, b"\x0a\x00\x00\x01"),)


def test_pointer_loop_rejected():
    hdr = struct.pack("!HHHHHH", 1, 0x0100, 1, 0, 0, 0)
    with pytest.raises(BadLabelLength):
        decode_message(hdr + b"\xc0\x0c" + b"\x00\x01\x00\x01")


names = st.lists(st.from_regex(r"[A-Za-z0-9](?:[A-Za-z0-9-]{0,20}[A-Za-z0-9])?", fullmatch=True),
                 min_size=1, max_size=6).map(tuple)


@st.composite
def messages(draw):
    qid = draw(st.integers(0, 0xFFFF))
    qname = Fqdn(draw(names))
    qtype = draw(st.sampled_from([QTYPE_A, QTYPE_NULL, QTYPE_TXT]))
    if draw(st.booleans()):
        return DnsQuery(qid, qname, qtype)
    rcode = draw(st.sampled_from([NOERROR, NXDOMAIN]))
    answers = ()
    if rcode == NOERROR:
        rtype = draw(st.sampled_from([QTYPE_A, QTYPE_NULL, QTYPE_TXT]))
        size = 4 if rtype == QTYPE_A else draw(st.integers(0, 255))
        answers = tuple((rtype, draw(st.binary(min_size=size, max_size=size)))
                        for _ in range(draw(st.integers(0, 3))))
    return DnsResponse(qid, qname, qtype, rcode, answers)


@settings(max_examples=500, deadline=None)
@given(messages())
def test_roundtrip(msg):
    assert decode_message(encode_message(msg)) == msg


def _random_message(rng):
    alnum = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
    labels = []
    for _ in range(rng.randint(1, 5)):
        n = rng.randint(1, 63)
        lab = [rng.choice(alnum + "-") for _ in range(n)]
        lab[0], lab[-1] = rng.choice(alnum), rng.choice(alnum)
        labels.append("".join(lab))
    qname = Fqdn(tuple(labels[:3]))
    qtype = rng.choice([QTYPE_A, QTYPE_NULL, QTYPE_TXT])
    qid = rng.getrandbits(16)
    if rng.random() < 0.5:
        return DnsQuery(qid, qname, qtype)
    if rng.random() < 0.5:
        return DnsResponse(qid, qname, qtype, NXDOMAIN)
    answers = []
    for _ in range(rng.randint(0, 3)):
        rtype = rng.choice([QTYPE_A, QTYPE_NULL, QTYPE_TXT])
        size = 4 if rtype == QTYPE_A else rng.randint(0, 255)
        answers.append((rtype, rng.randbytes(size)))
    return DnsResponse(qid, qname, qtype, NOERROR, tuple(answers))


def test_roundtrip_ten_thousand_random_messages():
    rng = random.Random(1035)
    for _ in range(10_000):
        msg = _random_message(rng)
        assert decode_message(encode_message(msg)) == msg


@settings(max_examples=1000, deadline=None)
@given(st.binary(max_size=120))
def test_fuzz_decoder_raises_only_own_errors(blob):
    try:
        decode_message(blob)
    except DnsLabError:
        pass


@settings(max_examples=300, deadline=None)
@given(messages(), st.data())
def test_fuzz_mutated_messages(msg, data):
    wire = bytearray(encode_message(msg))
    for _ in range(data.draw(st.integers(1, 4))):
        i = data.draw(st.integers(0, len(wire) - 1))
        wire[i] = data.draw(st.integers(0, 255))
    cut = data.draw(st.integers(0, len(wire)))
    try:
        decode_message(bytes(wire[:cut]))
    except DnsLabError:
        pass
