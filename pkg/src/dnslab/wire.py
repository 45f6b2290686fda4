"""Minimal RFC 1035 message model and wire codec.

Only what the channels exercise: one question, A/NULL/TXT query types,
NOERROR/NXDOMAIN responses with optional answer records.  Name compression
pointers are followed on decode and never emitted.
"""

import re
import struct
from dataclasses import dataclass, field

from .errors import (
    BadLabelLength,
    InvalidName,
    NameTooLong,
    TruncatedMessage,
    UnsupportedType,
)

QTYPE_A = 1
QTYPE_NULL = 10
QTYPE_TXT = 16
QTYPES = {QTYPE_A: "A", QTYPE_NULL: "NULL", QTYPE_TXT: "TXT"}
QTYPE_BY_NAME = {v: k for k, v in QTYPES.items()}
QCLASS_IN = 1

NOERROR = 0
NXDOMAIN = 3
RCODES = {NOERROR: "NOERROR", NXDOMAIN: "NXDOMAIN"}

MAX_LABEL = 63
MAX_NAME = 253  # presentation octets; wire form adds two
MAX_RDATA = 255

_LABEL_RE = re.compile(r"[A-Za-z0-9](?:[A-Za-z0-9-]{0,61}[A-Za-z0-9])?")
_HEADER = struct.Struct("!HHHHHH")
_QTAIL = struct.Struct("!HH")
_RRTAIL = struct.Struct("!HHIH")

FLAG_QR = 0x8000
FLAG_AA = 0x0400
FLAG_RD = 0x0100


def check_label(label):
    if not label:
        raise InvalidName("empty label")
    if len(label) > MAX_LABEL:
        raise InvalidName(f"label of {len(label)} octets exceeds {MAX_LABEL}")
    if not _LABEL_RE.fullmatch(label):
        raise InvalidName(f"label {label!r} is not letters/digits/hyphen "
                          "with no leading or trailing hyphen")


@dataclass(frozen=True)
class Fqdn:
    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        for lab in self.labels:
            check_label(lab)
        text = ".".join(self.labels)
        if len(text) > MAX_NAME:
            raise NameTooLong(f"name of {len(text)} octets exceeds {MAX_NAME}")
        object.__setattr__(self, "_text", text)

    @classmethod
    def parse(cls, text):
        text = text.rstrip(".")
        return cls(tuple(text.split("."))) if text else cls(())

    @property
    def text(self):
        return self._text

    def __str__(self):
        return self.text

    def child(self, label, check=True):
        """This name with ``label`` prepended; only the new label is checked."""
        if check:
            check_label(label)
        text = label + "." + self._text if self.labels else label
        if len(text) > MAX_NAME:
            raise NameTooLong(f"name of {len(text)} octets exceeds {MAX_NAME}")
        name = object.__new__(Fqdn)
        object.__setattr__(name, "labels", (label,) + self.labels)
        object.__setattr__(name, "_text", text)
        return name

    def endswith(self, other):
        n = len(other.labels)
        return n == 0 or tuple(x.lower() for x in self.labels[-n:]) == tuple(
            x.lower() for x in other.labels)


def build_fqdn(lld, domain):
    if isinstance(domain, str):
        domain = Fqdn.parse(domain)
    return Fqdn((lld,) + domain.labels)


@dataclass(frozen=True)
class DnsQuery:
    id: int
    qname: Fqdn
    qtype: int = QTYPE_A

    def __post_init__(self):
        if self.qtype not in QTYPES:
            raise UnsupportedType(f"qtype {self.qtype}", self.id, self.qname, self.qtype)
        if not 0 <= self.id < 1 << 16:
            raise ValueError(f"id {self.id} outside 16 bits")


@dataclass(frozen=True)
class DnsResponse:
    id: int
    qname: Fqdn
    qtype: int = QTYPE_A
    rcode: int = NXDOMAIN
    answers: tuple = field(default=())  # (rtype, rdata bytes)

    def __post_init__(self):
        if self.rcode not in RCODES:
            raise ValueError(f"unsupported rcode {self.rcode}")
        if not self.answers:
            return
        object.__setattr__(self, "answers", tuple((t, bytes(d)) for t, d in self.answers))
        if self.rcode == NXDOMAIN and self.answers:
            raise ValueError("NXDOMAIN responses carry no answers")
        for rtype, data in self.answers:
            if rtype not in QTYPES:
                raise UnsupportedType(f"answer type {rtype}", self.id, self.qname, rtype)
            if len(data) > MAX_RDATA:
                raise ValueError(f"answer of {len(data)} octets exceeds {MAX_RDATA}")
            if rtype == QTYPE_A and len(data) != 4:
                raise ValueError("A records carry exactly 4 octets")


def _encode_name(name):
    out = bytearray()
    for lab in name.labels:
        raw = lab.encode("ascii")
        out.append(len(raw))
        out += raw
    out.append(0)
    return bytes(out)


def _encode_rdata(rtype, data):
    if rtype == QTYPE_TXT:
        return bytes([len(data)]) + data
    return data


def encode_message(msg):
    if isinstance(msg, DnsQuery):
        header = _HEADER.pack(msg.id, FLAG_RD, 1, 0, 0, 0)
        return header + _encode_name(msg.qname) + _QTAIL.pack(msg.qtype, QCLASS_IN)
    flags = FLAG_QR | FLAG_AA | FLAG_RD | msg.rcode
    qname = _encode_name(msg.qname)
    out = bytearray(_HEADER.pack(msg.id, flags, 1, len(msg.answers), 0, 0))
    out += qname + _QTAIL.pack(msg.qtype, QCLASS_IN)
    for rtype, data in msg.answers:
        rdata = _encode_rdata(rtype, data)
        out += qname + _RRTAIL.pack(rtype, QCLASS_IN, 0, len(rdata)) + rdata
    return bytes(out)


def _need(buf, off, n):
    if off + n > len(buf):
        raise TruncatedMessage(f"need {n} octets at offset {off}, have {len(buf) - off}")


def _decode_name(buf, off):
    """Return (labels, offset after the name in the original stream)."""
    labels = []
    end = None
    hops = 0
    total = 0
    while True:
        _need(buf, off, 1)
        n = buf[off]
        if n & 0xC0 == 0xC0:
            _need(buf, off, 2)
            ptr = ((n & 0x3F) << 8) | buf[off + 1]
            if end is None:
                end = off + 2
            hops += 1
            if hops > 64 or ptr >= len(buf):
                raise BadLabelLength("compression pointer loop or out of range")
            off = ptr
            continue
        if n & 0xC0:
            raise BadLabelLength(f"reserved label type 0x{n:02x}")
        off += 1
        if n == 0:
            break
        _need(buf, off, n)
        try:
            labels.append(buf[off:off + n].decode("ascii"))
        except UnicodeDecodeError as exc:
            raise InvalidName("non-ASCII label") from exc
        total += n + 1
        if total > MAX_NAME + 1:
            raise NameTooLong("encoded name exceeds 255 octets")
        off += n
    return labels, (end if end is not None else off)


def decode_message(buf):
    buf = bytes(buf)
    _need(buf, 0, _HEADER.size)
    qid, flags, qd, an, _ns, _ar = _HEADER.unpack_from(buf, 0)
    if qd != 1:
        raise UnsupportedType(f"{qd} questions; exactly one is modeled", qid)
    labels, off = _decode_name(buf, _HEADER.size)
    _need(buf, off, _QTAIL.size)
    qtype, _qclass = _QTAIL.unpack_from(buf, off)
    off += _QTAIL.size
    qname = Fqdn(tuple(labels))
    if qtype not in QTYPES:
        raise UnsupportedType(f"qtype {qtype}", qid, qname, qtype)
    if not flags & FLAG_QR:
        return DnsQuery(qid, qname, qtype)
    rcode = flags & 0xF
    if rcode not in RCODES:
        raise UnsupportedType(f"rcode {rcode}", qid, qname, qtype)
    answers = []
    for _ in range(an):
        _, off = _decode_name(buf, off)
        _need(buf, off, _RRTAIL.size)
        rtype, _cls, _ttl, rdlen = _RRTAIL.unpack_from(buf, off)
        off += _RRTAIL.size
        _need(buf, off, rdlen)
        rdata = buf[off:off + rdlen]
        off += rdlen
        if rtype not in QTYPES:
            raise UnsupportedType(f"answer type {rtype}", qid, qname, rtype)
        if rtype == QTYPE_TXT:
            if not rdata or rdata[0] != len(rdata) - 1:
                raise TruncatedMessage("TXT character-string length mismatch")
            rdata = rdata[1:]
        answers.append((rtype, rdata))
    try:
        return DnsResponse(qid, qname, qtype, rcode, tuple(answers))
    except ValueError as exc:
        raise BadLabelLength(str(exc)) from exc
