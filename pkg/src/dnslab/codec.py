"""Payload <-> DNS label chunking.

Pipeline on the way out: compress, encrypt, text-encode, split, sequence.
Decoding runs the same stages backwards.  Each rendered label is a fixed
12 character base32 header (session id, seq, total-1; 20 bits each) followed
by up to 51 data characters, so a label never exceeds 63 octets.
"""

import base64
import binascii
import hashlib
import hmac
import random
import re
import zlib
from dataclasses import dataclass, field

from .errors import (
    CorruptChunk,
    IncompleteSession,
    IntegrityFailure,
    InvalidLldSize,
    LabelOverflow,
    MalformedHeader,
    PayloadTooLarge,
)

MAX_LABEL = 63
HEADER_LEN = 12
FIELD_CHARS = 4
FIELD_BITS = 20
MAX_FIELD = 1 << FIELD_BITS
MAX_LLD_SIZE = MAX_LABEL - HEADER_LEN
DEFAULT_LLD_SIZE = 50

B32_ALPHABET = "abcdefghijklmnopqrstuvwxyz234567"
_B32_INDEX = {c: i for i, c in enumerate(B32_ALPHABET)}
# our alphabet -> the digits int(..., 32) understands
_TO_INT32 = str.maketrans(B32_ALPHABET, "0123456789abcdefghijklmnopqrstuv")

BASE32_LOWER = "base32-lower"
BASE64_DNS = "base64-dns"
TEXT_ENCODINGS = (BASE32_LOWER, BASE64_DNS)

_B32_RE = re.compile(r"[a-z2-7]*")
_B64DNS_RE = re.compile(r"[A-Za-z0-9]*(?:-[ab][A-Za-z0-9]*)*")
_LDH_RE = re.compile(r"[A-Za-z0-9-]*")
# base32 without padding: only these residues are reachable
_B32_VALID_TAIL = {0, 2, 4, 5, 7}


# -- byte stages ------------------------------------------------------------

def _keystream(key, iv, n):
    out = bytearray()
    counter = 0
    while len(out) < n:
        out += hmac.new(key, iv + counter.to_bytes(8, "big"), hashlib.sha256).digest()
        counter += 1
    return bytes(out[:n])


def siv_encrypt(key, data):
    """Deterministic keyed stream transform with a 16-byte synthetic IV.

    The IV is an HMAC of the plaintext, so it doubles as the integrity tag
    and the output is reproducible for a fixed key (seeded simulations rely
    on that).
    """
    iv = hmac.new(key, b"siv" + data, hashlib.sha256).digest()[:16]
    ks = _keystream(key, iv, len(data))
    return iv + bytes(a ^ b for a, b in zip(data, ks))


def siv_decrypt(key, blob):
    if len(blob) < 16:
        raise IntegrityFailure("ciphertext shorter than its tag")
    iv, body = blob[:16], blob[16:]
    ks = _keystream(key, iv, len(body))
    data = bytes(a ^ b for a, b in zip(body, ks))
    expect = hmac.new(key, b"siv" + data, hashlib.sha256).digest()[:16]
    if not hmac.compare_digest(iv, expect):
        raise IntegrityFailure("tag mismatch (wrong key or corrupted data)")
    return data


def _zlib_decompress(blob):
    try:
        return zlib.decompress(blob)
    except zlib.error as exc:
        raise IntegrityFailure(f"zlib: {exc}") from exc


COMPRESSORS = {
    "identity": (lambda b: b, lambda b: b),
    "zlib": (lambda b: zlib.compress(b, 9), _zlib_decompress),
}
CIPHERS = ("identity", "siv")


# -- text stages ------------------------------------------------------------

def b32_encode(data):
    return base64.b32encode(data).decode("ascii").rstrip("=").lower()


def b32_decode(text):
    if not _B32_RE.fullmatch(text):
        bad = next(c for c in text if c not in _B32_INDEX)
        raise CorruptChunk(f"character {bad!r} outside base32-lower alphabet")
    if len(text) % 8 not in _B32_VALID_TAIL:
        raise CorruptChunk(f"base32 text length {len(text)} is not decodable")
    if not text:
        return b""
    # int() parses power-of-two bases in linear time
    nbytes = len(text) * 5 // 8
    spare = len(text) * 5 - nbytes * 8
    value = int(text.translate(_TO_INT32), 32)
    if value & ((1 << spare) - 1):
        raise CorruptChunk("base32 text has non-zero trailing bits")
    return (value >> spare).to_bytes(nbytes, "big")


def b64dns_encode(data):
    # '+' and '/' have no LDH counterpart; both become a hyphen escape
    s = base64.b64encode(data).decode("ascii").rstrip("=")
    return s.replace("+", "-a").replace("/", "-b")


def b64dns_decode(text):
    if not _B64DNS_RE.fullmatch(text):
        raise CorruptChunk("text outside the base64-dns alphabet")
    s = text.replace("-a", "+").replace("-b", "/")
    if len(s) % 4 == 1:
        raise CorruptChunk(f"base64 text length {len(s)} is not decodable")
    try:
        return base64.b64decode(s + "=" * (-len(s) % 4), validate=True)
    except binascii.Error as exc:
        raise CorruptChunk(str(exc)) from exc


TEXT_CODECS = {
    BASE32_LOWER: (b32_encode, b32_decode),
    BASE64_DNS: (b64dns_encode, b64dns_decode),
}

BITS_PER_CHAR = {BASE32_LOWER: 5, BASE64_DNS: 6}


@dataclass(frozen=True)
class TransformPipeline:
    compress: str = "identity"
    encrypt: str = "identity"
    key: bytes = b""
    text_encoding: str = BASE32_LOWER

    def __post_init__(self):
        if self.compress not in COMPRESSORS:
            raise ValueError(f"unknown compress stage {self.compress!r}")
        if self.encrypt not in CIPHERS:
            raise ValueError(f"unknown encrypt stage {self.encrypt!r}")
        if self.encrypt != "identity" and not self.key:
            raise ValueError("keyed encrypt stage needs a non-empty key")
        if self.text_encoding not in TEXT_CODECS:
            raise ValueError(f"unknown text encoding {self.text_encoding!r}")

    def to_text(self, payload):
        data = COMPRESSORS[self.compress][0](payload)
        if self.encrypt == "siv":
            data = siv_encrypt(self.key, data)
        return TEXT_CODECS[self.text_encoding][0](data)

    def from_text(self, text):
        data = TEXT_CODECS[self.text_encoding][1](text)
        if self.encrypt == "siv":
            data = siv_decrypt(self.key, data)
        return COMPRESSORS[self.compress][1](data)


DEFAULT_PIPELINE = TransformPipeline()


@dataclass(frozen=True)
class Chunk:
    session_id: int
    seq: int
    total: int
    data: str

    def __post_init__(self):
        if not 0 <= self.session_id < MAX_FIELD:
            raise ValueError(f"session_id={self.session_id} outside 20-bit range")
        if not 0 <= self.seq < MAX_FIELD:
            raise ValueError(f"seq={self.seq} outside 20-bit range")
        if not 1 <= self.total <= MAX_FIELD:
            raise ValueError(f"total={self.total} outside 1..2^20")
        if self.seq >= self.total:
            raise ValueError(f"seq {self.seq} >= total {self.total}")


@dataclass
class ChunkSet:
    chunks: list = field(default_factory=list)

    @property
    def session_id(self):
        return self.chunks[0].session_id

    @property
    def total(self):
        return self.chunks[0].total

    @property
    def text(self):
        return "".join(c.data for c in self.chunks)

    def labels(self):
        return [render_label(c) for c in self.chunks]

    def __len__(self):
        return len(self.chunks)

    def __iter__(self):
        return iter(self.chunks)


def split_text(text, lld_size, encoding=BASE32_LOWER):
    """Cut encoded text into pieces of at most ``lld_size`` characters.

    base32 splits on exact multiples.  base64-dns never ends a piece on the
    escape hyphen, since a label may not end with '-'.
    """
    if encoding != BASE64_DNS:
        return [text[i:i + lld_size] for i in range(0, len(text), lld_size)] or [""]
    pieces = []
    i = 0
    while i < len(text):
        end = min(i + lld_size, len(text))
        if text[end - 1] == "-":
            end -= 1
        pieces.append(text[i:end])
        i = end
    return pieces or [""]


def encode_payload(payload, pipeline=DEFAULT_PIPELINE, lld_size=DEFAULT_LLD_SIZE,
                   session_id=None, rng=None):
    """Encode ``payload`` into a ChunkSet of sequenced label-sized pieces.

    ``rng`` (a ``random.Random``) draws the session id when none is given;
    pass a seeded one for reproducible output.
    """
    min_size = 2 if pipeline.text_encoding == BASE64_DNS else 1
    if not min_size <= lld_size <= MAX_LLD_SIZE:
        raise InvalidLldSize(
            f"lld_size {lld_size} outside {min_size}..{MAX_LLD_SIZE} "
            f"for {pipeline.text_encoding}")
    text = pipeline.to_text(bytes(payload))
    pieces = split_text(text, lld_size, pipeline.text_encoding)
    if len(pieces) > MAX_FIELD:
        raise PayloadTooLarge(
            f"{len(pieces)} chunks needed, sequence field holds {MAX_FIELD}")
    if session_id is None:
        session_id = (rng or random.SystemRandom()).getrandbits(FIELD_BITS)
    total = len(pieces)
    return ChunkSet([Chunk(session_id, k, total, p) for k, p in enumerate(pieces)])


def decode_payload(chunks, pipeline=DEFAULT_PIPELINE):
    chunks = list(chunks)
    if not chunks:
        raise IncompleteSession("no chunks")
    total = chunks[0].total
    by_seq = {}
    for c in chunks:
        if c.total != total or c.session_id != chunks[0].session_id:
            raise CorruptChunk(f"chunk {c.seq} disagrees on session/total")
        if c.seq in by_seq and by_seq[c.seq] != c.data:
            raise CorruptChunk(f"seq {c.seq} seen with two different payloads")
        by_seq[c.seq] = c.data
    missing = [s for s in range(total) if s not in by_seq]
    if missing:
        raise IncompleteSession(f"missing seqs {missing[:10]} of {total}")
    text = "".join(by_seq[s] for s in range(total))
    return pipeline.from_text(text)


_PAIRS = [B32_ALPHABET[i >> 5] + B32_ALPHABET[i & 31] for i in range(1024)]
_HEADER_RE = re.compile(r"[a-z2-7]{12}")
_LABEL_FAST_RE = re.compile(r"([a-z2-7]{12})([A-Za-z0-9-]{0,51})")


def _field(value):
    return _PAIRS[value >> 10] + _PAIRS[value & 1023]


def render_label(chunk):
    # total is stored minus one so the all-'a' header is (0, 0, 1)
    label = (_field(chunk.session_id) + _field(chunk.seq)
             + _field(chunk.total - 1) + chunk.data)
    if len(label) > MAX_LABEL:
        raise LabelOverflow(f"label of {len(label)} octets exceeds {MAX_LABEL}")
    return label


def parse_label(label):
    m = _LABEL_FAST_RE.fullmatch(label)
    if m is None:
        return _parse_label_slow(label)
    digits = m.group(1).translate(_TO_INT32)
    seq = int(digits[4:8], 32)
    total = int(digits[8:12], 32) + 1
    if seq >= total:
        raise MalformedHeader(f"seq {seq} >= total {total}")
    # fields are 20 bits by construction, so skip re-validation
    chunk = object.__new__(Chunk)
    object.__setattr__(chunk, "__dict__", {
        "session_id": int(digits[0:4], 32), "seq": seq, "total": total,
        "data": m.group(2)})
    return chunk


def _parse_label_slow(label):
    if len(label) < HEADER_LEN:
        raise MalformedHeader(f"label {label!r} shorter than the {HEADER_LEN}-char header")
    if len(label) > MAX_LABEL:
        raise LabelOverflow(f"label of {len(label)} octets exceeds {MAX_LABEL}")
    header = label[:HEADER_LEN].lower()
    if not _HEADER_RE.fullmatch(header):
        raise MalformedHeader(f"header {header!r} outside base32-lower alphabet")
    data = label[HEADER_LEN:]
    if not _LDH_RE.fullmatch(data):
        raise CorruptChunk(f"data {data!r} has characters outside a-z, A-Z, 0-9, '-'")
    digits = header.translate(_TO_INT32)
    sid = int(digits[0:4], 32)
    seq = int(digits[4:8], 32)
    total = int(digits[8:12], 32) + 1
    if seq >= total:
        raise MalformedHeader(f"seq {seq} >= total {total}")
    return Chunk(sid, seq, total, data)
