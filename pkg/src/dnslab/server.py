"""Authoritative name server side of the channel.

``Server.handle_query`` decodes the leftmost label, stores chunks
idempotently, and picks a response according to the configured behavior.
Downlink behaviors consume one bit per data-bearing query; noise (unparseable
labels, browser duplicates) consumes none.
"""

import json
import logging
import math
import os
import threading
import warnings
from dataclasses import asdict, dataclass, field
from enum import Enum

from .client import InterArrival, IntervalOnOff, parse_bits
from .codec import DEFAULT_PIPELINE, parse_label
from .errors import (
    AmbiguousGap,
    ConfigError,
    CorruptChunk,
    DnsLabError,
    IncompleteSession,
)
from .wire import NXDOMAIN, DnsResponse, Fqdn

log = logging.getLogger(__name__)


class BehaviorKind(str, Enum):
    NXRESPONDER = "nxresponder"
    BLACKHOLE = "blackhole"
    STORAGE_DOWNLINK = "storage_downlink"
    TIMING_DOWNLINK = "timing_downlink"


@dataclass
class ServerBehavior:
    kind: BehaviorKind = BehaviorKind.NXRESPONDER
    bits: str = ""
    low: float = 40.0
    high: float = 240.0
    random_bits: int = 0

    def __post_init__(self):
        self.kind = BehaviorKind(self.kind)
        if self.low >= self.high:
            raise ConfigError("low delay must be below high delay")
        if self.bits and set(self.bits) - {"0", "1"}:
            raise ConfigError("bits must be a string of 0/1")
        if self.is_downlink and not (self.bits or self.random_bits):
            raise ConfigError(f"{self.kind.value} needs a non-empty bit string")

    @property
    def is_downlink(self):
        return self.kind in (BehaviorKind.STORAGE_DOWNLINK, BehaviorKind.TIMING_DOWNLINK)

    def resolved(self, rng):
        """Copy with ``random_bits`` drawn into ``bits``."""
        if self.bits or not self.random_bits:
            return self
        bits = "".join(str(rng.getrandbits(1)) for _ in range(self.random_bits))
        return ServerBehavior(self.kind, bits, self.low, self.high, 0)


@dataclass
class ReassemblySession:
    session_id: int
    total: int
    chunks: dict = field(default_factory=dict)
    first_seen: float = 0.0
    last_seen: float = 0.0
    arrival_times: list = field(default_factory=list)
    bit_cursor: int = 0
    stream_pos: int = -1
    corrupt: int = 0
    last_qname: str = None
    last_decision: tuple = None

    @property
    def complete(self):
        return len(self.chunks) == self.total

    def missing(self):
        return [s for s in range(self.total) if s not in self.chunks]

    def store(self, chunk):
        old = self.chunks.get(chunk.seq)
        if old is not None and old != chunk.data:
            self.corrupt += 1
            raise CorruptChunk(
                f"session {self.session_id:#x} seq {chunk.seq}: conflicting data")
        self.chunks[chunk.seq] = chunk.data

    def summary(self):
        return {
            "session_id": self.session_id,
            "total": self.total,
            "received": len(self.chunks),
            "missing": self.missing()[:50],
            "first_seen_ms": self.first_seen,
            "last_seen_ms": self.last_seen,
            "arrivals": len(self.arrival_times),
            "corrupt": self.corrupt,
        }


def reassemble(session, pipeline=DEFAULT_PIPELINE):
    if not session.complete:
        raise IncompleteSession(
            f"session {session.session_id:#x}: {len(session.chunks)}/{session.total} chunks")
    return pipeline.from_text("".join([session.chunks[s] for s in range(session.total)]))


class Server:
    """Channel server state; safe to call ``handle_query`` from many threads."""

    def __init__(self, behavior=None, pipeline=DEFAULT_PIPELINE, domain="mydomain.com",
                 idle_timeout=300_000.0, dedupe_window=50.0,
                 on_complete=None, on_expire=None):
        self.behavior = behavior or ServerBehavior()
        self.bits = parse_bits(self.behavior.bits)
        self.pipeline = pipeline
        self.domain = Fqdn.parse(domain) if isinstance(domain, str) else domain
        self._suffix = "." + self.domain.text.lower()
        self._depth = len(self.domain.labels)
        self.idle_timeout = idle_timeout
        self.dedupe_window = dedupe_window
        self.on_complete = on_complete
        self.on_expire = on_expire
        self.sessions = {}
        self.completed = {}
        self.errors = {}
        self.noise = 0
        self.queries = 0
        self._lock = threading.Lock()
        self._session_locks = {}

    def _session_lock(self, sid):
        lock = self._session_locks.get(sid)   # dict reads are atomic
        if lock is None:
            with self._lock:
                lock = self._session_locks.setdefault(sid, threading.Lock())
        return lock

    def _respond(self, query, delay):
        return DnsResponse(query.id, query.qname, query.qtype, NXDOMAIN), delay

    def _noise_reply(self, query):
        with self._lock:
            self.noise += 1
        if self.behavior.kind is BehaviorKind.BLACKHOLE:
            return None, 0.0
        return self._respond(query, 0.0)

    def _decide(self, session, seq):
        """Consume one downlink bit for ``session``: (respond?, delay).

        Query k carries seq k mod total, so the bit index is the k with that
        residue closest ahead of the last index seen. A lost query then costs
        its own bit rather than shifting every later one, and a late resend
        maps back onto its original slot.
        """
        kind = self.behavior.kind
        if kind is BehaviorKind.NXRESPONDER:
            return True, 0.0
        if kind is BehaviorKind.BLACKHOLE:
            return False, 0.0
        total = session.total
        if session.stream_pos < 0:
            k = seq
        else:
            base = session.stream_pos - (total - 1) // 2
            k = base + (seq - base - 1) % total + 1
            if k < 0:
                k += total
        session.stream_pos = max(session.stream_pos, k)
        session.bit_cursor += 1
        if k >= len(self.bits):
            return True, 0.0
        bit = self.bits[k]
        if kind is BehaviorKind.STORAGE_DOWNLINK:
            return bool(bit), 0.0
        return True, self.behavior.high if bit else self.behavior.low

    def parse(self, query):
        """Chunk carried by ``query``, or None for non-channel traffic."""
        labels = query.qname.labels
        if len(labels) <= self._depth:
            return None
        text = query.qname.text
        if not (text.endswith(self._suffix) or text.lower().endswith(self._suffix)):
            return None
        try:
            return parse_label(labels[0])
        except DnsLabError:
            return None

    def handle_query(self, query, now):
        """Return (DnsResponse or None, response delay in ms)."""
        with self._lock:
            self.queries += 1
        chunk = self.parse(query)
        if chunk is None:
            log.debug("noise query %s", query.qname)
            return self._noise_reply(query)
        sid = chunk.session_id
        qname = query.qname.text
        with self._session_lock(sid):
            session = self.sessions.get(sid)
            if session is None:
                session = ReassemblySession(sid, chunk.total, first_seen=now)
                self.sessions[sid] = session
            if chunk.total != session.total:
                session.corrupt += 1
                log.warning("session %#x: total %d disagrees with %d",
                            sid, chunk.total, session.total)
                return self._noise_reply(query)
            duplicate = (session.last_qname == qname
                         and now - session.last_seen <= self.dedupe_window)
            session.last_seen = now
            if duplicate:
                with self._lock:
                    self.noise += 1
                respond, delay = session.last_decision
            else:
                try:
                    session.store(chunk)
                except CorruptChunk as exc:
                    log.warning("%s", exc)
                session.arrival_times.append(now)
                session.last_qname = qname
                respond, delay = self._decide(session, chunk.seq)
                session.last_decision = (respond, delay)
                if (len(session.chunks) == session.total and sid not in self.completed
                        and sid not in self.errors):
                    self._finish(session)
        if not respond:
            return None, 0.0
        return self._respond(query, delay)

    def _finish(self, session):
        try:
            payload = reassemble(session, self.pipeline)
        except DnsLabError as exc:
            self.errors[session.session_id] = f"{type(exc).__name__}: {exc}"
            log.warning("session %#x failed to decode: %s", session.session_id, exc)
            return
        self.completed[session.session_id] = payload
        if self.on_complete is not None:
            self.on_complete(session, payload)

    def expire_idle(self, now):
        """Drop incomplete sessions idle for longer than ``idle_timeout``."""
        expired = []
        with self._lock:
            for sid, s in list(self.sessions.items()):
                if not s.complete and now - s.last_seen > self.idle_timeout:
                    expired.append(self.sessions.pop(sid))
                    self._session_locks.pop(sid, None)
        for s in expired:
            if self.on_expire is not None:
                self.on_expire(s)
        return expired


def write_payload(out_dir, session, payload):
    """Write the payload bytes plus a JSON sidecar; returns the payload path."""
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, f"session-{session.session_id:05x}")
    with open(stem + ".bin", "wb") as f:
        f.write(payload)
    meta = session.summary()
    meta["bytes"] = len(payload)
    meta["arrival_times_ms"] = session.arrival_times
    with open(stem + ".json", "w") as f:
        json.dump(meta, f, indent=2)
    return stem + ".bin"


def decode_uplink_timing(arrivals, delay, t0=None, method="anchored", guard=1.0):
    """Recover bits from query arrival times.

    InterArrival, ``method="gap"``: bit k = 1 iff gap k >= base + delta/2.

    InterArrival, ``method="anchored"`` (default): arrival k minus ``k * base``
    equals ``delta`` times the number of ones sent so far plus that query's
    one-sided network delay.  The delays sit in a band narrower than
    ``delta`` and bunch up at its low end, which pins the delay floor modulo
    ``delta`` (see ``delay_floor``).  Each count is then read independently,
    so one late query cannot shift the rest of the message.  ``guard`` ms
    of slack sits below the floor.

    IntervalOnOff: slot = round((t - t0) / interval); the last arrival is the
    terminator, so the message length is its slot index.
    """
    arrivals = sorted(arrivals)
    if isinstance(delay, IntervalOnOff):
        if t0 is None:
            raise ValueError("IntervalOnOff decoding needs the session start t0")
        if not arrivals:
            return []
        slots = [int(math.floor((t - t0) / delay.interval + 0.5)) for t in arrivals]
        n = slots[-1]
        occupied = set(slots[:-1])
        return [1 if k in occupied else 0 for k in range(n)]
    if not isinstance(delay, InterArrival):
        raise ValueError("uplink timing needs an InterArrival or IntervalOnOff delay")
    if len(arrivals) < 2:
        return []
    if method == "gap":
        bits, ambiguous = [], []
        for k in range(len(arrivals) - 1):
            gap = arrivals[k + 1] - arrivals[k]
            bits.append(1 if gap >= delay.base + delay.delta / 2 else 0)
            if min(abs(gap - delay.base), abs(gap - delay.base - delay.delta)) > delay.delta:
                ambiguous.append(k)
        _warn_ambiguous(ambiguous)
        return bits
    if method != "anchored":
        raise ValueError(f"unknown method {method!r}")
    bits, ambiguous = _anchored(arrivals, delay, guard)
    _warn_ambiguous(ambiguous)
    return bits


def delay_floor(residuals, period):
    """Phase (mod ``period``) where the one-sided delays start.

    Picks the residual from which the summed forward circular distance to
    all others is smallest; any later start would wrap the dense low end
    around by a full period.
    """
    phases = sorted(r % period for r in residuals)
    n = len(phases)
    total = sum(phases)
    best, start = None, phases[0]
    for j, p in enumerate(phases):
        cost = total - n * p + j * period
        if best is None or cost < best:
            best, start = cost, p
    return start


def _anchored(arrivals, delay, guard):
    d = delay.delta
    resid = [t - k * delay.base for k, t in enumerate(arrivals)]
    phase = delay_floor(resid, d)
    # the first query has count 0, so the floor lies within one delta below it
    floor = resid[0] - ((resid[0] - phase) % d) - guard
    counts = [int(math.floor((r - floor) / d)) for r in resid]
    bits, ambiguous = [], []
    for k in range(1, len(counts)):
        step = counts[k] - counts[k - 1]
        if step not in (0, 1):
            ambiguous.append(k - 1)
        bits.append(1 if step >= 1 else 0)
    return bits, ambiguous


def _warn_ambiguous(indices):
    if indices:
        warnings.warn(AmbiguousGap(
            f"{len(indices)} gaps far from both levels (first at {indices[:5]})"),
            stacklevel=3)


def behavior_dict(behavior):
    d = asdict(behavior)
    d["kind"] = behavior.kind.value
    return d
