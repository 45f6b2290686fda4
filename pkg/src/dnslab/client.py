"""Exfiltrating client model.

The client is a small state machine driven from outside (the simulator or the
live UDP loop).  It mirrors the browser's recursive ``setTimeout`` chain: each
timer tick schedules the next one before the current query blocks, so query
emission keeps its cadence regardless of responses.  Browser resolver limits
show up as the outstanding-request cap; excess sends wait FIFO for a slot.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

from .codec import render_label
from .errors import ConfigError, EmptyBitstring, UnknownSeq
from .wire import NOERROR, NXDOMAIN, QTYPE_BY_NAME, Fqdn, InvalidName, build_fqdn

log = logging.getLogger(__name__)

_EPS = 1e-6


class ChannelMode(str, Enum):
    PREFETCH = "prefetch"     # fire and forget
    NXDOMAIN = "nxdomain"     # blocks until NXDOMAIN (or timeout)
    BLACKHOLE = "blackhole"   # blocks until timeout


@dataclass(frozen=True)
class Constant:
    period: float = 1000.0

    def __post_init__(self):
        if self.period <= 0:
            raise ConfigError("period must be > 0")

    @property
    def tick(self):
        return self.period


@dataclass(frozen=True)
class InterArrival:
    """Bit b is sent as a gap of ``base + b * delta`` ms.

    Decodable when ``delta`` is at least four times the network jitter.
    """
    base: float = 1000.0
    delta: float = 500.0

    def __post_init__(self):
        if self.base <= 0 or self.delta <= 0:
            raise ConfigError("base and delta must be > 0")

    @property
    def tick(self):
        return self.base


@dataclass(frozen=True)
class IntervalOnOff:
    interval: float = 1000.0

    def __post_init__(self):
        if self.interval <= 0:
            raise ConfigError("interval must be > 0")

    @property
    def tick(self):
        return self.interval


DELAY_KINDS = {"constant": Constant, "interarrival": InterArrival, "interval": IntervalOnOff}


def delay_kind(delay):
    return next(k for k, cls in DELAY_KINDS.items() if isinstance(delay, cls))


@dataclass(frozen=True)
class NoiseFlags:
    www_prepend: bool = False
    duplicate_query: bool = False
    duplicate_count: int = 1


@dataclass
class ClientConfig:
    mode: ChannelMode = ChannelMode.NXDOMAIN
    delay: object = field(default_factory=Constant)
    outstanding_cap: int = 8
    timeout: float = 5000.0
    max_retries: int = 3
    noise: NoiseFlags = field(default_factory=NoiseFlags)
    domain: str = "mydomain.com"
    qtype: str = "A"
    lld_size: int = 50
    uplink_bits: str = ""
    uplink_random_bits: int = 0
    downlink: str = "none"          # none | storage | timing
    timing_threshold: float = 140.0
    min_queries: int = 0

    def __post_init__(self):
        self.mode = ChannelMode(self.mode)
        if self.outstanding_cap < 1:
            raise ConfigError("outstanding_cap must be >= 1")
        if self.timeout <= 0:
            raise ConfigError("timeout must be > 0")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.downlink not in ("none", "storage", "timing"):
            raise ConfigError(f"unknown downlink {self.downlink!r}")
        if self.qtype not in QTYPE_BY_NAME:
            raise ConfigError(f"unsupported qtype {self.qtype!r}")
        if self.uplink_bits and set(self.uplink_bits) - {"0", "1"}:
            raise ConfigError("uplink_bits must be a string of 0/1")
        try:
            Fqdn.parse(self.domain)
        except InvalidName as exc:
            raise ConfigError(f"bad domain: {exc}") from exc


class SendQuery(NamedTuple):
    index: int
    qname: str
    at: float
    resend: bool = False
    noise: bool = False


class TimedOut(NamedTuple):
    index: int
    at: float


class Finish(NamedTuple):
    at: float
    failed: tuple = ()


def parse_bits(bits):
    if isinstance(bits, str):
        return [int(c) for c in bits]
    return [int(b) for b in bits]


def encode_uplink_bits(bits, delay):
    """Send times (ms from the first query) that carry ``bits`` in timing.

    InterArrival emits n+1 queries whose n gaps carry the bits.  IntervalOnOff
    puts a query in slot k iff bit k is 1 and closes with a terminator query
    in slot n.
    """
    bits = parse_bits(bits)
    if not bits:
        raise EmptyBitstring("no bits to encode")
    if isinstance(delay, InterArrival):
        times = [0.0]
        for b in bits:
            times.append(times[-1] + delay.base + b * delay.delta)
        return times
    if isinstance(delay, IntervalOnOff):
        return [k * delay.interval for k, b in enumerate(bits) if b] + [
            len(bits) * delay.interval]
    raise ValueError("timing encoding needs an InterArrival or IntervalOnOff delay")


def decode_downlink_storage(responded):
    """bit k = 1 iff query k got a response before it timed out."""
    if isinstance(responded, dict):
        responded = [responded.get(k, False) for k in range(max(responded, default=-1) + 1)]
    return [1 if r else 0 for r in responded]


def decode_downlink_timing(pairs, threshold=140.0):
    """Threshold the client-measured response delay; None marks an erasure."""
    bits = []
    for pair in pairs:
        if pair is None:
            bits.append(None)
            continue
        before, after = pair
        elapsed = math.floor(after) - math.floor(before)
        bits.append(1 if elapsed >= threshold else 0)
    return bits


@dataclass
class ClientState:
    received: list
    outstanding: dict = field(default_factory=dict)   # index -> send time
    retry_counts: list = None
    timed_out: set = field(default_factory=set)
    failed: set = field(default_factory=set)
    responded: list = None                            # answered before timeout
    clock_pairs: dict = field(default_factory=dict)   # index -> (before, after) ms
    downlink_bits: list = field(default_factory=list)


class Client:
    def __init__(self, config, chunks, n_queries=0):
        self.config = config
        self.mode = config.mode
        self.labels = [render_label(c) for c in chunks]
        total = len(self.labels)
        domain = Fqdn.parse(config.domain)
        # rendered labels are LDH by construction; length is still checked
        self.names = [domain.child(lab, check=False) for lab in self.labels]
        self.fqdns = [n.text for n in self.names]
        self.qtype = QTYPE_BY_NAME[config.qtype]
        self.tick = config.delay.tick
        if config.uplink_bits:
            self.times = encode_uplink_bits(config.uplink_bits, config.delay)
            self.n = len(self.times)
            if total > self.n:
                raise ConfigError(
                    f"payload needs {total} queries but the timing message "
                    f"provides only {self.n} carriers")
        else:
            self.times = None
            self.n = max(total, config.min_queries, n_queries)
        self.state = ClientState(
            received=[False] * self.n,
            retry_counts=[0] * self.n,
            responded=[False] * self.n,
        )
        self.resends_enabled = (self.mode is ChannelMode.NXDOMAIN
                                and config.downlink != "storage")
        self.tracks_outstanding = self.mode is not ChannelMode.PREFETCH
        self.queue = deque()
        self.next_new = 0
        self.next_tick = self._scheduled(0)
        self.finished = None
        self.sent = [False] * self.n

    def _scheduled(self, k):
        if self.times is not None:
            return self.times[k]
        return k * self.tick

    def qname(self, k):
        return self.fqdns[k % len(self.fqdns)]

    def name(self, k):
        return self.names[k % len(self.names)]

    # -- timing -------------------------------------------------------------

    def next_wakeup(self):
        t = self.next_tick
        if self.tracks_outstanding and self.state.outstanding:
            d = next(iter(self.state.outstanding.values())) + self.config.timeout
            t = d if t is None else min(t, d)
        return t

    def plan_resends(self, now):
        """Timed-out, unanswered queries that still have retries left."""
        st = self.state
        if not st.timed_out and (not st.outstanding or next(iter(
                st.outstanding.values())) + self.config.timeout > now + _EPS):
            return []
        out = [k for k, t in st.outstanding.items()
               if t + self.config.timeout <= now + _EPS and not st.received[k]]
        cand = set(out) | st.timed_out
        return sorted(k for k in cand
                      if not st.received[k] and st.retry_counts[k] < self.config.max_retries)

    def next_action(self, now):
        actions = []
        self._expire(now, actions)
        while self.next_tick is not None and self.next_tick <= now + _EPS:
            self._on_tick(self.next_tick)
        self._flush(now, actions)
        self._check_finish(now, actions)
        return actions

    def _expire(self, now, actions):
        if not self.tracks_outstanding:
            return
        st = self.state
        limit = self.config.timeout
        # insertion order is send order, so the oldest entries come first
        while st.outstanding:
            k, t = next(iter(st.outstanding.items()))
            if t + limit > now + _EPS:
                break
            del st.outstanding[k]
            actions.append(TimedOut(k, t + limit))
            if st.received[k] or not self.resends_enabled:
                continue
            if st.retry_counts[k] < self.config.max_retries:
                st.timed_out.add(k)
            else:
                st.failed.add(k)

    def _on_tick(self, t):
        st = self.state
        if self.resends_enabled:
            for k in self.plan_resends(t):
                if k in st.outstanding:
                    continue
                st.retry_counts[k] += 1
                st.timed_out.discard(k)
                self.queue.append((k, True))
        if self.next_new < self.n:
            self.queue.append((self.next_new, False))
            self.next_new += 1
        if self.next_new < self.n:
            self.next_tick = self._scheduled(self.next_new)
        elif self.resends_enabled and (st.outstanding or st.timed_out or self.queue):
            self.next_tick = t + self.tick
        else:
            self.next_tick = None

    def _flush(self, now, actions):
        st = self.state
        cap = self.config.outstanding_cap
        while self.queue and (not self.tracks_outstanding or len(st.outstanding) < cap):
            k, resend = self.queue.popleft()
            if st.received[k] and resend:
                continue
            if self.tracks_outstanding:
                st.outstanding.pop(k, None)
                st.outstanding[k] = now
            self.sent[k] = True
            name = self.qname(k)
            actions.append(SendQuery(k, name, now, resend=resend))
            actions.extend(self._noise(k, name, now))

    def _noise(self, k, name, now):
        flags = self.config.noise
        out = []
        if flags.duplicate_query:
            out.extend(SendQuery(k, name, now, noise=True)
                       for _ in range(flags.duplicate_count))
        if flags.www_prepend and len(name) + 4 <= 253:
            out.append(SendQuery(k, "www." + name, now, noise=True))
        return out

    def _check_finish(self, now, actions):
        if self.finished is not None:
            return
        st = self.state
        if self.next_new < self.n or self.queue or st.outstanding:
            return
        if self.resends_enabled and any(
                st.retry_counts[k] < self.config.max_retries for k in st.timed_out):
            return
        failed = st.failed | {k for k in st.timed_out if not st.received[k]}
        self.finished = Finish(now, tuple(sorted(failed)))
        actions.append(self.finished)

    # -- responses ----------------------------------------------------------

    def mark_received(self, k, rcode, now):
        """Record a response for query ``k``; duplicates are idempotent."""
        st = self.state
        if not 0 <= k < self.n or not self.sent[k]:
            raise UnknownSeq(f"response for never-sent query {k}")
        if rcode in (NXDOMAIN, NOERROR):
            st.received[k] = True
            st.timed_out.discard(k)
            st.failed.discard(k)
        sent_at = st.outstanding.pop(k, None) if self.tracks_outstanding else None
        if sent_at is not None:
            st.responded[k] = True
            st.clock_pairs[k] = (math.floor(sent_at), math.floor(now))
        return st

    def on_response(self, k, rcode, now):
        try:
            self.mark_received(k, rcode, now)
        except UnknownSeq as exc:
            log.warning("%s", exc)
            return []
        # a response can only free a slot; ticks and deadlines have their own wakeups
        actions = []
        if self.queue:
            self._flush(now, actions)
        self._check_finish(now, actions)
        return actions

    # -- downlink -----------------------------------------------------------

    def downlink_bits(self):
        if self.config.downlink == "storage":
            bits = decode_downlink_storage(self.state.responded)
        elif self.config.downlink == "timing":
            pairs = [self.state.clock_pairs.get(k) for k in range(self.n)]
            bits = decode_downlink_timing(pairs, self.config.timing_threshold)
        else:
            bits = []
        self.state.downlink_bits = bits
        return bits
