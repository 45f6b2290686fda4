"""Seeded discrete-event simulator joining a Client and a Server.

The clock is integer microseconds.  Client reads see milliseconds (floored
where the client takes clock readings).  One ``random.Random`` drives the
whole network so a fixed seed reproduces the trace byte for byte.
"""

import heapq
import itertools
import json
import math
import random
from dataclasses import asdict, dataclass, field, replace

from .client import ChannelMode, Client, Finish, SendQuery, TimedOut, parse_bits
from .codec import DEFAULT_PIPELINE
from .errors import ConfigError
from .server import BehaviorKind, Server, ServerBehavior, decode_uplink_timing
from .wire import QTYPE_BY_NAME, RCODES, DnsQuery, Fqdn, decode_message, encode_message

QUERY_SENT = "QuerySent"
QUERY_DELIVERED = "QueryDelivered"
RESPONSE_SENT = "ResponseSent"
RESPONSE_DELIVERED = "ResponseDelivered"
DROPPED = "Dropped"
TIMEOUT = "Timeout"
KINDS = (QUERY_SENT, QUERY_DELIVERED, RESPONSE_SENT, RESPONSE_DELIVERED, DROPPED, TIMEOUT)

_WAKE, _Q_DELIVER, _R_SEND, _R_DELIVER = range(4)


@dataclass
class NetConfig:
    base_latency: float = 10.0   # ms, one way
    jitter: float = 0.0          # sigma of the half-normal extra delay, ms
    loss: float = 0.0            # per packet, each direction
    middlebox_delay: float = 0.0  # D: responses get uniform(0, D) extra ms
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss <= 1.0:
            raise ConfigError("loss must be in [0, 1]")
        if self.base_latency < 0 or self.jitter < 0 or self.middlebox_delay < 0:
            raise ConfigError("latency, jitter and middlebox delay must be >= 0")


def apply_middlebox(delay, net, rng):
    """Add the on-path timing perturbation, uniform in [0, D]."""
    if net.middlebox_delay <= 0:
        return delay
    return delay + rng.uniform(0.0, net.middlebox_delay)


@dataclass(frozen=True)
class TraceEvent:
    t_ms: float
    kind: str
    seq: int = None
    qname: str = ""
    rcode: str = None

    def to_json(self):
        return json.dumps({"t_ms": self.t_ms, "kind": self.kind, "seq": self.seq,
                           "qname": self.qname, "rcode": self.rcode})


class Trace:
    """Append-only event log; rows are (t_us, kind, seq, qname, rcode)."""

    def __init__(self, rows=None):
        self.rows = rows if rows is not None else []

    def add(self, t_us, kind, seq, qname, rcode=None):
        self.rows.append((t_us, kind, seq, qname, rcode))

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        for t, kind, seq, qname, rcode in self.rows:
            yield TraceEvent(t / 1000.0, kind, seq, qname, rcode)

    @property
    def events(self):
        return list(self)

    def to_jsonl(self):
        return "".join(ev.to_json() + "\n" for ev in self)

    def write(self, path):
        with open(path, "w") as f:
            f.write(self.to_jsonl())

    @classmethod
    def from_events(cls, events):
        return cls([(round(e.t_ms * 1000), e.kind, e.seq, e.qname, e.rcode) for e in events])


def read_trace(path):
    events = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                events.append(TraceEvent(float(d["t_ms"]), d["kind"], d.get("seq"),
                                         d.get("qname", ""), d.get("rcode")))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad trace line: {exc}") from exc
    return events


def max_outstanding(events):
    """Peak number of data queries sent but not yet answered or timed out."""
    rows = events.rows if isinstance(events, Trace) else (
        (e.t_ms, e.kind, e.seq, e.qname, e.rcode) for e in events)
    open_ = set()
    peak = 0
    for _t, kind, seq, _q, _r in rows:
        if seq is None:
            continue
        if kind == QUERY_SENT:
            open_.add(seq)
            if len(open_) > peak:
                peak = len(open_)
        elif kind == RESPONSE_DELIVERED or kind == TIMEOUT:
            open_.discard(seq)
    return peak


@dataclass
class Outcome:
    delivered: bool = False
    bytes: int = 0
    duration_ms: float = 0.0
    throughput: float = 0.0
    queries: int = 0
    retransmits: int = 0
    noise_queries: int = 0
    max_outstanding: int = 0
    client_failed: list = field(default_factory=list)
    error: str = None
    downlink_sent: list = field(default_factory=list)
    downlink_bits: list = field(default_factory=list)
    downlink_ber: float = None
    uplink_sent: list = field(default_factory=list)
    uplink_bits: list = field(default_factory=list)
    uplink_ber: float = None
    server_noise: int = 0

    def to_dict(self):
        return asdict(self)


def bit_error_rate(sent, got):
    """Fraction of positions where ``got`` differs; erasures and gaps count."""
    if not sent:
        return 0.0
    errors = sum(1 for k, b in enumerate(sent) if k >= len(got) or got[k] != b)
    return errors / len(sent)


def run_simulation(client_config, chunks, behavior=None, net=None,
                   pipeline=DEFAULT_PIPELINE, payload=None, wire=False,
                   max_events=50_000_000):
    """Run one session to completion; returns (Trace, Outcome).

    Downlink bits are agreed out of band: the client sends at least one query
    per server bit.  ``wire=True`` pushes every message through the RFC 1035
    codec on the way.
    """
    net = net or NetConfig()
    behavior = (behavior or ServerBehavior()).resolved(random.Random(f"downlink-{net.seed}"))
    if client_config.uplink_random_bits and not client_config.uplink_bits:
        bits_rng = random.Random(f"uplink-{net.seed}")
        client_config = replace(client_config, uplink_bits="".join(
            str(bits_rng.getrandbits(1)) for _ in range(client_config.uplink_random_bits)))
    rng = random.Random(net.seed)
    down = parse_bits(behavior.bits) if behavior.is_downlink else []
    client = Client(client_config, chunks, n_queries=len(down))
    server = Server(behavior, pipeline, client_config.domain,
                    dedupe_window=min(50.0, client_config.delay.tick / 2))
    qtype = QTYPE_BY_NAME[client_config.qtype]
    trace = Trace()
    add = trace.rows.append

    names = {}
    heap = []
    counter = itertools.count()
    wakes = set()
    state = {"finish": None, "complete": None}
    stats = {"queries": 0, "resends": 0, "noise": 0}
    base_us = net.base_latency * 1000.0
    sigma = net.jitter
    loss = net.loss
    sid = chunks.chunks[0].session_id if len(chunks) else None

    def transit():
        j = abs(rng.gauss(0.0, sigma)) if sigma > 0 else 0.0
        return base_us + j * 1000.0

    def push(t, kind, *args):
        heapq.heappush(heap, (t, next(counter), kind, args))

    def drive(actions, now):
        for a in actions:
            if type(a) is SendQuery:
                seq = None if a.noise else a.index
                add((now, QUERY_SENT, seq, a.qname, None))
                if a.noise:
                    stats["noise"] += 1
                else:
                    stats["queries"] += 1
                    stats["resends"] += a.resend
                if loss and rng.random() < loss:
                    add((now, DROPPED, seq, a.qname, None))
                    continue
                push(now + round(transit()), _Q_DELIVER, a.index, a.qname, a.noise)
            elif type(a) is TimedOut:
                add((now, TIMEOUT, a.index, client.qname(a.index), None))
            elif type(a) is Finish:
                state["finish"] = now
        w = client.next_wakeup()
        if w is not None:
            wu = math.ceil(w * 1000.0 - 1e-6)
            if wu < now:
                wu = now
            if wu not in wakes:
                wakes.add(wu)
                push(wu, _WAKE)

    def send_response(now, index, qname, noise, rcode):
        seq = None if noise else index
        add((now, RESPONSE_SENT, seq, qname, RCODES[rcode]))
        if loss and rng.random() < loss:
            add((now, DROPPED, seq, qname, RCODES[rcode]))
            return
        t = transit()
        if net.middlebox_delay > 0:
            t = apply_middlebox(t / 1000.0, net, rng) * 1000.0
        push(now + round(t), _R_DELIVER, index, qname, noise, rcode)

    push(0, _WAKE)
    wakes.add(0)
    events = 0
    while heap:
        now, _, kind, args = heapq.heappop(heap)
        events += 1
        if events > max_events:
            raise RuntimeError("event budget exhausted")
        now_ms = now / 1000.0
        if kind == _WAKE:
            wakes.discard(now)
            drive(client.next_action(now_ms), now)
        elif kind == _Q_DELIVER:
            index, qname, noise = args
            seq = None if noise else index
            add((now, QUERY_DELIVERED, seq, qname, None))
            if noise:
                fq = names.get(qname)
                if fq is None:
                    fq = names[qname] = Fqdn.parse(qname)
            else:
                fq = client.name(index)
            query = DnsQuery(index & 0xFFFF, fq, qtype)
            if wire:
                query = decode_message(encode_message(query))
            resp, delay = server.handle_query(query, now_ms)
            if state["complete"] is None and sid in server.completed:
                state["complete"] = now
            if resp is not None:
                if wire:
                    resp = decode_message(encode_message(resp))
                if delay > 0:
                    push(now + round(delay * 1000.0), _R_SEND, index, qname, noise, resp.rcode)
                else:
                    send_response(now, index, qname, noise, resp.rcode)
        elif kind == _R_SEND:
            send_response(now, *args)
        else:
            index, qname, noise, rcode = args
            seq = None if noise else index
            add((now, RESPONSE_DELIVERED, seq, qname, RCODES[rcode]))
            if noise and qname != client.qname(index):
                continue
            if client.finished is not None:
                continue
            drive(client.on_response(index, rcode, now_ms), now)

    return trace, _outcome(trace, client, server, client_config, behavior, net,
                           payload, sid, state, stats, down)


def _outcome(trace, client, server, cfg, behavior, net, payload, sid, state, stats, down):
    out = Outcome()
    got = server.completed.get(sid)
    out.delivered = got is not None and (payload is None or got == payload)
    out.bytes = len(got) if out.delivered else 0
    first = trace.rows[0][0] if trace.rows else 0
    end = max(state["finish"] or 0, state["complete"] or 0)
    out.duration_ms = (end - first) / 1000.0
    out.throughput = out.bytes / (out.duration_ms / 1000.0) if out.duration_ms > 0 else 0.0
    out.queries = stats["queries"]
    out.retransmits = stats["resends"]
    out.noise_queries = stats["noise"]
    out.server_noise = server.noise
    if client.mode is not ChannelMode.PREFETCH:
        out.max_outstanding = max_outstanding(trace)
    failed = list(client.finished.failed) if client.finished else []
    out.client_failed = failed
    if failed:
        out.error = "DeliveryFailed"
    elif not out.delivered:
        out.error = server.errors.get(sid, "IncompleteSession")
    if behavior.is_downlink:
        out.downlink_sent = down
        out.downlink_bits = client.downlink_bits()[:len(down)]
        out.downlink_ber = bit_error_rate(down, out.downlink_bits)
    if cfg.uplink_bits:
        sent = parse_bits(cfg.uplink_bits)
        session = server.sessions.get(sid)
        arrivals = session.arrival_times if session else []
        out.uplink_sent = sent
        out.uplink_bits = decode_uplink_timing(arrivals, cfg.delay, t0=net.base_latency)
        out.uplink_ber = bit_error_rate(sent, out.uplink_bits)
    return out


def matching_behavior(mode):
    """Server behavior that pairs naturally with a client channel mode."""
    if ChannelMode(mode) is ChannelMode.BLACKHOLE:
        return ServerBehavior(BehaviorKind.BLACKHOLE)
    return ServerBehavior(BehaviorKind.NXRESPONDER)
