"""UDP plumbing: a channel server and a sending client over real sockets.

Both sides log the simulator's trace schema with wall-clock milliseconds
since their own start.  Meant for loopback lab use.
"""

import ipaddress
import json
import logging
import os
import select
import socket
import socketserver
import struct
import threading
import time

from .client import Client, SendQuery, TimedOut
from .codec import DEFAULT_PIPELINE
from .errors import ConfigError, DeliveryFailed, DnsLabError, UnsupportedType
from .server import Server, write_payload
from .sim import (
    QUERY_DELIVERED,
    QUERY_SENT,
    RESPONSE_DELIVERED,
    RESPONSE_SENT,
    TIMEOUT,
    TraceEvent,
)
from .wire import (
    NXDOMAIN,
    QTYPE_BY_NAME,
    RCODES,
    DnsQuery,
    DnsResponse,
    Fqdn,
    decode_message,
    encode_message,
)

log = logging.getLogger(__name__)

# capture record: t_ms (float64), direction (0 in, 1 out), length, then the datagram
_CAP = struct.Struct("<dBH")
DEFAULT_BIND = "127.0.0.1:5353"


def parse_addr(text, default_port=53):
    host, sep, port = text.rpartition(":")
    if not sep:
        host, port = text, default_port
    host = host.strip("[]") or "127.0.0.1"
    try:
        return host, int(port)
    except ValueError as exc:
        raise ConfigError(f"bad address {text!r}") from exc


def is_loopback(host):
    if host == "localhost":
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        return False


def check_bind(host, acknowledged):
    """Refuse non-loopback addresses unless the operator opted in."""
    if not is_loopback(host) and not acknowledged:
        raise ConfigError(
            f"{host} is not a loopback address; pass "
            "--i-understand-this-binds-externally to use it")


class _Log:
    """Thread-safe JSON-lines trace plus optional binary capture."""

    def __init__(self, trace_path=None, capture_path=None):
        self.t0 = time.monotonic()
        self.lock = threading.Lock()
        self.events = []
        self.trace_f = open(trace_path, "w") if trace_path else None
        self.cap_f = open(capture_path, "wb") if capture_path else None

    def now(self):
        return (time.monotonic() - self.t0) * 1000.0

    def event(self, t_ms, kind, seq, qname, rcode=None):
        ev = TraceEvent(round(t_ms, 3), kind, seq, qname, rcode)
        with self.lock:
            self.events.append(ev)
            if self.trace_f:
                self.trace_f.write(ev.to_json() + "\n")
                self.trace_f.flush()

    def packet(self, t_ms, outbound, data):
        if self.cap_f is None:
            return
        with self.lock:
            self.cap_f.write(_CAP.pack(t_ms, 1 if outbound else 0, len(data)) + data)

    def close(self):
        for f in (self.trace_f, self.cap_f):
            if f:
                f.close()


def read_capture(path):
    """Yield (t_ms, outbound, datagram) records from a capture file."""
    with open(path, "rb") as f:
        while True:
            head = f.read(_CAP.size)
            if len(head) < _CAP.size:
                return
            t, d, n = _CAP.unpack(head)
            yield t, bool(d), f.read(n)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        data, sock = self.request
        srv = self.server
        lg = srv.lab_log
        now = lg.now()
        lg.packet(now, False, data)
        try:
            query = decode_message(data)
        except UnsupportedType as exc:
            log.info("unsupported query: %s", exc)
            if exc.qname is not None and exc.query_id is not None:
                self._reply(DnsResponse(exc.query_id, exc.qname, 1, NXDOMAIN), sock)
            return
        except DnsLabError as exc:
            log.info("dropping malformed datagram from %s: %s", self.client_address, exc)
            return
        if not isinstance(query, DnsQuery):
            return
        qname = query.qname.text
        seq = self._seq(query)
        lg.event(now, QUERY_DELIVERED, seq, qname)
        resp, delay = srv.channel.handle_query(query, now)
        if resp is None:
            return
        if delay > 0:
            time.sleep(delay / 1000.0)
        lg.event(lg.now(), RESPONSE_SENT, seq, qname, RCODES[resp.rcode])
        self._reply(resp, sock)

    def _seq(self, query):
        chunk = self.server.channel.parse(query)
        return chunk.seq if chunk is not None else None

    def _reply(self, resp, sock):
        out = encode_message(resp)
        self.server.lab_log.packet(self.server.lab_log.now(), True, out)
        sock.sendto(out, self.client_address)


class _UDPServer(socketserver.ThreadingUDPServer):
    daemon_threads = True
    allow_reuse_address = True


class LiveServer:
    """serve_forever wrapper that owns the channel Server and its logs."""

    def __init__(self, bind=DEFAULT_BIND, behavior=None, pipeline=DEFAULT_PIPELINE,
                 domain="mydomain.com", out_dir="out", trace_path=None, capture_path=None,
                 idle_timeout=300_000.0, allow_external=False):
        host, port = parse_addr(bind, 5353)
        check_bind(host, allow_external)
        os.makedirs(out_dir, exist_ok=True)
        self.out_dir = out_dir
        self.log = _Log(trace_path, capture_path)
        self.channel = Server(behavior, pipeline, domain, idle_timeout=idle_timeout,
                              on_complete=self._complete, on_expire=self._expire)
        self.udp = _UDPServer((host, port), _Handler)
        self.udp.channel = self.channel
        self.udp.lab_log = self.log
        self.address = self.udp.server_address
        self.written = {}
        self._stop = threading.Event()
        self._threads = []

    def _complete(self, session, payload):
        path = write_payload(self.out_dir, session, payload)
        self.written[session.session_id] = path
        log.info("session %#x complete: %d bytes -> %s", session.session_id, len(payload), path)

    def _expire(self, session):
        with open(os.path.join(self.out_dir, "expired.jsonl"), "a") as f:
            f.write(json.dumps(session.summary()) + "\n")

    def _reaper(self):
        while not self._stop.wait(1.0):
            self.channel.expire_idle(self.log.now())

    def start(self):
        for target in (self.udp.serve_forever, self._reaper):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def serve_forever(self):
        reaper = threading.Thread(target=self._reaper, daemon=True)
        reaper.start()
        try:
            self.udp.serve_forever()
        finally:
            self.close()

    def close(self):
        self._stop.set()
        if self._threads:
            self.udp.shutdown()
        self.udp.server_close()
        self.log.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


def send(resolver, chunks, config, trace_path=None, capture_path=None,
         allow_external=False, wall_limit=None):
    """Drive a Client against ``resolver`` in real time.

    Returns (trace events, client).  Raises DeliveryFailed when the client
    gives up on some queries.
    """
    host, port = parse_addr(resolver, 53)
    check_bind(host, allow_external)
    client = Client(config, chunks)
    qtype = QTYPE_BY_NAME[config.qtype]
    lg = _Log(trace_path, capture_path)
    names = {}
    pending = {}   # dns id -> (index, qname, noise)
    next_id = 0
    family = socket.AF_INET6 if ":" in host else socket.AF_INET
    sock = socket.socket(family, socket.SOCK_DGRAM)
    sock.setblocking(False)
    try:
        while client.finished is None:
            now = lg.now()
            if wall_limit is not None and now > wall_limit:
                raise DeliveryFailed("wall-clock limit reached", failed=[])
            for a in client.next_action(now):
                next_id = _act(a, client, lg, sock, (host, port), qtype, names, pending, next_id)
            if client.finished is not None:
                break
            wake = client.next_wakeup()
            wait = 0.05 if wake is None else max(0.0, min(0.05, (wake - lg.now()) / 1000.0))
            ready, _, _ = select.select([sock], [], [], wait)
            while ready:
                try:
                    data = sock.recv(4096)
                except BlockingIOError:
                    break
                now = lg.now()
                lg.packet(now, False, data)
                try:
                    resp = decode_message(data)
                except DnsLabError as exc:
                    log.info("bad response: %s", exc)
                    continue
                if not isinstance(resp, DnsResponse):
                    continue
                entry = pending.get(resp.id)
                if entry is None or entry[1] != resp.qname.text:
                    continue
                index, qname, noise = entry
                lg.event(now, RESPONSE_DELIVERED, None if noise else index, qname,
                         RCODES[resp.rcode])
                if noise or client.finished is not None:
                    continue
                for a in client.on_response(index, resp.rcode, now):
                    next_id = _act(a, client, lg, sock, (host, port), qtype, names,
                                   pending, next_id)
    finally:
        sock.close()
        lg.close()
    if client.finished.failed:
        raise DeliveryFailed(f"{len(client.finished.failed)} queries never answered",
                             failed=list(client.finished.failed))
    return lg.events, client


def _act(a, client, lg, sock, addr, qtype, names, pending, next_id):
    if isinstance(a, SendQuery):
        fq = names.get(a.qname)
        if fq is None:
            fq = client.name(a.index) if not a.noise else Fqdn.parse(a.qname)
            names[a.qname] = fq
        qid = next_id & 0xFFFF
        pending[qid] = (a.index, a.qname, a.noise)
        data = encode_message(DnsQuery(qid, fq, qtype))
        now = lg.now()
        lg.event(now, QUERY_SENT, None if a.noise else a.index, a.qname)
        lg.packet(now, True, data)
        sock.sendto(data, addr)
        return next_id + 1
    if isinstance(a, TimedOut):
        lg.event(lg.now(), TIMEOUT, a.index, client.qname(a.index))
    return next_id
