"""dnslab command line.

    dnslab encode FILE [-o MANIFEST]      chunk a file into a label manifest
    dnslab decode MANIFEST [-o FILE]      rebuild the file from a manifest
    dnslab simulate --config C            seeded end-to-end run, trace + report
    dnslab serve [--bind ADDR]            UDP channel server
    dnslab send FILE [--resolver ADDR]    UDP channel client
    dnslab detect TRACE [--thresholds T]  score a trace

Exit codes: 0 ok; 1 payload not delivered; 2 trace flagged (detect);
3 covert bits decoded with errors (simulate); 4 any other error, with a JSON
error object on stdout.
"""

import argparse
import json
import logging
import os
import random
import sys
import time

from . import __version__
from .codec import TransformPipeline, decode_payload, encode_payload, parse_label
from .config import SimConfig, config_dict, load_config, payload_bytes, run_config
from .detect import Thresholds, report, window_scores, windows_csv
from .errors import ConfigError, DeliveryFailed, DnsLabError, TraceTooShort
from .sim import read_trace

EXIT_OK, EXIT_UNDELIVERED, EXIT_FLAGGED, EXIT_BER, EXIT_ERROR = 0, 1, 2, 3, 4

log = logging.getLogger("dnslab")


def _out_dir(args):
    out = os.environ.get("DNSLAB_OUT") or args.out
    os.makedirs(out, exist_ok=True)
    return out


def _config(args):
    cfg = load_config(args.config) if args.config else SimConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- manifest -------------------------------------------------------------------

def write_manifest(path, chunks, pipeline):
    head = (f"session={chunks.session_id} total={chunks.total} "
            f"compress={pipeline.compress} encrypt={pipeline.encrypt} "
            f"text_encoding={pipeline.text_encoding}")
    with open(path, "w") as f:
        f.write("# " + head + "\n")
        for label in chunks.labels():
            f.write(label + "\n")


def read_manifest(path):
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise ConfigError(f"{path}: missing manifest header line")
    header = dict(kv.split("=", 1) for kv in lines[0][1:].split())
    chunks = []
    for n, label in enumerate(lines[1:], 2):
        try:
            chunks.append(parse_label(label))
        except DnsLabError as exc:
            raise type(exc)(f"{path}:{n}: {exc}") from exc
    return header, chunks


def cmd_encode(args):
    cfg = _config(args)
    with open(args.input, "rb") as f:
        data = f.read()
    rng = random.Random(f"session-{cfg.seed}") if args.seed is not None else None
    chunks = encode_payload(data, cfg.pipeline, cfg.client.lld_size, rng=rng)
    path = args.output or os.path.join(
        _out_dir(args), os.path.basename(args.input) + ".manifest")
    write_manifest(path, chunks, cfg.pipeline)
    _emit({"manifest": path, "session_id": chunks.session_id, "total": chunks.total})
    return EXIT_OK


def cmd_decode(args):
    cfg = _config(args)
    header, chunks = read_manifest(args.manifest)
    pipeline = TransformPipeline(header.get("compress", "identity"),
                                 header.get("encrypt", "identity"), cfg.pipeline.key,
                                 header.get("text_encoding", cfg.pipeline.text_encoding))
    if int(header.get("total", len(chunks))) != len(chunks):
        log.warning("header total %s but %d labels", header.get("total"), len(chunks))
    data = decode_payload(chunks, pipeline)
    path = args.output or os.path.join(_out_dir(args), "decoded.bin")
    with open(path, "wb") as f:
        f.write(data)
    _emit({"output": path, "bytes": len(data)})
    return EXIT_OK


# -- simulate -------------------------------------------------------------------

def cmd_simulate(args):
    cfg = _config(args)
    out = _out_dir(args)
    payload, chunks, trace, outcome = run_config(cfg)
    trace_path = os.path.join(out, "trace.jsonl")
    trace.write(trace_path)
    rep = {
        "seed": cfg.seed,
        "config": config_dict(cfg),
        "outcome": outcome.to_dict(),
        "chunks": len(chunks),
        "trace": trace_path,
    }
    try:
        det = report(trace)
        rep["detector"] = det
    except TraceTooShort as exc:
        rep["detector"] = {"error": str(exc)}
    with open(os.path.join(out, "report.json"), "w") as f:
        json.dump(rep, f, indent=2, sort_keys=True, default=str)
    o = outcome
    _emit({"delivered": o.delivered, "bytes": o.bytes, "duration_ms": o.duration_ms,
           "throughput": o.throughput, "retransmits": o.retransmits,
           "max_outstanding": o.max_outstanding, "downlink_ber": o.downlink_ber,
           "uplink_ber": o.uplink_ber, "report": os.path.join(out, "report.json")})
    if not o.delivered:
        return EXIT_UNDELIVERED
    if (o.downlink_ber or 0) > 0 or (o.uplink_ber or 0) > 0:
        return EXIT_BER
    return EXIT_OK


# -- live -----------------------------------------------------------------------

def cmd_serve(args):
    from .live import LiveServer

    cfg = _config(args)
    out = _out_dir(args)
    behavior = cfg.server.resolved(random.Random(f"downlink-{cfg.seed}"))
    srv = LiveServer(args.bind, behavior, cfg.pipeline, cfg.client.domain, out,
                     trace_path=os.path.join(out, "server-trace.jsonl"),
                     capture_path=os.path.join(out, "capture.bin"),
                     idle_timeout=args.idle_timeout,
                     allow_external=args.i_understand_this_binds_externally)
    host, port = srv.address[:2]
    print(json.dumps({"listening": f"{host}:{port}"}), flush=True)
    if args.duration is None:
        try:
            srv.serve_forever()
        except KeyboardInterrupt:
            pass
        return EXIT_OK
    srv.start()
    try:
        time.sleep(args.duration)
    except KeyboardInterrupt:
        pass
    finally:
        srv.close()
    return EXIT_OK


def cmd_send(args):
    from .live import send

    cfg = _config(args)
    out = _out_dir(args)
    if args.input:
        with open(args.input, "rb") as f:
            data = f.read()
    else:
        data = payload_bytes(cfg)
    rng = random.Random(f"session-{cfg.seed}") if args.seed is not None else None
    chunks = encode_payload(data, cfg.pipeline, cfg.client.lld_size, rng=rng)
    trace_path = os.path.join(out, "client-trace.jsonl")
    try:
        events, client = send(args.resolver, chunks, cfg.client, trace_path=trace_path,
                              allow_external=args.i_understand_this_binds_externally)
    except DeliveryFailed as exc:
        _emit({"error": "DeliveryFailed", "message": str(exc), "failed": exc.failed[:50],
               "trace": trace_path})
        return EXIT_UNDELIVERED
    _emit({"session_id": chunks.session_id, "total": chunks.total,
           "queries": sum(1 for e in events if e.kind == "QuerySent" and e.seq is not None),
           "trace": trace_path})
    return EXIT_OK


# -- detect ---------------------------------------------------------------------

def _thresholds(path):
    if not path:
        return Thresholds()
    if path.endswith(".json"):
        with open(path) as f:
            return Thresholds.from_dict(json.load(f))
    from .config import tomllib
    with open(path, "rb") as f:
        return Thresholds.from_dict(tomllib.load(f))


def cmd_detect(args):
    th = _thresholds(args.thresholds)
    events = read_trace(args.trace)
    rep = report(events, th)
    if args.window_csv:
        with open(args.window_csv, "w") as f:
            f.write(windows_csv(window_scores(events, args.window, th)))
    _emit(rep)
    return EXIT_FLAGGED if rep["flagged"] else EXIT_OK


# -- wiring ---------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", default="out", help="output directory (env DNSLAB_OUT wins)")
    common.add_argument("-v", "--verbose", action="store_true")

    live = argparse.ArgumentParser(add_help=False)
    live.add_argument("--i-understand-this-binds-externally", action="store_true",
                      help="allow non-loopback addresses")

    p = argparse.ArgumentParser(prog="dnslab", description="DNS covert channel lab")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("encode", parents=[common], help="file -> label manifest")
    s.add_argument("input")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", parents=[common], help="label manifest -> file")
    s.add_argument("manifest")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("simulate", parents=[common], help="seeded simulation run")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("serve", parents=[common, live], help="UDP channel server")
    s.add_argument("--bind", default="127.0.0.1:5353")
    s.add_argument("--idle-timeout", type=float, default=300_000.0, help="ms")
    s.add_argument("--duration", type=float, help="stop after this many seconds")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("send", parents=[common, live], help="UDP channel client")
    s.add_argument("input", nargs="?", help="file to send (default: config payload)")
    s.add_argument("--resolver", default="127.0.0.1:5353")
    s.set_defaults(func=cmd_send)

    s = sub.add_parser("detect", parents=[common], help="score a JSON-lines trace")
    s.add_argument("trace")
    s.add_argument("--thresholds", help="TOML or JSON thresholds file")
    s.add_argument("--window-csv", help="write per-window scores here")
    s.add_argument("--window", type=float, default=60.0, help="window length, s")
    s.set_defaults(func=cmd_detect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DnsLabError, OSError, ValueError) as exc:
        _emit({"error": type(exc).__name__, "message": str(exc)})
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
