"""Payload throughput against query period and label size, as CSV."""

import argparse
import csv
import random
import sys

from dnslab.client import ClientConfig, Constant
from dnslab.codec import BASE32_LOWER, BASE64_DNS, TransformPipeline, encode_payload
from dnslab.sim import NetConfig, matching_behavior, run_simulation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--periods", default="100,250,500,1000", help="ms, comma separated")
    ap.add_argument("--lld", default="20,30,40,50")
    ap.add_argument("--mode", default="nxdomain", choices=["prefetch", "nxdomain", "blackhole"])
    ap.add_argument("--bytes", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    payload = random.Random(args.seed).randbytes(args.bytes)
    w = csv.writer(sys.stdout)
    w.writerow(["mode", "encoding", "period_ms", "lld_size", "chunks", "throughput_Bps",
                "ideal_Bps"])
    for enc in (BASE32_LOWER, BASE64_DNS):
        pl = TransformPipeline(text_encoding=enc)
        bits = 5 if enc == BASE32_LOWER else 6
        for lld in map(int, args.lld.split(",")):
            cs = encode_payload(payload, pl, lld, session_id=1)
            for period in map(float, args.periods.split(",")):
                cfg = ClientConfig(mode=args.mode, delay=Constant(period), lld_size=lld)
                _, out = run_simulation(cfg, cs, matching_behavior(args.mode),
                                        NetConfig(seed=args.seed), pipeline=pl, payload=payload)
                w.writerow([args.mode, enc, period, lld, len(cs), round(out.throughput, 3),
                            round(lld * bits / 8 / (period / 1000), 3)])


if __name__ == "__main__":
    main()
