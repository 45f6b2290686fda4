"""Timing-downlink BER as the middlebox delay D grows."""

import argparse

from dnslab.client import ClientConfig
from dnslab.codec import encode_payload
from dnslab.server import BehaviorKind, ServerBehavior
from dnslab.sim import NetConfig, run_simulation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--delays", default="0,25,50,100,150,200,300,400,600")
    ap.add_argument("--bits", type=int, default=500)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--jitter", type=float, default=0.0)
    args = ap.parse_args()

    cs = encode_payload(bytes(125), session_id=1)
    cfg = ClientConfig(downlink="timing", timing_threshold=140)
    print("D_ms,mean_ber,min_ber,max_ber")
    for d in map(float, args.delays.split(",")):
        bers = []
        for seed in range(args.seeds):
            beh = ServerBehavior(BehaviorKind.TIMING_DOWNLINK, random_bits=args.bits)
            _, out = run_simulation(cfg, cs, beh, NetConfig(jitter=args.jitter,
                                                            middlebox_delay=d, seed=seed))
            bers.append(out.downlink_ber)
        print(f"{d:g},{sum(bers) / len(bers):.4f},{min(bers):.4f},{max(bers):.4f}")


if __name__ == "__main__":
    main()
