"""Detector scores for tunnel scenarios next to benign browsing traces."""

import argparse
import random
import statistics

from dnslab.client import ClientConfig, InterArrival
from dnslab.codec import encode_payload
from dnslab.detect import compute_stats, generate_benign_trace, score_trace
from dnslab.server import BehaviorKind, ServerBehavior
from dnslab.sim import NetConfig, matching_behavior, run_simulation

SCENARIOS = {
    "prefetch": lambda: (ClientConfig(mode="prefetch"), matching_behavior("prefetch")),
    "nxdomain": lambda: (ClientConfig(), matching_behavior("nxdomain")),
    "blackhole": lambda: (ClientConfig(mode="blackhole"), matching_behavior("blackhole")),
    "storage_downlink": lambda: (ClientConfig(downlink="storage", timeout=800),
                                 ServerBehavior(BehaviorKind.STORAGE_DOWNLINK, random_bits=64)),
    "interarrival_uplink": lambda: (ClientConfig(delay=InterArrival(1000, 500),
                                                 uplink_random_bits=40), ServerBehavior()),
}


def summarize(name, stats):
    scores = [score_trace(s)[0] for s in stats]
    ent = statistics.median(s.label_entropy for s in stats)
    nx = statistics.median(s.nxdomain_ratio for s in stats)
    print(f"{name:<22}{statistics.median(scores):>8.3f}{min(scores):>8.3f}"
          f"{max(scores):>8.3f}{ent:>9.3f}{nx:>7.2f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--bytes", type=int, default=1000)
    args = ap.parse_args()

    print(f"{'trace':<22}{'median':>8}{'min':>8}{'max':>8}{'entropy':>9}{'nx':>7}")
    summarize("benign", [compute_stats(generate_benign_trace(seed=s))
                         for s in range(args.seeds)])
    for name, make in SCENARIOS.items():
        cfg, beh = make()
        stats = []
        for s in range(args.seeds):
            cs = encode_payload(random.Random(s).randbytes(args.bytes), rng=random.Random(s))
            trace, _ = run_simulation(cfg, cs, beh, NetConfig(jitter=5, seed=s))
            stats.append(compute_stats(trace))
        summarize(name, stats)


if __name__ == "__main__":
    main()
