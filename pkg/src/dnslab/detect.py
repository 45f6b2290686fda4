"""Trace statistics and a threshold scorer for DNS tunnel detection.

The scorer is a weighted average of clamped linear ramps, one per indicator.
Weights are non-negative, so raising any indicator never lowers the score.
Default thresholds were calibrated on the in-repo simulator and benign
generator; they are starting points, not ground truth.
"""

import csv
import io
import json
import math
import random
from collections import Counter
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError, TraceTooShort
from .sim import (
    QUERY_DELIVERED,
    QUERY_SENT,
    RESPONSE_DELIVERED,
    RESPONSE_SENT,
    TraceEvent,
    Trace,
)


@dataclass
class TraceStats:
    queries: int = 0
    query_rate: float = 0.0
    nxdomain_ratio: float = 0.0
    unique_lld_ratio: float = 0.0
    mean_label_len: float = 0.0
    label_entropy: float = 0.0
    interarrival_cv: float = 0.0
    interarrival_bimodality: float = 0.0

    def to_dict(self):
        return asdict(self)


def _events(trace):
    if isinstance(trace, Trace):
        return trace.events
    return list(trace)


def _leftmost(qname):
    return qname.split(".", 1)[0]


def shannon_entropy(text):
    """First-order entropy of ``text`` in bits per character."""
    if not text:
        return 0.0
    n = len(text)
    h = -sum(c / n * math.log2(c / n) for c in Counter(text).values())
    return max(h, 0.0)


def otsu_separation(values):
    """Best two-group split: between-class variance over total variance.

    0 for constant data, close to 1 for two tight, well-separated clusters.
    """
    xs = sorted(values)
    n = len(xs)
    if n < 2:
        return 0.0
    mean = sum(xs) / n
    total = sum((x - mean) ** 2 for x in xs)
    if total <= 1e-12 * max(1.0, mean * mean) * n:
        return 0.0
    best = 0.0
    left = 0.0
    for k in range(1, n):
        left += xs[k - 1]
        m1 = left / k
        m2 = (mean * n - left) / (n - k)
        between = k * (n - k) / n * (m1 - m2) ** 2
        if between > best:
            best = between
    return min(best / total, 1.0)


def query_events(events):
    """Client-side query events, or server-side ones for a capture that has no others."""
    sent = [e for e in events if e.kind == QUERY_SENT]
    return sent if sent else [e for e in events if e.kind == QUERY_DELIVERED]


def compute_stats(trace):
    events = _events(trace)
    queries = query_events(events)
    n = len(queries)
    if n < 2:
        raise TraceTooShort(f"need at least 2 query events, got {n}")
    times = sorted(e.t_ms for e in queries)
    span_s = max(times[-1] - times[0], 1.0) / 1000.0
    responses = [e for e in events if e.kind == RESPONSE_DELIVERED]
    if not responses:
        responses = [e for e in events if e.kind == RESPONSE_SENT]
    nx = sum(1 for e in responses if e.rcode == "NXDOMAIN")
    labels = [_leftmost(e.qname) for e in queries]
    gaps = [b - a for a, b in zip(times, times[1:])]
    mean_gap = sum(gaps) / len(gaps)
    if mean_gap > 0:
        sd = math.sqrt(sum((g - mean_gap) ** 2 for g in gaps) / len(gaps))
        cv = sd / mean_gap
    else:
        cv = 0.0
    return TraceStats(
        queries=n,
        query_rate=(n - 1) / span_s,
        nxdomain_ratio=min(nx / n, 1.0),
        unique_lld_ratio=len(set(labels)) / n,
        mean_label_len=sum(map(len, labels)) / n,
        label_entropy=shannon_entropy("".join(labels)),
        interarrival_cv=cv,
        interarrival_bimodality=otsu_separation(gaps),
    )


# indicator -> (low, high, weight); the ramp is 0 at low and 1 at high
DEFAULT_RAMPS = {
    "label_entropy": (4.3, 4.7, 0.25),
    "mean_label_len": (20.0, 50.0, 0.20),
    "unique_lld_ratio": (0.6, 0.95, 0.20),
    "nxdomain_ratio": (0.1, 0.5, 0.20),
    "query_rate": (2.0, 20.0, 0.05),
    "interarrival_bimodality": (0.85, 0.97, 0.10),
}


@dataclass
class Thresholds:
    ramps: dict = field(default_factory=lambda: dict(DEFAULT_RAMPS))
    flag_at: float = 0.5

    def __post_init__(self):
        names = {f.name for f in fields(TraceStats)}
        ramps = {}
        for name, spec in self.ramps.items():
            if name not in names:
                raise ConfigError(f"unknown indicator {name!r}")
            lo, hi, w = (float(v) for v in spec)
            if hi <= lo or w < 0:
                raise ConfigError(f"{name}: need low < high and weight >= 0")
            ramps[name] = (lo, hi, w)
        self.ramps = ramps

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {"ramps", "flag_at"}
        if unknown:
            raise ConfigError(f"unknown threshold keys {sorted(unknown)}")
        ramps = dict(DEFAULT_RAMPS)
        for name, spec in d.get("ramps", {}).items():
            if isinstance(spec, dict):
                spec = (spec["low"], spec["high"], spec["weight"])
            ramps[name] = spec
        return cls(ramps, float(d.get("flag_at", 0.5)))


def _ramp(x, lo, hi):
    if x <= lo:
        return 0.0
    if x >= hi:
        return 1.0
    return (x - lo) / (hi - lo)


def score_trace(stats, thresholds=None):
    """Return (score in [0, 1], indicators at or past their high mark)."""
    th = thresholds or Thresholds()
    total_w = sum(w for _, _, w in th.ramps.values())
    if total_w <= 0:
        return 0.0, []
    score = 0.0
    triggered = []
    for name, (lo, hi, w) in th.ramps.items():
        r = _ramp(getattr(stats, name), lo, hi)
        score += w * r
        if r >= 1.0:
            triggered.append(name)
    return min(score / total_w, 1.0), triggered


def report(trace, thresholds=None):
    th = thresholds or Thresholds()
    stats = compute_stats(trace)
    score, triggered = score_trace(stats, th)
    return {
        "stats": stats.to_dict(),
        "score": score,
        "flagged": score >= th.flag_at,
        "triggered": triggered,
        "flag_at": th.flag_at,
    }


def window_scores(trace, window_s=60.0, thresholds=None):
    """Per-window rows (start_ms, queries, score, flagged); windows with < 2 queries are skipped."""
    th = thresholds or Thresholds()
    events = sorted(_events(trace), key=lambda e: e.t_ms)
    if not events:
        return []
    width = window_s * 1000.0
    t0 = events[0].t_ms
    buckets = {}
    for e in events:
        buckets.setdefault(int((e.t_ms - t0) // width), []).append(e)
    rows = []
    for k in sorted(buckets):
        try:
            stats = compute_stats(buckets[k])
        except TraceTooShort:
            continue
        score, _ = score_trace(stats, th)
        rows.append({"start_ms": t0 + k * width, "queries": stats.queries,
                     "score": round(score, 6), "flagged": score >= th.flag_at})
    return rows


def windows_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["start_ms", "queries", "score", "flagged"])
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def report_json(rep):
    return json.dumps(rep, indent=2, sort_keys=True)


# -- benign traffic -----------------------------------------------------------

WORDS = (
    "about account active admin alpha apple archive area assets auth auto bank "
    "beta blog board book cart cloud code community connect content core data "
    "deal design dev direct docs download drive edge email events express "
    "feed files finance forum free games gateway global green health help home "
    "hub images info inside jobs join learn library life link live local login "
    "mail maps market media member metrics mobile money music my net news next "
    "office online open pay people photo pixel play portal post press pro "
    "search secure server service share shop smart social sport star static "
    "status store stream studio support team tech time today track travel "
    "update upload user video view web weather wiki world").split()
SERVICE = ("www", "www", "www", "mail", "api", "cdn", "static", "img", "m",
           "login", "accounts", "news", "docs", "support", "video", "assets")
TLDS = ("com", "com", "com", "net", "org", "io", "co")


def benign_hostnames(rng, count=300):
    names = []
    seen = set()
    while len(names) < count:
        site = rng.choice(WORDS) + (rng.choice(WORDS) if rng.random() < 0.5 else "")
        host = f"{site}.{rng.choice(TLDS)}"
        if rng.random() < 0.7:
            host = f"{rng.choice(SERVICE)}.{host}"
        if host not in seen:
            seen.add(host)
            names.append(host)
    return names


def generate_benign_trace(n_queries=600, seed=0, hosts=300, zipf_s=1.1,
                          nx_fraction=0.03, pareto_alpha=1.5, gap_scale_ms=150.0):
    """Synthetic browsing-like DNS trace with the simulator's event schema.

    Host popularity is Zipf, gaps are Pareto (bursty, heavy-tailed) and most
    answers are NOERROR.
    """
    rng = random.Random(f"benign-{seed}")
    names = benign_hostnames(rng, hosts)
    weights = [1.0 / (k + 1) ** zipf_s for k in range(len(names))]
    picks = rng.choices(names, weights=weights, k=n_queries)
    events = []
    t = 0.0
    for k, qname in enumerate(picks):
        if k:
            t += gap_scale_ms * rng.paretovariate(pareto_alpha)
        t_ms = math.floor(t * 1000) / 1000
        rtt = 5.0 + rng.expovariate(1 / 30.0)
        rcode = "NXDOMAIN" if rng.random() < nx_fraction else "NOERROR"
        events.append(TraceEvent(t_ms, QUERY_SENT, None, qname, None))
        events.append(TraceEvent(round(t_ms + rtt, 3), RESPONSE_DELIVERED, None, qname, rcode))
    events.sort(key=lambda e: e.t_ms)
    return events
