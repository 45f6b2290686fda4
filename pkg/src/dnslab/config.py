"""TOML run configs.

Section keys mirror the dataclass fields one to one:

    seed = 7
    [payload]        size = 125  |  file = "input.bin"
    [pipeline]       TransformPipeline fields (key is a UTF-8 string)
    [client]         ClientConfig fields
    [client.delay]   kind = "constant" | "interarrival" | "interval", then its fields
    [client.noise]   NoiseFlags fields
    [server]         ServerBehavior fields
    [net]            NetConfig fields (net.seed defaults to the top-level seed)

Unknown keys raise ConfigError rather than being ignored.
"""

import os
import random
import sys
from dataclasses import dataclass, field, fields, replace

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .client import DELAY_KINDS, ClientConfig, NoiseFlags, delay_kind
from .codec import TransformPipeline, encode_payload
from .errors import ConfigError
from .server import ServerBehavior, behavior_dict
from .sim import NetConfig, run_simulation


@dataclass
class PayloadSpec:
    size: int = 125
    file: str = None


@dataclass
class SimConfig:
    seed: int = 0
    payload: PayloadSpec = field(default_factory=PayloadSpec)
    pipeline: TransformPipeline = field(default_factory=TransformPipeline)
    client: ClientConfig = field(default_factory=ClientConfig)
    server: ServerBehavior = field(default_factory=ServerBehavior)
    net: NetConfig = field(default_factory=NetConfig)

    def with_seed(self, seed):
        return replace(self, seed=seed, net=replace(self.net, seed=seed))


def _build(cls, d, where):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(sorted(unknown))}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def _delay(d):
    d = dict(d)
    kind = d.pop("kind", "constant")
    if kind not in DELAY_KINDS:
        raise ConfigError(f"[client.delay] unknown kind {kind!r}")
    return _build(DELAY_KINDS[kind], d, "client.delay")


def config_from_dict(d, base_dir="."):
    d = dict(d)
    top = {"seed", "payload", "pipeline", "client", "server", "net"}
    unknown = set(d) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    seed = int(d.get("seed", 0))

    payload = _build(PayloadSpec, d.get("payload", {}), "payload")
    if payload.file and not os.path.isabs(payload.file):
        payload.file = os.path.join(base_dir, payload.file)

    pl = dict(d.get("pipeline", {}))
    if isinstance(pl.get("key"), str):
        pl["key"] = pl["key"].encode("utf-8")
    pipeline = _build(TransformPipeline, pl, "pipeline")

    cl = dict(d.get("client", {}))
    if "delay" in cl:
        cl["delay"] = _delay(cl["delay"])
    if "noise" in cl:
        cl["noise"] = _build(NoiseFlags, cl["noise"], "client.noise")
    client = _build(ClientConfig, cl, "client")

    server = _build(ServerBehavior, d.get("server", {}), "server")
    net = dict(d.get("net", {}))
    net.setdefault("seed", seed)
    net = _build(NetConfig, net, "net")
    return SimConfig(seed, payload, pipeline, client, server, net)


def load_config(path):
    try:
        with open(path, "rb") as f:
            d = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(d, os.path.dirname(os.path.abspath(path)))


def config_dict(cfg):
    """Plain-dict echo of a SimConfig (for reports)."""
    client = {f.name: getattr(cfg.client, f.name) for f in fields(ClientConfig)}
    client["mode"] = cfg.client.mode.value
    client["delay"] = dict(vars(cfg.client.delay), kind=delay_kind(cfg.client.delay))
    client["noise"] = dict(vars(cfg.client.noise))
    pl = {f.name: getattr(cfg.pipeline, f.name) for f in fields(TransformPipeline)}
    pl["key"] = "<set>" if pl["key"] else ""
    return {
        "seed": cfg.seed,
        "payload": dict(vars(cfg.payload)),
        "pipeline": pl,
        "client": client,
        "server": behavior_dict(cfg.server),
        "net": dict(vars(cfg.net)),
    }


def payload_bytes(cfg):
    if cfg.payload.file:
        with open(cfg.payload.file, "rb") as f:
            return f.read()
    return random.Random(f"payload-{cfg.seed}").randbytes(cfg.payload.size)


def run_config(cfg, payload=None):
    """Encode and simulate; returns (payload, chunks, trace, outcome)."""
    if payload is None:
        payload = payload_bytes(cfg)
    chunks = encode_payload(payload, cfg.pipeline, cfg.client.lld_size,
                            rng=random.Random(f"session-{cfg.seed}"))
    trace, outcome = run_simulation(cfg.client, chunks, cfg.server, cfg.net,
                                    pipeline=cfg.pipeline, payload=payload)
    return payload, chunks, trace, outcome
