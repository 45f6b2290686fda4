"""DNS covert-channel laboratory: codec, wire format, client/server channel
models, a seeded network simulator and a trace detector."""

__version__ = "0.1.0"
