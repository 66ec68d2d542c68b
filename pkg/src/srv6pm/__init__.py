"""SRv6 per-flow packet-loss monitoring with alternate marking and
TWAMP-light loss measurement, plus a deterministic network simulator."""

__version__ = "0.1.0"
