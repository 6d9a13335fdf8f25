"""Open-world learning experiment harness: incremental plans, feedback loops, novelty-aware metrics."""

__version__ = "0.1.0"

UNKNOWN = "unknown"
UNKNOWN_PREFIX = "unknown_"
KNOWN = "known"
