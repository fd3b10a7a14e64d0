"""Active probes (launched at session start) and reactive probes (fed by the
work queue)."""

from . import active, reactive

__all__ = ["active", "reactive"]
