"""Vision-conditioned planar DMPs with a deterministic vine-unveiling simulator."""

__version__ = "0.1.0"
