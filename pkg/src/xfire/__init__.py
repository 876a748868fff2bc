"""Early detection of Crossfire link-flooding warm-up from decoy-server utilization."""

__version__ = "0.1.0"
