"""Digital-twin engine for a human-robot collaborative assembly cell."""

__version__ = "0.1.0"
