"""Per-point descriptor network."""
