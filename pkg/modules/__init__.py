"""corrgarment - Feature modules."""
