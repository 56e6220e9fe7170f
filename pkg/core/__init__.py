"""corrgarment - Core utilities (config, errors, logging, file formats)."""
