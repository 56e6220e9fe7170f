"""Task metrics and correspondence scoring."""
