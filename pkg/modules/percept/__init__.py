"""Partial point cloud rendering and vertex tracing."""
