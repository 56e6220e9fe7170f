"""Procedural garment generation."""
