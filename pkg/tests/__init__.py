"""Tests for corrgarment."""
