"""Demonstration-matched manipulation tasks."""
