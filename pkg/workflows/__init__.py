"""Workflow orchestration and CLI."""
