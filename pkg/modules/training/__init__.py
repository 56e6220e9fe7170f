"""Contrastive correspondence training, refinement and adaptation."""
