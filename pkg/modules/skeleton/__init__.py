"""Garment skeletons: analytic, learned and projected."""
