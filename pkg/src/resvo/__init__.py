"""Learned reward sharing, rank-constrained role emergence and role-conditioned policies for social dilemmas."""

__version__ = "0.1.0"
