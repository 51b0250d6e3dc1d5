"""Decentralised personalised federation with LSH similarity, peer-ranking
trust scores and commit-and-reveal announcements, as a deterministic simulator."""

__version__ = "0.1.0"
