"""Delay and peak-age violation analysis for short-packet links with retransmissions."""

__version__ = "0.1.0"
