"""Learned pilot design, channel estimation and pilot pruning for MIMO-OFDM."""

__version__ = "0.1.0"
