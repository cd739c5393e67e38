"""Oblivious two-party DL inference on a garbled MIPS-subset core, plus a
simulated power-leakage laboratory (fixed-vs-random t-test campaigns)."""

__version__ = "0.1.0"
