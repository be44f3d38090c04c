"""Covert link simulator: covert packets hidden in QPSK primary symbols."""
