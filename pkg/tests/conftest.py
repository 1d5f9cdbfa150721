"""Keeps the tests directory importable (synth helpers, stub transports)."""
