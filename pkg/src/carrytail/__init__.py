"""Tail-forking-resilient HotStuff-2 ("Carry") and a deterministic simulator to test it."""

__version__ = "0.1.0"
