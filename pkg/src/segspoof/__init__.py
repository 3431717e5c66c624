"""Bilevel segmental audio spoof detector and its edit/corpus tooling."""

__version__ = "0.1.0"
