"""Crowd-shipping simulator with learned matching and pricing policies."""
__version__ = "0.1.0"
