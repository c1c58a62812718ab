"""Semiclassical and exact dynamics of dipolar spin-1/2 multilayers."""

__version__ = "0.1.0"
