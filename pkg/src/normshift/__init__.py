"""Newtonian force fields admitting the normal shift of hypersurfaces."""

__version__ = "0.1.0"
