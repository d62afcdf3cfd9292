"""Desk-scale laboratory for latent cascaded video super-resolution."""

__version__ = "0.1.0"
