"""Desk-scale CTC training lab with grow-and-drop parameter reallocation."""

__version__ = "0.1.0"
