"""Utility modules.

Configuration, the exception hierarchy and the linear-algebra helpers
shared by every layer.
"""
