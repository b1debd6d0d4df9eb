"""Utility functions for passcan"""

from .tsv_handler import TsvHandler

__all__ = ["TsvHandler"]
