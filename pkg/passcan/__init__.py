"""
passcan - Pairwise-comparison association scans of categorical data matrices
"""

from .scanner import PasScanner

__version__ = "0.1.0"
__all__ = ["PasScanner"]
