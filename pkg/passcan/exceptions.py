"""Exception types raised by passcan"""

from typing import Any, Dict, Optional


class PasscanError(Exception):
    """Base class for all passcan errors"""


class ValidationError(PasscanError, ValueError):
    """Malformed input data or invalid parameters"""


class ResourceGuardError(PasscanError, RuntimeError):
    """An enumeration or combinatorial size guard was exceeded"""


class SearchExhaustedError(PasscanError, RuntimeError):
    """A randomized search ran out of attempts or bounds"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
