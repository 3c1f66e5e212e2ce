"""
Public package metadata and helpers.
"""

from __future__ import annotations

from importlib import metadata

from staticfuse.logging_utils import configure_logging

# Configuration
PACKAGE_NAME = "staticfuse"
FALLBACK_VERSION = "0.1.0"

try:
    __version__ = metadata.version(PACKAGE_NAME)
except metadata.PackageNotFoundError:
    __version__ = FALLBACK_VERSION

__all__ = ["__version__", "configure_logging"]
