"""Matrix-based token merging (MaMe) and restoration (MaRe)."""

try:
    from mamere._core import *  # noqa: F401,F403  (installed layout)
except ImportError:  # in-tree builds put _core.so on PYTHONPATH directly
    from _core import *  # noqa: F401,F403

__version__ = "0.1.0"
