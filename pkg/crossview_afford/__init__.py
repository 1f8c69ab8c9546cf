"""Weakly supervised affordance grounding from exocentric and egocentric views."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("crossview-afford")
except PackageNotFoundError:
    __version__ = "unknown"

# Submodules pull in numpy/scipy; keep `import crossview_afford` cheap for the CLI.
__all__ = ["__version__"]
