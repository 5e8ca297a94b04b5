"""Physics-constrained neural solvers with non-overlapping domain decomposition."""

from . import _runtime  # noqa: F401  allocator tuning

__version__ = "0.1.0"
