"""Variable-inertia MPC for a biped with heavy legs."""

from .errors import VimpcError

__version__ = "0.1.0"
