"""Python bindings for the PEEL elastic embedding pipeline."""

from ._peel import *  # noqa: F401,F403
from ._peel import PeelError, __doc__  # noqa: F401
