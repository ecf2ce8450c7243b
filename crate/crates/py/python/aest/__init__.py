"""Pulse-controlled state transfer through spin chains."""

from ._aest import *  # noqa: F401,F403
from ._aest import __version__  # noqa: F401
