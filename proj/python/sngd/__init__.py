"""Posterior sampling with natural-gradient and Langevin update rules."""

from sngd._core import *  # noqa: F401,F403
from sngd._core import __doc__  # noqa: F401
