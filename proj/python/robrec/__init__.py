"""Adversarially robust causal algorithmic recourse."""

from ._robrec import *  # noqa: F401,F403
from ._robrec import __doc__  # noqa: F401
