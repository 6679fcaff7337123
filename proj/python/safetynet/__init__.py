"""Python access to the SafetyNet adversary detection lab."""

from ._safetynet import *  # noqa: F401,F403
from ._safetynet import SafetyNetError, __doc__  # noqa: F401
