"""Python access to the relux extraction toolkit."""

from ._relux import *  # noqa: F401,F403
