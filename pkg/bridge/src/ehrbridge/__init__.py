"""Stdio NDJSON bridge: wrap any sequence model for black-box auditing."""

from .echo import reference_echo_model
from .server import serve

__version__ = "0.1.0"
