import logging
from collections.abc import Mapping
from typing import Optional

_active_command: Optional[str] = None


def set_active_command(name: Optional[str]) -> None:
    """Set the command name prefixed to every message of a :class:`CommandLogger`."""
    global _active_command
    _active_command = name


class CommandLogger(logging.LoggerAdapter):
    """A python command line logger that prefixes messages with the running CLI command."""

    def __init__(
        self,
        name: str = __name__,
        extra: Optional[Mapping[str, object]] = None,
    ) -> None:
        """Initializes a logger whose messages read ``[command] message`` while a command runs.

        :param name: The name of the logger. Default is ``__name__``.
        :param extra: (Optional) A dict-like object which provides contextual information. See `logging.LoggerAdapter`.
        """
        logger = logging.getLogger(name)
        super().__init__(logger=logger, extra=extra)

    def process(self, msg, kwargs):
        msg, kwargs = super().process(msg, kwargs)
        if _active_command:
            msg = f"[{_active_command}] {msg}"
        return msg, kwargs
