import logging
import sys
from enum import Enum
from typing import Optional, Union

TRACE = 5
logging.addLevelName(TRACE, "TRACE")

ROOT_LOGGER = "fusesim"
_HANDLER_FLAG = "_fusesim_handler"


class LogLevel(Enum):
    """Enum for log levels."""

    TRACE = "trace"
    DEBUG = "debug"
    INFO = "info"
    WARN = "warn"
    ERROR = "error"

    def __str__(self):
        return self.value

    def to_logging(self) -> int:
        return {
            LogLevel.TRACE: TRACE,
            LogLevel.DEBUG: logging.DEBUG,
            LogLevel.INFO: logging.INFO,
            LogLevel.WARN: logging.WARNING,
            LogLevel.ERROR: logging.ERROR,
        }[self]


class DebugTargets(Enum):
    """Enum for debug targets."""

    CRYPTO = "crypto"
    TXMODEL = "txmodel"
    CHAIN = "chain"
    ADVERSARY = "adversary"
    PROTOCOLS = "protocols"
    HARNESS = "harness"

    def __str__(self):
        return self.value

    @property
    def logger_name(self) -> str:
        return f"{ROOT_LOGGER}.{self.value}"


class Role(Enum):
    """Enum for the two protocol parties."""

    A = "a"
    B = "b"

    def __str__(self):
        return self.value

    @property
    def peer(self) -> "Role":
        return Role.B if self is Role.A else Role.A

    @property
    def label(self) -> str:
        return self.value.upper()


def configure_logging(
    level: Union[LogLevel, str] = LogLevel.ERROR,
    target: Optional[Union[DebugTargets, str]] = None,
) -> logging.Logger:
    """
    Attaches a stream handler to the fusesim logger (or to one target below it).
    Calling it again only adjusts the level.
    """
    level = LogLevel(str(level))
    name = DebugTargets(str(target)).logger_name if target else ROOT_LOGGER
    logger = logging.getLogger(name)
    logger.setLevel(level.to_logging())

    if not any(getattr(h, _HANDLER_FLAG, False) for h in logger.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        setattr(handler, _HANDLER_FLAG, True)
        logger.addHandler(handler)
        logger.propagate = False

    return logger


def short_hex(value: bytes, size: int = 8) -> str:
    return value.hex()[:size]
