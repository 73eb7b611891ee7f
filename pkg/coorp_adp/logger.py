"""
Colorful logging shared by the simulator, learners and the experiment runner.
"""

import logging
from typing import Union


class ColoredFormatter(logging.Formatter):
    """Custom formatter with colors and emojis for better readability"""

    COLORS = {
        'DEBUG': '\033[36m',    # Cyan
        'INFO': '\033[32m',     # Green
        'WARNING': '\033[33m',  # Yellow
        'ERROR': '\033[31m',    # Red
        'CRITICAL': '\033[35m', # Magenta
    }
    RESET = '\033[0m'

    EMOJIS = {
        'DEBUG': '🔍',
        'INFO': '✅',
        'WARNING': '⚠️',
        'ERROR': '❌',
        'CRITICAL': '🔥',
    }

    def format(self, record):
        record.emoji = self.EMOJIS.get(record.levelname, '•')
        record.color = self.COLORS.get(record.levelname, '')
        record.reset = self.RESET
        return super().format(record)


def parse_level(level: Union[int, str]) -> int:
    """Accept either a logging constant or a name such as 'debug'"""
    if isinstance(level, int):
        return level
    value = logging.getLevelName(str(level).upper())
    if not isinstance(value, int):
        raise ValueError(f"Unknown log level: {level}")
    return value


def setup_logger(name: str, level: Union[int, str] = logging.INFO) -> logging.Logger:
    """Set up a colorful logger for a module or a long-lived object"""
    logger = logging.getLogger(name)
    logger.setLevel(parse_level(level))

    if not logger.handlers:
        handler = logging.StreamHandler()
        formatter = ColoredFormatter(
            '%(color)s%(emoji)s [%(levelname)s]%(reset)s %(name)s: %(message)s'
        )
        handler.setFormatter(formatter)
        logger.addHandler(handler)
        logger.propagate = False

    return logger
