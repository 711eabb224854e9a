import logging
import os
from logging.handlers import RotatingFileHandler

# Attributes every LogRecord carries; anything else arrived through extra={...}
_RECORD_FIELDS = set(vars(logging.makeLogRecord({}))) | {"message", "asctime", "extra_fields"}


class AuctionFormatter(logging.Formatter):
    grey = "\x1b[38;21m"
    blue = "\x1b[34;21m"
    yellow = "\x1b[33;21m"
    red = "\x1b[31;21m"
    bold_red = "\x1b[31;1m"
    reset = "\x1b[0m"

    format_info_template = "[%(levelname)s - %(asctime)s - %(name)s]: "
    format_message = "%(message)s %(extra_fields)s"

    def __init__(self, colour: bool = True):
        super().__init__()
        self.colour = colour
        self.FORMATS = {
            level: (tint + self.format_info_template + self.reset if colour else self.format_info_template)
            + self.format_message
            for level, tint in (
                (logging.DEBUG, self.grey),
                (logging.INFO, self.blue),
                (logging.WARNING, self.yellow),
                (logging.ERROR, self.red),
                (logging.CRITICAL, self.bold_red),
            )
        }

    def format(self, record):
        log_fmt = self.FORMATS.get(record.levelno, self.format_info_template + self.format_message)
        # Flatten extra={...} context into k=v pairs
        extras = {k: v for k, v in vars(record).items() if k not in _RECORD_FIELDS}
        record.extra_fields = " ".join(f"{k}={v}" for k, v in sorted(extras.items()))
        formatter = logging.Formatter(log_fmt, datefmt="%Y-%m-%d %H:%M:%S")
        return formatter.format(record)


def logging_setup(log_dir: str = "logs", console_level: int = logging.INFO):
    os.makedirs(log_dir, exist_ok=True)

    # Reset any existing handlers to avoid duplicates on re-entry
    logging.getLogger("app").handlers = []

    custom_logger = logging.getLogger("app")
    custom_logger.setLevel(logging.DEBUG)
    custom_logger.propagate = False

    console_handler = logging.StreamHandler()
    console_handler.setLevel(console_level)
    console_handler.setFormatter(AuctionFormatter())

    file_handler = RotatingFileHandler(
        os.path.join(log_dir, "auction.log"),
        maxBytes=1024 * 1024,  # 1MB
        backupCount=5,
    )
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(AuctionFormatter(colour=False))

    custom_logger.addHandler(console_handler)
    custom_logger.addHandler(file_handler)

    custom_logger.debug("Logging setup completed", extra={"log_dir": log_dir})
    return custom_logger
