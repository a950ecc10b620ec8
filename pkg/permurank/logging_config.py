import logging
import logging.config

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(level: str = "INFO") -> None:
    """Configure logging for the application.

    Args:
        level: Name of the logging level applied to the root logger and the console handler.

    Returns:
        None

    Notes:
        1. Build a dictConfig document with one "standard" formatter.
        2. Route the console handler to stderr so stdout stays reserved for CLI summaries and tables.
        3. Keep loggers created before this call enabled.
        4. Apply the configuration using logging.config.dictConfig.
        5. This function performs no disk, network, or database access.

    """
    logging_config = {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "standard": {
                "format": LOG_FORMAT,
            },
        },
        "handlers": {
            "console": {
                "class": "logging.StreamHandler",
                "level": level,
                "formatter": "standard",
                "stream": "ext://sys.stderr",
            },
        },
        "root": {"level": level, "handlers": ["console"]},
    }

    logging.config.dictConfig(logging_config)


def set_log_level(level: str) -> None:
    """Change the root logger level and the level of every root handler.

    Args:
        level: Name of the logging level, for example "DEBUG".

    Returns:
        None

    """
    level_value = getattr(logging, level)
    logging.getLogger().setLevel(level_value)
    for handler in logging.getLogger().handlers:
        handler.setLevel(level_value)
