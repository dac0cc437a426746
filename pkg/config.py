import os
import logging
from logging.handlers import RotatingFileHandler


def _env_float(name: str, default: float) -> float:
    raw = os.environ.get(name)
    if raw is None or not raw.strip():
        return default
    try:
        return float(raw.strip())
    except ValueError:
        raise ValueError(f"{name} environment variable is not a number: {raw!r}")


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw.strip())
    except ValueError:
        raise ValueError(f"{name} environment variable is not an integer: {raw!r}")


class Config:
    """
    This class centralizes the numeric policy and runtime settings.
    Every value can be overridden from the environment (or a `.env` file
    at the root of the project, loaded by `main.py`).
    """
    def __init__(self) -> None:
        # Hermiticity check on density operators and moment matrices.
        self.HERMITIAN_TOL = _env_float("DICKA_HERMITIAN_TOL", 1e-10)

        # Smallest eigenvalue still accepted as positive semidefinite is -PSD_TOL.
        self.PSD_TOL = _env_float("DICKA_PSD_TOL", 1e-9)

        # Unit trace / unit norm checks.
        self.NORMALIZATION_TOL = _env_float("DICKA_NORMALIZATION_TOL", 1e-10)

        # Probability tables: sums, no-signaling marginals, negative entries.
        self.PROBABILITY_TOL = _env_float("DICKA_PROBABILITY_TOL", 1e-9)

        # Interior-point solver stopping rule.
        self.SDP_TOL = _env_float("DICKA_SDP_TOL", 1e-7)
        self.SDP_MAX_ITER = _env_int("DICKA_SDP_MAX_ITER", 200)

        # Half-width of the window the behavior equalities are relaxed to when an
        # exact solve does not converge.
        self.EQUALITY_SLACK = _env_float("DICKA_EQUALITY_SLACK", 1e-5)

        self.LOG_FILE = os.environ.get("DICKA_LOG_FILE", "dicka.log").strip() or "dicka.log"
        self.LOG_LEVEL = os.environ.get("DICKA_LOG_LEVEL", "INFO").strip().upper() or "INFO"

        for name in ("HERMITIAN_TOL", "PSD_TOL", "NORMALIZATION_TOL", "PROBABILITY_TOL", "SDP_TOL", "EQUALITY_SLACK"):
            if getattr(self, name) <= 0:
                raise ValueError(f"DICKA_{name} must be positive, got {getattr(self, name)}.")
        if self.SDP_MAX_ITER < 1:
            raise ValueError(f"DICKA_SDP_MAX_ITER must be at least 1, got {self.SDP_MAX_ITER}.")

# Create a singleton instance of the Config class.
config = Config()

def get_logger(name: str = "dicka") -> logging.Logger:
    """
    Configures and retrieves a logger instance.

    This function sets up a root logger with both a file and console handler
    on its first call. Subsequent calls will return a logger instance
    that inherits this configuration, preventing duplicate handlers and log messages.

    Args:
        name (str): The name for the logger, typically __name__ from the calling module.

    Returns:
        logging.Logger: A configured logger instance.
    """
    logger = logging.getLogger(name)

    # Check if the root logger has already been configured to avoid duplicate handlers
    if not logging.getLogger().hasHandlers():
        # Set the level for the root logger to the lowest level of its handlers
        logging.getLogger().setLevel(logging.DEBUG)

        log_formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(funcName)s(%(lineno)d) - %(message)s')

        # Setup file handler
        file_handler = RotatingFileHandler(
            config.LOG_FILE, mode='a', maxBytes=5*1024*1024,  # Max 5 MB per log file
            backupCount=2, encoding='utf-8', delay=True  # Keep 2 backup files
        )
        file_handler.setFormatter(log_formatter)
        file_handler.setLevel(logging.DEBUG)

        # Setup console handler
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(log_formatter)
        console_handler.setLevel(getattr(logging, config.LOG_LEVEL, logging.INFO))

        # Add handlers to the root logger
        logging.getLogger().addHandler(file_handler)
        logging.getLogger().addHandler(console_handler)

    return logger
