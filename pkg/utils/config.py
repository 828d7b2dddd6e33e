"""
Configuration module for cwce-lab.
Resolves run settings from command-line overrides, the environment (.env
included) and machine defaults.
"""
import os
import logging
from typing import Dict, Any, Optional

from dotenv import load_dotenv

from cwce.performance import default_thread_count

logger = logging.getLogger("utils.config")

THREADS_ENV_VAR = "CWCE_LAB_THREADS"
DEFAULT_LOG_DIRECTORY = "logs"
DEFAULT_OUTPUT_DIRECTORY = "outputs"


def load_environment(env_path: Optional[str] = None) -> None:
    """Load a .env file into the process environment without overriding it."""
    load_dotenv(dotenv_path=env_path, override=False)


class Config:
    """
    Run configuration.

    The worker count comes from ``threads`` when given, otherwise from
    CWCE_LAB_THREADS, otherwise from the physical core count.
    """

    def __init__(self, threads: Optional[int] = None, log_directory: str = DEFAULT_LOG_DIRECTORY):
        self.log_directory = log_directory
        self.default_threads = default_thread_count()

        if threads is not None:
            if threads < 1:
                logger.warning(f"Invalid --threads value {threads}, defaulting to {self.default_threads}")
                self.threads = self.default_threads
            else:
                self.threads = threads
            self.threads_source = "cli"
            return

        raw = os.getenv(THREADS_ENV_VAR)
        if raw is None or raw.strip() == "":
            self.threads = self.default_threads
            self.threads_source = "default"
            return
        try:
            self.threads = int(raw)
            if self.threads < 1:
                raise ValueError(raw)
            self.threads_source = "env"
        except ValueError:
            self.threads = self.default_threads
            self.threads_source = "default"
            logger.warning(f"Invalid {THREADS_ENV_VAR} value {raw!r}, defaulting to {self.default_threads}")

    def as_dict(self) -> Dict[str, Any]:
        """
        Return configuration as a dictionary.

        Returns:
            Dictionary of configuration values
        """
        return {
            "threads": self.threads,
            "threads_source": self.threads_source,
            "log_directory": self.log_directory,
        }
