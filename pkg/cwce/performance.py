"""
Resource information for experiment runs.
Picks the default worker count and records a snapshot of the machine a run
executed on (kept out of the checksummed artifacts).
"""
import logging
import platform
from datetime import datetime
from typing import Any, Dict

import psutil

logger = logging.getLogger("cwce.performance")


def default_thread_count() -> int:
    """Physical core count, falling back to logical cores, then 1."""
    count = psutil.cpu_count(logical=False) or psutil.cpu_count(logical=True) or 1
    return max(1, int(count))


def get_run_info() -> Dict[str, Any]:
    """
    Collect a snapshot of the host: cores, memory and platform.

    Returns:
        Dictionary of host metrics
    """
    memory = psutil.virtual_memory()
    process = psutil.Process()
    return {
        "timestamp": datetime.now().isoformat(),
        "cpu": {
            "physical_cores": psutil.cpu_count(logical=False),
            "logical_cores": psutil.cpu_count(logical=True),
        },
        "memory": {
            "total": memory.total,
            "available": memory.available,
            "percent": memory.percent,
        },
        "process": {
            "rss": process.memory_info().rss,
            "cpu_seconds": sum(process.cpu_times()[:2]),
        },
        "system": {
            "platform": platform.system(),
            "platform_release": platform.release(),
            "python": platform.python_version(),
        },
    }


def log_resource_usage(stage: str) -> None:
    """Log resident memory after a pipeline stage."""
    rss = psutil.Process().memory_info().rss
    logger.debug(f"{stage}: resident memory {rss / (1024 ** 2):.1f} MB")
