"""
Exception tracking for cwce-lab runs.
Installs a global exception hook that counts and logs uncaught errors, and
provides a decorator that logs failing pipeline stages before re-raising.
"""
import logging
import sys
import traceback
from functools import wraps
from typing import Callable, Dict, Type

logger = logging.getLogger("cwce.exception_tracker")


class ExceptionTracker:
    """
    Counts uncaught exceptions by type and logs them with their traceback.
    """
    def __init__(self):
        self.exception_counts: Dict[str, int] = {}

    def handle_exception(self, exc_type: Type[BaseException], exc_value: BaseException, exc_traceback) -> None:
        """
        Handle an uncaught exception.

        Args:
            exc_type: Exception class
            exc_value: Exception instance
            exc_traceback: Traceback object
        """
        # Let Ctrl+C terminate quietly
        if issubclass(exc_type, KeyboardInterrupt):
            sys.__excepthook__(exc_type, exc_value, exc_traceback)
            return

        exception_name = exc_type.__name__
        tb_text = "".join(traceback.format_exception(exc_type, exc_value, exc_traceback))
        self.exception_counts[exception_name] = self.exception_counts.get(exception_name, 0) + 1

        logger.error(
            f"Uncaught exception: {exception_name}: {exc_value} "
            f"(occurrence {self.exception_counts[exception_name]})\n{tb_text}"
        )


def exception_handler(func: Callable) -> Callable:
    """
    Decorator that logs an exception raised by a pipeline stage and re-raises it.

    Args:
        func: The stage to wrap

    Returns:
        Wrapped function
    """
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except Exception as e:
            logger.error(f"Exception in {func.__name__}: {type(e).__name__}: {e}")

            class_name = ""
            if args and hasattr(args[0], "__dict__") and not isinstance(args[0], type):
                class_name = args[0].__class__.__name__ + "."
            logger.debug(f"Exception traceback in {func.__module__}.{class_name}{func.__name__}:\n{traceback.format_exc()}")
            raise

    return wrapper


def setup_exception_tracking() -> ExceptionTracker:
    """
    Install an ExceptionTracker as ``sys.excepthook``.

    Returns:
        The installed tracker
    """
    tracker = ExceptionTracker()
    sys.excepthook = tracker.handle_exception
    logger.debug("Exception tracking initialized")
    return tracker
