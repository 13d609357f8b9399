"""
Error handling utilities for the spde-lab CLI.
"""
from functools import wraps

import typer
from loguru import logger
from pydantic import ValidationError

from ..exceptions import ConfigurationError, SpdeLabError


def handle_errors(func):
    """
    Decorator for CLI commands: log the failure and exit with the error's code.
    """
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except typer.Exit:
            raise
        except ValidationError as e:
            logger.error(f"Configuration error in {func.__name__}: {e}")
            raise typer.Exit(code=ConfigurationError.exit_code)
        except SpdeLabError as e:
            logger.error(f"{type(e).__name__} in {func.__name__}: {e.message}")
            raise typer.Exit(code=e.exit_code)
        except Exception as e:
            logger.exception(f"Unexpected error in {func.__name__}: {e}")
            raise typer.Exit(code=SpdeLabError.exit_code)

    return wrapper
