"""
Handlers for spde-lab subcommands
"""

from .command_handlers import (
    SUBCOMMAND_HANDLERS,
    VERIFY_HANDLERS,
    RunContext,
    control_handler,
    ergodic_handler,
    estimate_handler,
    gradient_handler,
    initial_state,
    simulate_handler,
    target_state,
    verify_handler,
    voc_handler,
)

__all__ = [
    "SUBCOMMAND_HANDLERS",
    "VERIFY_HANDLERS",
    "RunContext",
    "control_handler",
    "ergodic_handler",
    "estimate_handler",
    "gradient_handler",
    "initial_state",
    "simulate_handler",
    "target_state",
    "verify_handler",
    "voc_handler",
]
