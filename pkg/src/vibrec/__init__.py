"""Lost vibration sensor data recovery with a from-scratch CNN, validated by
operational modal analysis on synthetic modal-superposition records."""

from . import modal, nn_engine, recovery, signal_core, synthgen
from .errors import VibrecError

__all__ = [
    "modal",
    "nn_engine",
    "recovery",
    "signal_core",
    "synthgen",
    "VibrecError",
]

__version__ = "0.1.0"
