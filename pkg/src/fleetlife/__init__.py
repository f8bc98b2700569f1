"""Survival models and failure-count forecasting for equipment fleets."""

from .curves import SurvivalCurve
from .dataset import CsvSchema, Dataset, PredictionWindow, clean, load_csv, rolling_windows
from .exceptions import FleetlifeError

__version__ = "0.1.0"

__all__ = [
    "CsvSchema",
    "Dataset",
    "FleetlifeError",
    "PredictionWindow",
    "SurvivalCurve",
    "clean",
    "load_csv",
    "rolling_windows",
]
