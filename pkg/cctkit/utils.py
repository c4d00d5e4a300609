from configparser import ConfigParser
from datetime import datetime
from pathlib import Path

import numpy as np
import psutil

from cctkit.exceptions import EventAlignmentError

default_settings_file = (
    Path(__file__).parents[1].joinpath("config/default_settings.ini")
)


def log_memory_usage():
    """
    Logs the memory usage of the current process.

    Returns
    -------
    str
        A string representing the memory usage in megabytes (MB).
    """
    process = psutil.Process()
    mem_info = process.memory_info()
    return f"Memory usage: {mem_info.rss / (1024 ** 2):.2f} MB"


def get_current_time():
    time_now = datetime.now()
    return f"{time_now.hour}:{time_now.minute}:{time_now.second}"


def load_settings(settings_file: str | Path | None = None) -> ConfigParser:
    """
    Read the default settings and, optionally, a user settings file on top of it.

    Parameters
    ----------
    settings_file : str | Path | None, optional
        User .ini file. Keys present in it override the defaults.

    Returns
    -------
    ConfigParser
        Parsed settings.

    Raises
    ------
    FileNotFoundError
        If the user settings file does not exist.
    """
    config = ConfigParser()
    config.read(default_settings_file)
    if settings_file is not None:
        settings_file = Path(settings_file)
        if not settings_file.is_file():
            raise FileNotFoundError(f"Settings file {settings_file} not found")
        config.read(settings_file)
    return config


def wrap_angle(angle: np.ndarray | float) -> np.ndarray | float:
    """Wrap angles to the interval [-pi, pi)."""
    return (np.asarray(angle) + np.pi) % (2 * np.pi) - np.pi


def steps_on_grid(t: float, dt: float, name: str = "time") -> int:
    """
    Number of integration steps of size dt that make up time t.

    Raises
    ------
    EventAlignmentError
        If t is not an integer multiple of dt.
    """
    n = int(round(t / dt))
    if abs(n * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise EventAlignmentError(
            f"{name} = {t} s is not a multiple of the time step dt = {dt} s"
        )
    return n


def snap_to_grid(t: float, dt: float) -> float:
    return round(t / dt) * dt
