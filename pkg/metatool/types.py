"""Common type definitions for metatool."""

from typing import Tuple, Union
import pathlib

import numpy as np
import numpy.typing as npt

# Common type aliases
PathLike = Union[str, pathlib.Path]
FloatArray = npt.NDArray[np.float64]
Combo = Tuple[str, ...]
Pose = Tuple[float, float, float]
Point = Tuple[float, float]
