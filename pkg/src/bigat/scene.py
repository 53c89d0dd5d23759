"""
Scene records shared by the data pipeline and the networks.

Positions are meters on the ground plane; every window carries 8 observed
and (when known) 12 future positions, sampled 0.4 s apart.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import fsspec
import numpy as np

from . import constants as _ct
from .errors import ContractError, GridFormatError


@dataclass(frozen=True, eq=False)
class TrajectoryWindow:
    """One pedestrian's observed path X_i and future path Y_i."""

    pedestrian_id: int
    observed: np.ndarray
    future: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        observed = np.asarray(self.observed, dtype=np.float64)
        if observed.shape != (_ct.T_OBS, 2):
            raise ContractError(
                f"pedestrian {self.pedestrian_id}: expected {_ct.T_OBS} observed points, got shape {observed.shape}"
            )
        if not np.all(np.isfinite(observed)):
            raise ContractError(f"pedestrian {self.pedestrian_id}: non-finite observed coordinates")
        object.__setattr__(self, "observed", observed)
        if self.future is not None:
            future = np.asarray(self.future, dtype=np.float64)
            if future.shape != (_ct.T_FUT, 2):
                raise ContractError(
                    f"pedestrian {self.pedestrian_id}: expected {_ct.T_FUT} future points, got shape {future.shape}"
                )
            if not np.all(np.isfinite(future)):
                raise ContractError(f"pedestrian {self.pedestrian_id}: non-finite future coordinates")
            object.__setattr__(self, "future", future)

    @property
    def positions(self) -> np.ndarray:
        """All 20 positions (observed then future)."""
        if self.future is None:
            raise ContractError(f"pedestrian {self.pedestrian_id} has no future attached")
        return np.concatenate([self.observed, self.future], axis=0)


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    """Pre-rasterized H x W x C scene features anchored in meter space."""

    cells: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)
    cell_size: float = 1.0

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells, dtype=np.float64)
        if cells.ndim != 3 or min(cells.shape) < 1:
            raise GridFormatError(f"grid cells must be H x W x C with positive sizes, got {cells.shape}")
        if not self.cell_size > 0:
            raise GridFormatError(f"cell size must be positive, got {self.cell_size}")
        object.__setattr__(self, "cells", cells)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.cells.shape

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) in meters, for plotting."""
        height, width, _ = self.cells.shape
        x0, y0 = self.origin
        return (x0, x0 + width * self.cell_size, y0, y0 + height * self.cell_size)


@dataclass(frozen=True, eq=False)
class SceneSample:
    """All N pedestrians co-visible in one 20-step window, plus the scene grid."""

    pedestrians: tuple[TrajectoryWindow, ...]
    grid: Optional[FeatureGrid] = None
    scene_id: str = ""
    labels: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        pedestrians = tuple(self.pedestrians)
        if not pedestrians:
            raise ContractError(f"scene '{self.scene_id}' has no pedestrians")
        object.__setattr__(self, "pedestrians", pedestrians)

    def __len__(self) -> int:
        return len(self.pedestrians)

    @property
    def pedestrian_ids(self) -> list[int]:
        return [p.pedestrian_id for p in self.pedestrians]

    @property
    def observed(self) -> np.ndarray:
        return np.stack([p.observed for p in self.pedestrians])

    @property
    def has_future(self) -> bool:
        return all(p.future is not None for p in self.pedestrians)

    @property
    def future(self) -> np.ndarray:
        if not self.has_future:
            raise ContractError(f"scene '{self.scene_id}' is missing ground-truth futures")
        return np.stack([p.future for p in self.pedestrians])

    def with_future(self, future: np.ndarray) -> "SceneSample":
        """Copy of the scene with every pedestrian's future replaced (N x 12 x 2)."""
        future = np.asarray(future, dtype=np.float64)
        if future.shape != (len(self), _ct.T_FUT, 2):
            raise ContractError(f"expected futures of shape {(len(self), _ct.T_FUT, 2)}, got {future.shape}")
        windows = tuple(replace(p, future=f) for p, f in zip(self.pedestrians, future))
        return replace(self, pedestrians=windows)

    def permuted(self, order: Sequence[int]) -> "SceneSample":
        return replace(self, pedestrians=tuple(self.pedestrians[i] for i in order))


# ------------------------------------------------------------- grid files


def parse_grid(text: str) -> FeatureGrid:
    """Parse ``GRID H W C origin_x origin_y cell_size`` followed by H*W*C values."""
    tokens = text.split()
    if len(tokens) < 7 or tokens[0] != "GRID":
        raise GridFormatError("grid file must start with 'GRID H W C origin_x origin_y cell_size'")
    try:
        height, width, channels = (int(t) for t in tokens[1:4])
        origin_x, origin_y, cell_size = (float(t) for t in tokens[4:7])
        values = np.array([float(t) for t in tokens[7:]], dtype=np.float64)
    except ValueError as exc:
        raise GridFormatError(f"grid file has a non-numeric field: {exc}") from exc
    expected = height * width * channels
    if values.size != expected:
        raise GridFormatError(f"grid header declares {expected} values, found {values.size}")
    return FeatureGrid(values.reshape(height, width, channels), (origin_x, origin_y), cell_size)


def format_grid(grid: FeatureGrid) -> str:
    height, width, channels = grid.shape
    header = f"GRID {height} {width} {channels} {grid.origin[0]!r} {grid.origin[1]!r} {grid.cell_size!r}"
    rows = [" ".join(repr(float(v)) for v in row) for row in grid.cells.reshape(height, -1)]
    return "\n".join([header, *rows]) + "\n"


def read_grid(path: str) -> FeatureGrid:
    with fsspec.open(path, "r") as handle:
        return parse_grid(handle.read())


def write_grid(grid: FeatureGrid, path: str) -> None:
    with fsspec.open(path, "w") as handle:
        handle.write(format_grid(grid))
