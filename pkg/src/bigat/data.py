"""
Track-file ingestion, 20-step window extraction and hold-one-out splits.

Track files are whitespace separated ``frame ped x y`` rows in meters, one
row per pedestrian per 0.4 s frame (the ETH/UCY community release layout).
A dataset directory keeps one sub-directory per scene::

    data/
      eth/     *.txt  [scene.grid]
      hotel/   *.txt
      ...
"""

from __future__ import annotations

import logging
import math
import posixpath
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from difflib import get_close_matches
from functools import reduce
from typing import Iterable, Mapping, Optional, Sequence

import fsspec
import numpy as np
import pandas as pd

from . import constants as _ct
from .errors import ConfigError, ContractError, TrackParseError
from .scene import FeatureGrid, SceneSample, TrajectoryWindow, read_grid

logger = logging.getLogger("bigat.data")

TRACK_COLUMNS = ["frame", "ped", "x", "y"]


@dataclass(frozen=True)
class RawTrackRow:
    frame: int
    pedestrian_id: int
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ContractError(f"non-finite coordinates for pedestrian {self.pedestrian_id} at frame {self.frame}")


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train: list[SceneSample]
    test: list[SceneSample]
    held_out: str
    train_files: tuple[str, ...] = field(default_factory=tuple)
    test_files: tuple[str, ...] = field(default_factory=tuple)


# ------------------------------------------------------------------ parsing


def parse_tracks_text(text: str, path: Optional[str] = None) -> pd.DataFrame:
    """
    Parse track text into a frame with columns frame, ped, x, y (plus ``line``).

    Rows come back sorted by (frame, ped). Frame and pedestrian ids may be written
    as floats (``10.0``) but must be integral.
    """
    records = []
    for number, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if len(tokens) != 4:
            raise TrackParseError(
                f"line {number}: expected 4 fields 'frame ped x y', got {len(tokens)}",
                path=path,
                line_number=number,
                line=raw,
            )
        records.append((number, *tokens))
    if not records:
        return pd.DataFrame({"line": pd.Series(dtype=int), **{c: pd.Series(dtype=float) for c in TRACK_COLUMNS}})

    df = pd.DataFrame.from_records(records, columns=["line", *TRACK_COLUMNS])
    numeric = df[TRACK_COLUMNS].apply(pd.to_numeric, errors="coerce")
    bad = ~np.isfinite(numeric.to_numpy(dtype=np.float64)).all(axis=1)
    bad |= (numeric[["frame", "ped"]] != numeric[["frame", "ped"]].round()).any(axis=1).to_numpy()
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        number = int(df["line"].iloc[first])
        raise TrackParseError(
            f"line {number}: malformed row {text.splitlines()[number - 1].strip()!r}",
            path=path,
            line_number=number,
            line=text.splitlines()[number - 1],
        )

    parsed = pd.DataFrame(
        {
            "line": df["line"].astype(int),
            "frame": numeric["frame"].astype(np.int64),
            "ped": numeric["ped"].astype(np.int64),
            "x": numeric["x"].astype(np.float64),
            "y": numeric["y"].astype(np.float64),
        }
    )
    duplicated = parsed.duplicated(subset=["frame", "ped"], keep="first")
    if duplicated.any():
        number = int(parsed.loc[duplicated, "line"].iloc[0])
        raise TrackParseError(
            f"line {number}: duplicate (frame, ped) pair",
            path=path,
            line_number=number,
            line=text.splitlines()[number - 1],
        )
    return parsed.sort_values(["frame", "ped"], kind="stable").reset_index(drop=True)


def read_tracks_frame(path: str) -> pd.DataFrame:
    with fsspec.open(path, "r") as handle:
        return parse_tracks_text(handle.read(), path=path)


def parse_tracks(source: str, *, is_text: bool = False) -> list[RawTrackRow]:
    """Parse a track file (or, with ``is_text``, the file's contents) into sorted rows."""
    frame = parse_tracks_text(source) if is_text else read_tracks_frame(source)
    return rows_from_frame(frame)


def rows_from_frame(frame: pd.DataFrame) -> list[RawTrackRow]:
    return [
        RawTrackRow(int(f), int(p), float(x), float(y))
        for f, p, x, y in frame[TRACK_COLUMNS].itertuples(index=False, name=None)
    ]


def rows_to_frame(rows: Iterable[RawTrackRow]) -> pd.DataFrame:
    records = [(r.frame, r.pedestrian_id, r.x, r.y) for r in rows]
    df = pd.DataFrame.from_records(records, columns=TRACK_COLUMNS)
    return df.astype({"frame": np.int64, "ped": np.int64, "x": np.float64, "y": np.float64})


def format_tracks(rows: Iterable[RawTrackRow]) -> str:
    df = rows_to_frame(rows).sort_values(["frame", "ped"], kind="stable")
    return df.to_csv(sep="\t", header=False, index=False, lineterminator="\n")


def write_tracks(rows: Iterable[RawTrackRow], path: str) -> None:
    with fsspec.open(path, "w") as handle:
        handle.write(format_tracks(rows))


# ------------------------------------------------------------------ windows


def frame_step(frames: Sequence[int]) -> int:
    """Common spacing of the distinct frame ids (1 for a single frame)."""
    unique = np.unique(np.asarray(frames, dtype=np.int64))
    if unique.size < 2:
        return 1
    return int(reduce(math.gcd, np.diff(unique).tolist()))


def _warn_on_gaps(df: pd.DataFrame, step: int, scene_id: str) -> None:
    spans = df.groupby("ped")["frame"].agg(["min", "max", "count"])
    expected = (spans["max"] - spans["min"]) // step + 1
    gapped = spans.index[expected != spans["count"]].tolist()
    if gapped:
        logger.warning(
            "%s: %d pedestrian(s) have frame gaps and leave every window that spans a gap: %s",
            scene_id or "tracks",
            len(gapped),
            gapped[:10],
        )


def build_windows(
    rows: Sequence[RawTrackRow] | pd.DataFrame,
    t_obs: int = _ct.T_OBS,
    t_fut: int = _ct.T_FUT,
    stride: int = 1,
    *,
    grid: Optional[FeatureGrid] = None,
    scene_id: str = "",
) -> list[SceneSample]:
    """
    Slide a (t_obs + t_fut)-frame window over the distinct frames.

    A pedestrian joins a window only if it is present at every one of its
    frames; windows with nobody fully present are dropped. Positions stay in meters.
    """
    if (t_obs, t_fut) != (_ct.T_OBS, _ct.T_FUT):
        raise ContractError(f"windows are fixed at {_ct.T_OBS}+{_ct.T_FUT} steps, got {t_obs}+{t_fut}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    df = rows if isinstance(rows, pd.DataFrame) else rows_to_frame(rows)
    if df.empty:
        return []

    length = t_obs + t_fut
    step = frame_step(df["frame"].to_numpy())
    _warn_on_gaps(df, step, scene_id)
    frames = np.unique(df["frame"].to_numpy())

    scenes: list[SceneSample] = []
    for start in frames[::stride]:
        window_frames = start + step * np.arange(length)
        if window_frames[-1] > frames[-1]:
            break
        inside = df[df["frame"].isin(window_frames)]
        counts = inside.groupby("ped").size()
        present = sorted(int(p) for p in counts.index[counts == length])
        if not present:
            continue
        pedestrians = []
        for ped in present:
            own = inside[inside["ped"] == ped].sort_values("frame")
            track = own[["x", "y"]].to_numpy(dtype=np.float64)
            pedestrians.append(TrajectoryWindow(ped, track[:t_obs], track[t_obs:]))
        label = f"{scene_id}@{int(start)}" if scene_id else f"frame{int(start)}"
        scenes.append(SceneSample(tuple(pedestrians), grid=grid, scene_id=label))
    logger.debug("%s: %d window(s) from %d frame(s)", scene_id or "tracks", len(scenes), len(frames))
    return scenes


def to_displacements(window: TrajectoryWindow) -> np.ndarray:
    """Per-step displacements of every known position; the first is (0, 0)."""
    positions = window.positions if window.future is not None else window.observed
    rel = np.zeros_like(positions)
    rel[1:] = np.diff(positions, axis=0)
    return rel


def from_displacements(displacements: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Invert ``to_displacements`` given the first position."""
    return np.asarray(start, dtype=np.float64) + np.cumsum(np.asarray(displacements, dtype=np.float64), axis=0)


# ---------------------------------------------------------------- datasets


def _grid_beside(path: str) -> Optional[FeatureGrid]:
    fs, root = fsspec.core.url_to_fs(path)
    candidate = posixpath.join(posixpath.dirname(root), _ct.GRID_FILE_NAME)
    if fs.exists(candidate):
        return read_grid(fs.unstrip_protocol(candidate))
    return None


def load_track_file(
    path: str,
    *,
    stride: int = 1,
    grid: Optional[FeatureGrid] = None,
    find_grid: bool = True,
    scene_id: Optional[str] = None,
) -> list[SceneSample]:
    """Parse one track file into windows, attaching the scene grid found beside it."""
    if grid is None and find_grid:
        grid = _grid_beside(path)
    name = scene_id or posixpath.splitext(posixpath.basename(path))[0]
    scenes = build_windows(read_tracks_frame(path), stride=stride, grid=grid, scene_id=name)
    logger.info("loaded %s: %d scene(s), %d pedestrian window(s)", path, len(scenes), sum(len(s) for s in scenes))
    return scenes


def load_track_files(paths: Sequence[str], *, stride: int = 1, workers: int = 4) -> list[SceneSample]:
    """Load many files concurrently; output keeps the order of ``paths``."""
    if not paths:
        return []
    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(paths)))) as executor:
        chunks = list(executor.map(lambda p: load_track_file(p, stride=stride), paths))
    return [scene for chunk in chunks for scene in chunk]


def discover_scene_files(data_dir: str) -> dict[str, list[str]]:
    """Map each known scene name to the track files under ``<data_dir>/<scene>/``."""
    fs, root = fsspec.core.url_to_fs(data_dir)
    found: dict[str, list[str]] = {}
    for name in _ct.SCENE_NAMES:
        matches = sorted(fs.glob(posixpath.join(root, name, "*.txt")))
        if matches:
            found[name] = [fs.unstrip_protocol(m) for m in matches]
    if not found:
        logger.warning("no track files found under %s", data_dir)
    return found


def check_scene_name(name: str) -> str:
    key = name.strip().lower()
    if key not in _ct.SCENE_NAMES:
        suggestions = get_close_matches(key, _ct.SCENE_NAMES, n=3, cutoff=0.5)
        hint = f" Did you mean: {', '.join(suggestions)}?" if suggestions else ""
        raise ConfigError(
            f"unknown scene '{name}'; expected one of {', '.join(_ct.SCENE_NAMES)}.{hint}",
            key="holdout",
            suggestions=suggestions,
        )
    return key


def hold_one_out_split(
    files_by_scene: Mapping[str, Sequence[str]],
    held_out: str,
    *,
    stride: int = 1,
    workers: int = 4,
) -> DatasetSplit:
    """Train on every scene but ``held_out``, test on ``held_out``."""
    held_out = check_scene_name(held_out)
    for name in files_by_scene:
        check_scene_name(name)
    missing = [name for name in _ct.SCENE_NAMES if name not in files_by_scene]
    if missing:
        logger.warning("hold-one-out split without scene set(s): %s", ", ".join(missing))
    train_files = tuple(p for name in _ct.SCENE_NAMES if name != held_out for p in files_by_scene.get(name, ()))
    test_files = tuple(files_by_scene.get(held_out, ()))
    return DatasetSplit(
        train=load_track_files(train_files, stride=stride, workers=workers),
        test=load_track_files(test_files, stride=stride, workers=workers),
        held_out=held_out,
        train_files=train_files,
        test_files=test_files,
    )


# ------------------------------------------------------------ split manifest


def format_split_manifest(split: DatasetSplit) -> str:
    lines = [f"held_out: {split.held_out}", "train:", *split.train_files, "test:", *split.test_files]
    return "\n".join(lines) + "\n"


def write_split_manifest(split: DatasetSplit, path: str) -> None:
    with fsspec.open(path, "w") as handle:
        handle.write(format_split_manifest(split))


def parse_split_manifest(text: str) -> tuple[str, list[str], list[str]]:
    """Return (held_out, train_files, test_files); ``held_out`` may be empty."""
    held_out = ""
    sections: dict[str, list[str]] = {"train": [], "test": []}
    current: Optional[str] = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("held_out:"):
            held_out = check_scene_name(line.split(":", 1)[1])
        elif line in ("train:", "test:"):
            current = line[:-1]
        elif current is None:
            raise ConfigError(f"split manifest line {number}: path before a 'train:' or 'test:' header", key="split")
        else:
            sections[current].append(line)
    overlap = set(sections["train"]) & set(sections["test"])
    if overlap:
        raise ConfigError(f"split manifest lists file(s) on both sides: {sorted(overlap)[:3]}", key="split")
    return held_out, sections["train"], sections["test"]


def load_split_manifest(path: str, *, stride: int = 1, workers: int = 4) -> DatasetSplit:
    with fsspec.open(path, "r") as handle:
        held_out, train_files, test_files = parse_split_manifest(handle.read())
    return DatasetSplit(
        train=load_track_files(train_files, stride=stride, workers=workers),
        test=load_track_files(test_files, stride=stride, workers=workers),
        held_out=held_out,
        train_files=tuple(train_files),
        test_files=tuple(test_files),
    )
