"""
Synthetic scenes with known structure.

- ``constant-velocity``: straight lines plus Gaussian jitter.
- ``social-forces``: goal attraction and pairwise repulsion, integrated every 0.4 s.
- ``bimodal-avoidance``: two pedestrians walk head-on and the scripted one
  passes left or right with equal probability; the side is the scene's mode label.

Every scene is generated from its own generator seeded with ``(seed, index)``,
so a dataset is reproducible bit for bit and scenes do not depend on each other.
Written files place scene ``i`` in its own block of 20 frames, ``FRAME_STEP``
apart, with pedestrian ids ``100 * i + j``.
"""

from __future__ import annotations

import logging
import posixpath
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import fsspec
import numpy as np
import pandas as pd

from . import constants as _ct
from .data import RawTrackRow, write_tracks
from .errors import ConfigError
from .scene import SceneSample, TrajectoryWindow

logger = logging.getLogger("bigat.synth")

SYNTH_KINDS = ("constant-velocity", "social-forces", "bimodal-avoidance")
FRAME_STEP = 10
MAX_PEDESTRIANS = 99

# social-force constants (meters, seconds)
DESIRED_SPEED = 1.3
RELAXATION_TIME = 0.5
REPULSION_STRENGTH = 2.0
REPULSION_RANGE = 0.3
BODY_DIAMETER = 0.6
SUBSTEPS = 4


@dataclass(frozen=True)
class SynthSpec:
    kind: str = "constant-velocity"
    scenes: int = 100
    min_pedestrians: int = 1
    max_pedestrians: int = 4
    noise: float = 0.0
    seed: int = 0
    lateral_offset: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in SYNTH_KINDS:
            raise ConfigError(f"unknown synthetic kind '{self.kind}'; choose from {', '.join(SYNTH_KINDS)}", key="kind")
        if self.scenes < 1:
            raise ConfigError("scenes must be >= 1", key="scenes")
        if not 1 <= self.min_pedestrians <= self.max_pedestrians <= MAX_PEDESTRIANS:
            raise ConfigError(
                f"pedestrian range must satisfy 1 <= min <= max <= {MAX_PEDESTRIANS}, "
                f"got [{self.min_pedestrians}, {self.max_pedestrians}]",
                key="pedestrians",
            )
        if not self.noise >= 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}", key="noise")


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    spec: SynthSpec
    scenes: list[SceneSample]
    modes: Optional[list[str]] = None
    first_frames: list[int] = field(default_factory=list)


def _to_scene(paths: np.ndarray, index: int, kind: str, mode: Optional[str] = None) -> SceneSample:
    windows = tuple(
        TrajectoryWindow(100 * index + j, path[: _ct.T_OBS], path[_ct.T_OBS :]) for j, path in enumerate(paths)
    )
    labels = {"mode": mode} if mode else {}
    return SceneSample(windows, scene_id=f"{kind}@{first_frame(index)}", labels=labels)


def first_frame(index: int) -> int:
    return index * _ct.T_TOTAL * FRAME_STEP


def _jitter(paths: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    if noise == 0:
        return paths
    return paths + rng.normal(0.0, noise, size=paths.shape)


def constant_velocity_paths(count: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    """count x 20 x 2 straight walks at 0.8-1.6 m/s."""
    starts = rng.uniform(-5.0, 5.0, size=(count, 2))
    headings = rng.uniform(0.0, 2 * np.pi, size=count)
    speeds = rng.uniform(0.8, 1.6, size=count)
    steps = (speeds * _ct.TIMESTEP_SECONDS)[:, None] * np.stack([np.cos(headings), np.sin(headings)], axis=1)
    t = np.arange(_ct.T_TOTAL, dtype=np.float64)
    paths = starts[:, None, :] + t[None, :, None] * steps[:, None, :]
    return _jitter(paths, noise, rng)


def social_force_rollout(
    starts: np.ndarray,
    goals: np.ndarray,
    steps: int = _ct.T_TOTAL,
    desired_speed: float = DESIRED_SPEED,
) -> np.ndarray:
    """
    Integrate the social-force model and sample positions every 0.4 s.

    Returns ``len(starts) x steps x 2``; the first sample is the start position.
    """
    position = np.array(starts, dtype=np.float64)
    goals = np.asarray(goals, dtype=np.float64)
    velocity = np.zeros_like(position)
    dt = _ct.TIMESTEP_SECONDS / SUBSTEPS
    samples = [position.copy()]
    for _ in range(steps - 1):
        for _ in range(SUBSTEPS):
            to_goal = goals - position
            distance_to_goal = np.linalg.norm(to_goal, axis=1, keepdims=True)
            direction = np.divide(to_goal, distance_to_goal, out=np.zeros_like(to_goal), where=distance_to_goal > 1e-9)
            force = (desired_speed * direction - velocity) / RELAXATION_TIME

            offsets = position[:, None, :] - position[None, :, :]
            gaps = np.linalg.norm(offsets, axis=2)
            np.fill_diagonal(gaps, np.inf)
            normals = np.divide(offsets, gaps[..., None], out=np.zeros_like(offsets), where=np.isfinite(gaps)[..., None])
            magnitude = REPULSION_STRENGTH * np.exp((BODY_DIAMETER - gaps) / REPULSION_RANGE)
            force += np.sum(magnitude[..., None] * normals, axis=1)

            velocity = velocity + dt * force
            speed = np.linalg.norm(velocity, axis=1, keepdims=True)
            cap = 1.3 * desired_speed
            velocity = np.where(speed > cap, velocity * cap / np.maximum(speed, 1e-12), velocity)
            position = position + dt * velocity
        samples.append(position.copy())
    return np.stack(samples, axis=1)


def social_force_paths(count: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Pedestrians cross a circle of radius 4-6 m towards roughly antipodal goals."""
    angles = rng.uniform(0.0, 2 * np.pi, size=count)
    radius = rng.uniform(4.0, 6.0, size=count)
    starts = radius[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    goal_angles = angles + np.pi + rng.normal(0.0, 0.2, size=count)
    goals = radius[:, None] * np.stack([np.cos(goal_angles), np.sin(goal_angles)], axis=1)
    return _jitter(social_force_rollout(starts, goals), noise, rng)


def bimodal_paths(
    noise: float, lateral_offset: float, rng: np.random.Generator
) -> tuple[np.ndarray, str]:
    """
    Two pedestrians meet head-on around step 12. The observed steps are the same
    for both modes; in the future phase the scripted walker (row 0) eases to
    ``+lateral_offset`` (left) or ``-lateral_offset`` (right) in y.
    """
    mode = "left" if rng.random() < 0.5 else "right"
    speed = rng.uniform(1.0, 1.4)
    lane = rng.uniform(-0.2, 0.2)
    step = speed * _ct.TIMESTEP_SECONDS
    t = np.arange(_ct.T_TOTAL, dtype=np.float64)
    meet = 12.0

    scripted = np.stack([(t - meet) * step, np.full_like(t, lane)], axis=1)
    ramp = np.clip((t - (_ct.T_OBS - 1)) / 4.0, 0.0, 1.0)
    side = 1.0 if mode == "left" else -1.0
    scripted[:, 1] += side * lateral_offset * np.sin(0.5 * np.pi * ramp) ** 2

    oncoming = np.stack([(meet - t) * step, np.full_like(t, lane)], axis=1)
    paths = np.stack([scripted, oncoming])
    return _jitter(paths, noise, rng), mode


def synth_generate(spec: SynthSpec) -> SyntheticDataset:
    scenes: list[SceneSample] = []
    modes: list[str] = []
    for index in range(spec.scenes):
        rng = np.random.default_rng([spec.seed, index])
        if spec.kind == "bimodal-avoidance":
            paths, mode = bimodal_paths(spec.noise, spec.lateral_offset, rng)
            modes.append(mode)
            scenes.append(_to_scene(paths, index, spec.kind, mode))
            continue
        count = int(rng.integers(spec.min_pedestrians, spec.max_pedestrians + 1))
        if spec.kind == "constant-velocity":
            paths = constant_velocity_paths(count, spec.noise, rng)
        else:
            paths = social_force_paths(count, spec.noise, rng)
        scenes.append(_to_scene(paths, index, spec.kind))
    logger.info("generated %d %s scene(s) (seed %d)", len(scenes), spec.kind, spec.seed)
    return SyntheticDataset(
        spec=spec,
        scenes=scenes,
        modes=modes or None,
        first_frames=[first_frame(i) for i in range(spec.scenes)],
    )


# ------------------------------------------------------------------ output


def synthetic_rows(dataset: SyntheticDataset) -> list[RawTrackRow]:
    rows: list[RawTrackRow] = []
    for scene, start in zip(dataset.scenes, dataset.first_frames):
        positions = np.concatenate([scene.observed, scene.future], axis=1)
        for t in range(_ct.T_TOTAL):
            frame = start + t * FRAME_STEP
            for ped, (x, y) in zip(scene.pedestrian_ids, positions[:, t]):
                rows.append(RawTrackRow(frame, ped, float(x), float(y)))
    return rows


def modes_path(tracks_path: str) -> str:
    return f"{tracks_path}.modes.csv"


def mode_table(dataset: SyntheticDataset, tracks_path: str) -> pd.DataFrame:
    """Mode labels keyed by the scene ids ``load_track_file`` assigns to ``tracks_path``."""
    stem = posixpath.splitext(posixpath.basename(tracks_path))[0]
    ids = [f"{stem}@{start}" for start in dataset.first_frames]
    return pd.DataFrame({"scene_id": ids, "mode": dataset.modes}, columns=_ct.MODE_LABEL_COLUMNS)


def write_synthetic(dataset: SyntheticDataset, path: str) -> list[str]:
    """Write the track file (and the mode sidecar for bimodal data); returns the paths written."""
    write_tracks(synthetic_rows(dataset), path)
    written = [path]
    if dataset.modes:
        sidecar = modes_path(path)
        with fsspec.open(sidecar, "w") as handle:
            mode_table(dataset, path).to_csv(handle, index=False, lineterminator="\n")
        written.append(sidecar)
    logger.info("wrote %s", ", ".join(written))
    return written


def read_mode_labels(path: str) -> dict[str, str]:
    with fsspec.open(path, "r") as handle:
        table = pd.read_csv(handle, dtype=str)
    missing = set(_ct.MODE_LABEL_COLUMNS) - set(table.columns)
    if missing:
        raise ConfigError(f"mode label file {path} lacks column(s) {sorted(missing)}", key="modes")
    return dict(zip(table["scene_id"], table["mode"]))


def attach_mode_labels(scenes: Sequence[SceneSample], labels: dict[str, str]) -> list[SceneSample]:
    """Copy scenes, adding ``labels['mode']`` where the scene id is known."""
    out = []
    for scene in scenes:
        mode = labels.get(scene.scene_id)
        out.append(replace(scene, labels={**scene.labels, "mode": mode}) if mode else scene)
    return out
