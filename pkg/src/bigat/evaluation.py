"""
Displacement metrics, best-of-K evaluation and the experiment harnesses
built on them.

Averaging is always per pedestrian inside a scene window first, then across
windows. Sampling for scene ``i`` uses ``np.random.default_rng([seed, i])``
and draws its K latent codes in sequence, so the first K codes of a larger
draw are exactly the codes of a smaller one.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from . import constants as _ct
from .data import check_scene_name, hold_one_out_split
from .errors import ConfigError, ContractError
from .model import BigatModel, ModelConfig, PredictedScene
from .scene import SceneSample

logger = logging.getLogger("bigat.evaluation")

BEST_OF_K_MODES = ("min-ade", "independent")

Sampler = Callable[[SceneSample, int, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class MetricResult:
    ade: float
    fde: float
    k: int
    scene: str
    n_pedestrians: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ContractError(f"k must be >= 1, got {self.k}")
        if not (self.ade >= 0 and self.fde >= 0):
            raise ContractError(f"metrics must be nonnegative, got ade={self.ade}, fde={self.fde}")

    def as_row(self) -> dict[str, object]:
        return dict(zip(_ct.METRICS_CSV_COLUMNS, (self.scene, self.k, self.ade, self.fde, self.n_pedestrians)))


# ----------------------------------------------------------------- metrics


def _check_pair(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim < 2 or pred.shape[-1] != 2:
        raise ContractError(f"prediction {pred.shape} and truth {truth.shape} must be equal-length (T, 2) paths")
    if pred.shape[-2] < 1:
        raise ContractError("paths must contain at least one position")
    return pred, truth


def ade(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean Euclidean distance over the timesteps, in meters."""
    pred, truth = _check_pair(pred, truth)
    return float(np.mean(np.linalg.norm(pred - truth, axis=-1)))


def fde(pred: np.ndarray, truth: np.ndarray) -> float:
    """Euclidean distance at the final timestep."""
    pred, truth = _check_pair(pred, truth)
    return float(np.mean(np.linalg.norm(pred[..., -1, :] - truth[..., -1, :], axis=-1)))


def _sample_errors(samples: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(ADE, FDE) arrays of shape K x N for K samples of N pedestrians."""
    distances = np.linalg.norm(samples - truth[None], axis=-1)
    return distances.mean(axis=-1), distances[..., -1]


def best_of_k_errors(samples: np.ndarray, truth: np.ndarray, mode: str = "min-ade") -> tuple[np.ndarray, np.ndarray]:
    """
    Per-pedestrian best errors over K samples (K x N x 12 x 2 against N x 12 x 2).

    ``min-ade`` reports the FDE of the minimum-ADE sample; ``independent``
    takes both minima separately.
    """
    if mode not in BEST_OF_K_MODES:
        raise ConfigError(f"unknown best-of-k mode '{mode}'; choose from {', '.join(BEST_OF_K_MODES)}", key="best_of_k_mode")
    samples = np.asarray(samples, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if samples.ndim != 4 or samples.shape[1:] != truth.shape:
        raise ContractError(f"samples {samples.shape} do not match truth {truth.shape}")
    ade_k, fde_k = _sample_errors(samples, truth)
    if mode == "independent":
        return ade_k.min(axis=0), fde_k.min(axis=0)
    best = np.argmin(ade_k, axis=0)
    columns = np.arange(ade_k.shape[1])
    return ade_k[best, columns], fde_k[best, columns]


# ---------------------------------------------------------------- sampling


def model_sampler(model: BigatModel) -> Sampler:
    """Draw ``k`` codes in sequence from ``rng`` and decode each; returns K x N x 12 x 2."""

    def sample(scene: SceneSample, k: int, rng: np.random.Generator) -> np.ndarray:
        return np.stack([model.predict(scene, model.draw_latent(rng)).positions for _ in range(k)])

    return sample


def baseline_sampler(scene: SceneSample, k: int, rng: np.random.Generator) -> np.ndarray:
    return np.repeat(linear_baseline(scene).positions[None], k, axis=0)


def _per_scene(
    sampler: Sampler, scenes: Sequence[SceneSample], k: int, seed: int, workers: int
) -> list[np.ndarray]:
    def run(item: tuple[int, SceneSample]) -> np.ndarray:
        index, scene = item
        return sampler(scene, k, np.random.default_rng([seed, index]))

    if workers <= 1:
        return [run(item) for item in enumerate(scenes)]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(run, enumerate(scenes)))


def _summarize(
    samples: Sequence[np.ndarray], scenes: Sequence[SceneSample], k: int, mode: str, name: str
) -> MetricResult:
    ades, fdes = [], []
    for scene_samples, scene in zip(samples, scenes):
        ade_n, fde_n = best_of_k_errors(scene_samples[:k], scene.future, mode)
        ades.append(ade_n.mean())
        fdes.append(fde_n.mean())
    return MetricResult(
        ade=float(np.mean(ades)),
        fde=float(np.mean(fdes)),
        k=k,
        scene=name,
        n_pedestrians=sum(len(s) for s in scenes),
    )


def _evaluable(scenes: Sequence[SceneSample]) -> list[SceneSample]:
    kept = [s for s in scenes if s.has_future]
    if not kept:
        raise ContractError("evaluation needs at least one scene with ground-truth futures")
    if len(kept) < len(scenes):
        logger.warning("skipping %d scene(s) without ground truth", len(scenes) - len(kept))
    return kept


def evaluate_samples(
    sampler: Sampler,
    scenes: Sequence[SceneSample],
    k: int,
    *,
    seed: int = 0,
    mode: str = "min-ade",
    workers: int = 1,
    scene_name: str = "",
) -> MetricResult:
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    scenes = _evaluable(scenes)
    samples = _per_scene(sampler, scenes, k, seed, workers)
    result = _summarize(samples, scenes, k, mode, scene_name)
    logger.info("%s k=%d: ADE %.4f m, FDE %.4f m over %d window(s)", scene_name or "scenes", k, result.ade, result.fde, len(scenes))
    return result


def evaluate_best_of_k(
    model: BigatModel,
    scenes: Sequence[SceneSample],
    k: int,
    *,
    seed: int = 0,
    mode: str = "min-ade",
    workers: int = 1,
    scene_name: str = "",
) -> MetricResult:
    """Best-of-K ADE/FDE of ``model`` over ``scenes``; deterministic for a fixed seed."""
    return evaluate_samples(
        model_sampler(model), scenes, k, seed=seed, mode=mode, workers=workers, scene_name=scene_name
    )


def k_degradation_table(
    model: BigatModel,
    scenes: Sequence[SceneSample],
    ks: Sequence[int],
    *,
    seed: int = 0,
    mode: str = "min-ade",
    workers: int = 1,
    scene_name: str = "",
) -> pd.DataFrame:
    """
    Metrics for each K from one nested draw, plus the percent increase of each
    row over the largest K.
    """
    ks = sorted({int(k) for k in ks}, reverse=True)
    if not ks or ks[-1] < 1:
        raise ContractError(f"k values must be >= 1, got {ks}")
    scenes = _evaluable(scenes)
    samples = _per_scene(model_sampler(model), scenes, ks[0], seed, workers)
    results = [_summarize(samples, scenes, k, mode, scene_name) for k in ks]
    table = pd.DataFrame([r.as_row() for r in results], columns=_ct.METRICS_CSV_COLUMNS)
    reference = results[0]
    table["ade_increase_pct"] = 100.0 * (table["ade"] / reference.ade - 1.0) if reference.ade > 0 else 0.0
    table["fde_increase_pct"] = 100.0 * (table["fde"] / reference.fde - 1.0) if reference.fde > 0 else 0.0
    return table


def metrics_table(results: Sequence[MetricResult], average: bool = True) -> pd.DataFrame:
    """One row per result plus an ``AVG`` row (macro average of the rows)."""
    table = pd.DataFrame([r.as_row() for r in results], columns=_ct.METRICS_CSV_COLUMNS)
    if average and len(results) > 1:
        ks = {r.k for r in results}
        avg = {
            "scene": "AVG",
            "k": ks.pop() if len(ks) == 1 else -1,
            "ade": float(table["ade"].mean()),
            "fde": float(table["fde"].mean()),
            "n_pedestrians": int(table["n_pedestrians"].sum()),
        }
        table = pd.concat([table, pd.DataFrame([avg], columns=_ct.METRICS_CSV_COLUMNS)], ignore_index=True)
    return table


# ----------------------------------------------------------------- baseline


def linear_baseline(scene: SceneSample) -> PredictedScene:
    """Per pedestrian and axis, fit ``a + b t`` to the observed steps and extrapolate."""
    observed = scene.observed
    n = observed.shape[0]
    t_obs = np.arange(_ct.T_OBS, dtype=np.float64)
    t_fut = np.arange(_ct.T_OBS, _ct.T_TOTAL, dtype=np.float64)
    design = np.stack([np.ones_like(t_obs), t_obs], axis=1)
    targets = observed.transpose(1, 0, 2).reshape(_ct.T_OBS, n * 2)
    coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
    future = np.stack([np.ones_like(t_fut), t_fut], axis=1) @ coef
    positions = future.reshape(_ct.T_FUT, n, 2).transpose(1, 0, 2)
    return PredictedScene(
        positions=positions,
        latent=np.zeros(0),
        pedestrian_ids=scene.pedestrian_ids,
        scene_id=scene.scene_id,
    )


def evaluate_baseline(scenes: Sequence[SceneSample], *, scene_name: str = "") -> MetricResult:
    return evaluate_samples(baseline_sampler, scenes, 1, scene_name=scene_name)


# ------------------------------------------------------------------ exports


def latent_grid(latent_dim: int, values: Sequence[float], axis: int = 0) -> np.ndarray:
    """Codes that are zero except along ``axis``, one per value."""
    if not 0 <= axis < latent_dim:
        raise ContractError(f"axis {axis} outside latent size {latent_dim}")
    grid = np.zeros((len(values), latent_dim))
    grid[:, axis] = np.asarray(values, dtype=np.float64)
    return grid


def trajectory_rows(prediction: PredictedScene, z_index: int) -> pd.DataFrame:
    n = prediction.positions.shape[0]
    ped = np.repeat(np.asarray(prediction.pedestrian_ids, dtype=np.int64), _ct.T_FUT)
    t = np.tile(np.arange(_ct.T_FUT, dtype=np.int64), n)
    xy = prediction.positions.reshape(n * _ct.T_FUT, 2)
    return pd.DataFrame(
        {"z_index": z_index, "ped_id": ped, "t": t, "x": xy[:, 0], "y": xy[:, 1]},
        columns=_ct.TRAJECTORY_CSV_COLUMNS,
    )


def latent_sweep(model: BigatModel, scene: SceneSample, z_grid: np.ndarray) -> pd.DataFrame:
    """
    Decode the scene once per code in ``z_grid``; rows ``z_index, ped_id, t, x, y``
    with ``t`` counting predicted steps from 0.
    """
    z_grid = np.atleast_2d(np.asarray(z_grid, dtype=np.float64))
    if z_grid.shape[1] != model.config.latent_dim:
        raise ContractError(f"z grid has width {z_grid.shape[1]}, model latent size is {model.config.latent_dim}")
    frames = [trajectory_rows(model.predict(scene, z), index) for index, z in enumerate(z_grid)]
    return pd.concat(frames, ignore_index=True)


def sample_table(
    model: BigatModel, scenes: Sequence[SceneSample], samples: int, *, seed: int = 0, workers: int = 1
) -> pd.DataFrame:
    """``samples`` predictions per scene as ``scene_id, z_index, ped_id, t, x, y`` rows."""
    if samples < 1:
        raise ContractError(f"samples must be >= 1, got {samples}")

    def sampler(scene: SceneSample, k: int, rng: np.random.Generator) -> pd.DataFrame:
        rows = [trajectory_rows(model.predict(scene, model.draw_latent(rng)), i) for i in range(k)]
        table = pd.concat(rows, ignore_index=True)
        table.insert(0, "scene_id", scene.scene_id)
        return table

    tables = _per_scene(sampler, list(scenes), samples, seed, workers)
    return pd.concat(tables, ignore_index=True)


# ------------------------------------------------------------------ holdout


def holdout_experiment(
    files_by_scene: Mapping[str, Sequence[str]],
    model_config: ModelConfig,
    *,
    train: Callable[[BigatModel, list[SceneSample]], object],
    k: int = 20,
    seed: int = 0,
    held_out: Optional[str] = None,
    stride: int = 1,
    mode: str = "min-ade",
    workers: int = 1,
) -> pd.DataFrame:
    """
    Rotate the held-out scene, train a fresh model on the other four with
    ``train(model, scenes)``, and report best-of-K per held-out scene plus AVG.
    """
    names = [check_scene_name(held_out)] if held_out else [n for n in _ct.SCENE_NAMES if n in files_by_scene]
    if not names:
        raise ConfigError("no scene sets available for hold-one-out evaluation", key="data_dir")
    results = []
    for name in names:
        split = hold_one_out_split(files_by_scene, name, stride=stride, workers=max(1, workers))
        if not split.train or not split.test:
            logger.warning("skipping %s: %d train / %d test windows", name, len(split.train), len(split.test))
            continue
        model = BigatModel.create(model_config, seed=seed)
        train(model, split.train)
        results.append(
            evaluate_best_of_k(model, split.test, k, seed=seed, mode=mode, workers=workers, scene_name=name)
        )
    if not results:
        raise ContractError("hold-one-out produced no evaluable split")
    return metrics_table(results)
