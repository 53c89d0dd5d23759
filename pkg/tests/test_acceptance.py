"""
Slow end-to-end training runs on synthetic data.

Skipped by default; run with ``pytest --run-slow``.
"""

from __future__ import annotations

import numpy as np
import pytest

from bigat import constants as _ct
from bigat.autodiff import no_grad
from bigat.data import load_track_file
from bigat.evaluation import (
    evaluate_baseline,
    evaluate_best_of_k,
    k_degradation_table,
    latent_grid,
    latent_sweep,
    model_sampler,
)
from bigat.model import BigatModel, ModelConfig
from bigat.scene import SceneSample
from bigat.synth import SynthSpec, attach_mode_labels, modes_path, read_mode_labels, synth_generate, write_synthetic
from bigat.training import OptimizerConfig, fit, loss_path_noise

from .conftest import TINY

pytestmark = pytest.mark.slow


def test_training_on_constant_velocity_lowers_the_trajectory_loss():
    scenes = synth_generate(SynthSpec(scenes=50, max_pedestrians=3, noise=0.01, seed=0)).scenes
    model = BigatModel.create(ModelConfig(**TINY), seed=0)

    log = fit(model, scenes, epochs=4, max_steps=200, seed=0)

    assert len(log) == 200
    assert np.all(np.isfinite(log.drop(columns="step").to_numpy()))
    assert log["L_traj"].tail(20).mean() < log["L_traj"].head(20).mean()


def test_more_samples_help_on_bimodal_scenes():
    dataset = synth_generate(SynthSpec(kind="bimodal-avoidance", scenes=40, noise=0.01, seed=1))
    model = BigatModel.create(ModelConfig(**TINY), seed=1)
    fit(model, dataset.scenes, optimizer=OptimizerConfig(train_variety=True, variety_k=4), epochs=3, seed=1)

    table = k_degradation_table(model, dataset.scenes[:10], [1, 5, 20], seed=0, mode="independent")
    assert table["ade"].is_monotonic_increasing
    assert table["ade_increase_pct"].iloc[-1] >= 0.0


def test_trained_model_is_compared_against_the_linear_baseline():
    scenes = synth_generate(SynthSpec(scenes=30, max_pedestrians=2, seed=2)).scenes
    model = BigatModel.create(ModelConfig(**TINY), seed=2)
    fit(model, scenes, epochs=2, seed=2)

    baseline = evaluate_baseline(scenes)
    learned = evaluate_best_of_k(model, scenes, 20, seed=0)
    assert baseline.ade == pytest.approx(0.0, abs=1e-9)
    assert np.isfinite(learned.ade) and learned.ade >= baseline.ade


# ---------------------------------------------------------------- criteria

ACCEPTANCE = {**TINY, "embedding_dim": 8, "encoder_hidden": 16, "decoder_hidden": 16, "latent_dim": 2}


def _scripted_walker(scene: SceneSample) -> int:
    return int(np.argmin(scene.pedestrian_ids))


def _side(positions: np.ndarray, scene: SceneSample, index: int) -> str:
    """'left' or 'right' by the scripted walker's lateral offset at the middle of the prediction."""
    walker = _scripted_walker(scene)
    offset = positions[walker, index, 1] - scene.observed[walker, -1, 1]
    return "left" if offset > 0 else "right"


@pytest.fixture(scope="module")
def bimodal(tmp_path_factory) -> dict:
    train = synth_generate(SynthSpec(kind="bimodal-avoidance", scenes=1000, noise=0.02, seed=5))
    held_out = synth_generate(SynthSpec(kind="bimodal-avoidance", scenes=50, noise=0.02, seed=6))
    path = str(tmp_path_factory.mktemp("bimodal") / "test.txt")
    write_synthetic(held_out, path)
    labels = read_mode_labels(modes_path(path))
    test_scenes = [s for s in attach_mode_labels(load_track_file(path), labels) if "mode" in s.labels]

    model = BigatModel.create(ModelConfig(**ACCEPTANCE), seed=5)
    draws = np.random.default_rng(99).standard_normal((len(test_scenes), model.config.latent_dim))
    initial_lz = _mean_lz(model, test_scenes, draws)
    fit(model, train.scenes, optimizer=OptimizerConfig(train_variety=True, variety_k=4), epochs=2, seed=5)
    return {"model": model, "scenes": test_scenes, "draws": draws, "initial_lz": initial_lz}


def _mean_lz(model: BigatModel, scenes: list[SceneSample], draws: np.ndarray) -> float:
    with no_grad():
        return float(np.mean([loss_path_noise(model.config, model.store, s, z).l_z.item() for s, z in zip(scenes, draws)]))


def test_constant_velocity_training_approaches_the_linear_baseline():
    train = synth_generate(SynthSpec(scenes=500, max_pedestrians=3, noise=0.05, seed=3)).scenes
    # at 0.05 m the noise floor alone puts every predictor near 0.063 m ADE
    held_out = synth_generate(SynthSpec(scenes=100, max_pedestrians=3, noise=0.02, seed=4)).scenes
    model = BigatModel.create(ModelConfig(**ACCEPTANCE), seed=3)

    log = fit(model, train, epochs=4, max_steps=2000, seed=3)

    assert len(log) <= 2000
    baseline = evaluate_baseline(held_out)
    learned = evaluate_best_of_k(model, held_out, 1, seed=0)
    assert baseline.ade <= 0.05
    assert learned.ade <= 0.10
    assert learned.ade <= 2.0 * baseline.ade


def test_sampling_covers_both_passing_sides(bimodal: dict):
    model, scenes = bimodal["model"], bimodal["scenes"]
    assert len(scenes) == 50
    middle = _ct.T_FUT // 2
    for scene in scenes:
        assert _side(scene.future, scene, middle) == scene.labels["mode"]

    sampler = model_sampler(model)
    covered = 0
    for index, scene in enumerate(scenes):
        samples = sampler(scene, 20, np.random.default_rng([0, index]))
        sides = {_side(sample, scene, middle) for sample in samples}
        covered += sides == {"left", "right"}
    assert covered >= 0.8 * len(scenes)

    best_of_20 = evaluate_best_of_k(model, scenes, 20, seed=0)
    best_of_1 = evaluate_best_of_k(model, scenes, 1, seed=0)
    assert best_of_20.ade <= 0.6 * best_of_1.ade


def test_latent_sweep_separates_the_passing_sides(bimodal: dict):
    model, scene = bimodal["model"], bimodal["scenes"][0]
    walker_id = scene.pedestrian_ids[_scripted_walker(scene)]
    sides = set()
    for axis in range(model.config.latent_dim):
        table = latent_sweep(model, scene, latent_grid(model.config.latent_dim, [-2.0, -1.0, 0.0, 1.0, 2.0], axis))
        middle = table[(table["ped_id"] == walker_id) & (table["t"] == _ct.T_FUT // 2)]
        offsets = middle["y"].to_numpy() - scene.observed[_scripted_walker(scene), -1, 1]
        sides.update("left" if o > 0 else "right" for o in offsets)
    assert sides == {"left", "right"}


def test_latent_reconstruction_error_halves_after_training(bimodal: dict):
    trained_lz = _mean_lz(bimodal["model"], bimodal["scenes"], bimodal["draws"])
    assert trained_lz <= 0.5 * bimodal["initial_lz"]
