"""Synthetic scene generators and their on-disk layout."""

from __future__ import annotations

import numpy as np
import pytest

from bigat import constants as _ct
from bigat.data import load_track_file
from bigat.errors import ConfigError
from bigat.synth import (
    FRAME_STEP,
    SynthSpec,
    attach_mode_labels,
    bimodal_paths,
    modes_path,
    read_mode_labels,
    social_force_rollout,
    synth_generate,
    write_synthetic,
)


def test_constant_velocity_without_noise_is_a_straight_line():
    dataset = synth_generate(SynthSpec(kind="constant-velocity", scenes=5, seed=7))
    for scene in dataset.scenes:
        step = scene.observed[:, 1] - scene.observed[:, 0]
        t = np.arange(1, _ct.T_FUT + 1)[None, :, None]
        expected = scene.observed[:, -1:, :] + t * step[:, None, :]
        np.testing.assert_allclose(scene.future, expected, atol=1e-12)


def test_pedestrian_counts_follow_the_spec():
    dataset = synth_generate(SynthSpec(scenes=40, min_pedestrians=2, max_pedestrians=3, seed=1))
    counts = {len(scene) for scene in dataset.scenes}
    assert counts <= {2, 3}
    assert dataset.modes is None


def test_bimodal_modes_are_balanced():
    dataset = synth_generate(SynthSpec(kind="bimodal-avoidance", scenes=1000, seed=0))
    left = sum(mode == "left" for mode in dataset.modes)
    assert 0.45 <= left / 1000 <= 0.55
    assert all(scene.labels["mode"] in ("left", "right") for scene in dataset.scenes)


def test_bimodal_modes_share_the_observation_and_split_the_future():
    draws = {}
    seed = 0
    while len(draws) < 2:
        paths, mode = bimodal_paths(0.0, 1.0, np.random.default_rng(seed))
        draws.setdefault(mode, paths)
        seed += 1
    left, right = draws["left"], draws["right"]
    left_lane, right_lane = left[0, 0, 1], right[0, 0, 1]
    np.testing.assert_allclose(left[0, : _ct.T_OBS, 1], left_lane)
    np.testing.assert_allclose(right[0, : _ct.T_OBS, 1], right_lane)
    assert left[0, -1, 1] - left_lane == pytest.approx(1.0)
    assert right[0, -1, 1] - right_lane == pytest.approx(-1.0)


def test_social_forces_keep_head_on_walkers_apart():
    paths = social_force_rollout(np.array([[-4.0, 0.0], [4.0, 0.0]]), np.array([[4.0, 0.0], [-4.0, 0.0]]), steps=40)
    gaps = np.linalg.norm(paths[0] - paths[1], axis=1)
    assert paths.shape == (2, 40, 2)
    assert np.all(np.isfinite(paths))
    assert gaps.min() > 0.0


def test_social_force_dataset_is_finite():
    dataset = synth_generate(SynthSpec(kind="social-forces", scenes=3, max_pedestrians=5, noise=0.01, seed=2))
    assert all(np.all(np.isfinite(s.future)) for s in dataset.scenes)


@pytest.mark.parametrize(
    "kwargs",
    [{"kind": "spiral"}, {"scenes": 0}, {"min_pedestrians": 3, "max_pedestrians": 2}, {"noise": -0.1}],
)
def test_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        SynthSpec(**kwargs)


@pytest.mark.parametrize("kind", ["constant-velocity", "social-forces", "bimodal-avoidance"])
def test_files_are_byte_reproducible(tmp_path, kind: str):
    spec = SynthSpec(kind=kind, scenes=10, noise=0.05, seed=7)
    first = write_synthetic(synth_generate(spec), str(tmp_path / "a.txt"))
    second = write_synthetic(synth_generate(spec), str(tmp_path / "b.txt"))
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    assert len(first) == len(second) == (2 if kind == "bimodal-avoidance" else 1)

    write_synthetic(synth_generate(SynthSpec(kind=kind, scenes=10, noise=0.05, seed=8)), str(tmp_path / "c.txt"))
    assert (tmp_path / "a.txt").read_bytes() != (tmp_path / "c.txt").read_bytes()


def test_written_scenes_load_back_as_the_same_windows(tmp_path):
    dataset = synth_generate(SynthSpec(kind="bimodal-avoidance", scenes=4, noise=0.02, seed=3))
    path = str(tmp_path / "bimodal.txt")
    write_synthetic(dataset, path)

    loaded = load_track_file(path, find_grid=False)
    assert [s.scene_id for s in loaded] == [f"bimodal@{i * _ct.T_TOTAL * FRAME_STEP}" for i in range(4)]
    for original, restored in zip(dataset.scenes, loaded):
        assert restored.pedestrian_ids == original.pedestrian_ids
        np.testing.assert_allclose(restored.observed, original.observed, rtol=0.0, atol=1e-12)
        np.testing.assert_allclose(restored.future, original.future, rtol=0.0, atol=1e-12)

    labelled = attach_mode_labels(loaded, read_mode_labels(modes_path(path)))
    assert [s.labels["mode"] for s in labelled] == dataset.modes
