"""
Tests for the generator, both discriminators and the latent encoder on the
tiny fixture network.
"""

from __future__ import annotations

import numpy as np
import pytest

from bigat import constants as _ct
from bigat.autodiff import Value
from bigat.errors import ConfigError, ContractError
from bigat.model import (
    BigatModel,
    LatentDistribution,
    ModelConfig,
    future_displacements,
    generate,
    global_discriminator,
    latent_encode,
    local_discriminator,
    observed_displacements,
    pedestrian_order,
    reparameterize,
)
from bigat.scene import SceneSample, TrajectoryWindow

from .conftest import TINY, make_scene


@pytest.fixture
def model(tiny_config: ModelConfig) -> BigatModel:
    return BigatModel.create(tiny_config, seed=0)


def test_parameters_are_grouped_by_network(model: BigatModel):
    for prefix in ("gen.", "enc.", "disc.local.", "disc.global."):
        assert model.store.names(prefix), prefix
    assert "gen.gat.layer0.w" in model.store
    assert "disc.global.att_p.w0" in model.store


@pytest.mark.parametrize("variant, has_gat, has_encoder", [("gat", True, False), ("bigan", False, True)])
def test_variants_drop_their_network(variant: str, has_gat: bool, has_encoder: bool):
    model = BigatModel.create(ModelConfig(**TINY, variant=variant), seed=0)
    assert bool(model.store.names("gen.gat.")) is has_gat
    assert bool(model.store.names("enc.")) is has_encoder


def test_unknown_variant_is_a_config_error():
    with pytest.raises(ConfigError, match="unknown model variant") as info:
        ModelConfig(variant="sgan")
    assert info.value.key == "variant"


def test_non_positive_sizes_are_rejected():
    with pytest.raises(ConfigError, match="positive"):
        ModelConfig(latent_dim=0)


def test_predict_shapes_and_ids(model: BigatModel, scene):
    z = model.draw_latent(np.random.default_rng(0))
    prediction = model.predict(scene, z)
    assert prediction.positions.shape == (len(scene), _ct.T_FUT, 2)
    assert prediction.latent.shape == (model.config.latent_dim,)
    assert prediction.pedestrian_ids == scene.pedestrian_ids
    assert prediction.scene_id == scene.scene_id


def test_positions_accumulate_displacements_from_last_observation(model: BigatModel, scene):
    z = np.zeros(model.config.latent_dim)
    positions, displacements = generate(model.config, model.store, scene, z)
    expected = scene.observed[:, -1:, :] + np.cumsum(displacements.data, axis=1)
    np.testing.assert_allclose(positions.data, expected, atol=1e-12)


def test_predict_is_deterministic_in_z(model: BigatModel, scene):
    z = np.array([0.3, -1.0, 2.0])
    first = model.predict(scene, z).positions
    second = model.predict(scene, z.copy()).positions
    assert first.tobytes() == second.tobytes()
    other = model.predict(scene, z + 0.5).positions
    assert not np.allclose(first, other)


def test_prediction_is_exactly_permutation_equivariant(model: BigatModel, rng):
    for _ in range(100):
        n = int(rng.integers(1, 7))
        scene = make_scene(rng, n=n, with_grid=bool(rng.integers(2)))
        z = rng.standard_normal(model.config.latent_dim)
        order = rng.permutation(n).tolist()
        base = model.predict(scene, z)
        permuted = model.predict(scene.permuted(order), z)
        assert np.array_equal(permuted.positions, base.positions[order])
        assert permuted.pedestrian_ids == [base.pedestrian_ids[i] for i in order]


@pytest.mark.parametrize("n, with_grid", [(1, True), (1, False), (5, False)])
def test_edge_scenes_are_supported(model: BigatModel, rng, n: int, with_grid: bool):
    scene = make_scene(rng, n=n, with_grid=with_grid)
    prediction = model.predict(scene, np.zeros(model.config.latent_dim))
    assert prediction.positions.shape == (n, _ct.T_FUT, 2)
    assert np.all(np.isfinite(prediction.positions))


def test_latent_must_match_config(model: BigatModel, scene):
    with pytest.raises(ContractError, match="latent code"):
        model.predict(scene, np.zeros(model.config.latent_dim + 1))


def test_discriminators_score_each_pedestrian(model: BigatModel, scene):
    for discriminator in (local_discriminator, global_discriminator):
        scores = discriminator(model.config, model.store, scene, scene.future).data
        assert scores.shape == (len(scene),)
        assert np.all((scores > 0.0) & (scores < 1.0))


def test_discriminator_rejects_wrong_future_shape(model: BigatModel, scene):
    with pytest.raises(ContractError, match="candidate futures"):
        local_discriminator(model.config, model.store, scene, np.zeros((len(scene), 11, 2)))


def test_displacement_helpers(scene):
    rel = observed_displacements(scene)
    np.testing.assert_array_equal(rel[:, 0], 0.0)
    np.testing.assert_allclose(rel[:, 1], scene.observed[:, 1] - scene.observed[:, 0])

    future_rel = future_displacements(scene, scene.future).data
    np.testing.assert_allclose(future_rel[:, 0], scene.future[:, 0] - scene.observed[:, -1])
    np.testing.assert_allclose(scene.observed[:, -1:] + np.cumsum(future_rel, axis=1), scene.future, atol=1e-12)


def test_latent_encoder_pools_over_pedestrians(model: BigatModel, scene):
    dist = latent_encode(model.config, model.store, scene)
    assert dist.mu.shape == dist.log_var.shape == (model.config.latent_dim,)
    reordered = latent_encode(model.config, model.store, scene.permuted([2, 1, 0]))
    assert np.array_equal(reordered.mu.data, dist.mu.data)


def test_latent_encoder_missing_for_gat_variant(scene):
    model = BigatModel.create(ModelConfig(**TINY, variant="gat"), seed=0)
    with pytest.raises(ContractError, match="no latent encoder"):
        latent_encode(model.config, model.store, scene)


def test_reparameterize():
    dist = LatentDistribution(Value([1.0, -1.0]), Value([0.0, np.log(4.0)]))
    np.testing.assert_allclose(reparameterize(dist, np.zeros(2)).z.data, [1.0, -1.0])
    np.testing.assert_allclose(reparameterize(dist, np.ones(2)).z.data, [2.0, 1.0])
    with pytest.raises(ContractError, match="epsilon"):
        reparameterize(dist, np.zeros(3))


def test_checkpoint_round_trip_reproduces_predictions(tmp_path, model: BigatModel, scene):
    path = str(tmp_path / "tiny.ckpt")
    model.save(path)
    restored = BigatModel.from_checkpoint(model.config, path)
    z = np.array([0.1, 0.2, 0.3])
    assert restored.predict(scene, z).positions.tobytes() == model.predict(scene, z).positions.tobytes()


def test_discriminator_scores_are_exactly_permutation_equivariant(model: BigatModel, rng):
    for _ in range(100):
        n = int(rng.integers(1, 7))
        scene = make_scene(rng, n=n, with_grid=bool(rng.integers(2)))
        order = rng.permutation(n).tolist()
        for discriminator in (local_discriminator, global_discriminator):
            base = discriminator(model.config, model.store, scene, scene.future).data
            permuted = discriminator(model.config, model.store, scene.permuted(order), scene.future[order]).data
            assert np.array_equal(permuted, base[order])


def test_pedestrian_order_is_independent_of_numbering(rng):
    scene = make_scene(rng, n=5)
    order, inverse = pedestrian_order(scene)
    relabelled = [3, 1, 4, 0, 2]
    shuffled_order, _ = pedestrian_order(scene.permuted(relabelled))
    assert [relabelled[i] for i in shuffled_order] == order.tolist()
    np.testing.assert_array_equal(order[inverse], np.arange(5))


# ------------------------------------------------------------------ oracles


def _zeroed(model: BigatModel, prefix: str) -> BigatModel:
    names = model.store.names(prefix)
    assert names, prefix
    for name in names:
        model.store.set(name, np.zeros(model.store[name].shape))
    return model


def test_zero_decoder_output_repeats_the_last_observation(model: BigatModel, scene):
    _zeroed(model, "gen.mlp_d.")
    prediction = model.predict(scene, np.array([0.4, -1.0, 2.5]))
    expected = np.repeat(scene.observed[:, -1:, :], _ct.T_FUT, axis=1)
    np.testing.assert_array_equal(prediction.positions, expected)


@pytest.mark.parametrize(
    "discriminator, prefix",
    [(local_discriminator, "disc.local.mlp_clf."), (global_discriminator, "disc.global.mlp_clf.")],
)
def test_zero_classifier_scores_one_half(model: BigatModel, scene, discriminator, prefix: str):
    _zeroed(model, prefix)
    scores = discriminator(model.config, model.store, scene, scene.future).data
    np.testing.assert_array_equal(scores, 0.5)


def _single(scene, index: int):
    return scene.permuted([index])


def test_latent_encoder_is_an_elementwise_max_over_pedestrians(model: BigatModel, rng):
    scene = make_scene(rng, n=2)
    pooled = latent_encode(model.config, model.store, scene)
    heads = [latent_encode(model.config, model.store, _single(scene, i)) for i in range(2)]
    np.testing.assert_allclose(pooled.mu.data, np.maximum(heads[0].mu.data, heads[1].mu.data), rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(
        pooled.log_var.data, np.maximum(heads[0].log_var.data, heads[1].log_var.data), rtol=0.0, atol=1e-12
    )


def test_latent_encoder_of_identical_futures_equals_either_one(model: BigatModel, rng):
    scene = make_scene(rng, n=1)
    window = scene.pedestrians[0]
    twins = SceneSample((window, TrajectoryWindow(99, window.observed, window.future)), grid=scene.grid)
    single = latent_encode(model.config, model.store, scene)
    pooled = latent_encode(model.config, model.store, twins)
    np.testing.assert_allclose(pooled.mu.data, single.mu.data, rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(pooled.log_var.data, single.log_var.data, rtol=0.0, atol=1e-12)


def test_latent_encoder_ignores_pedestrian_order_exactly(model: BigatModel, rng):
    for _ in range(20):
        n = int(rng.integers(2, 7))
        scene = make_scene(rng, n=n)
        order = rng.permutation(n).tolist()
        base = latent_encode(model.config, model.store, scene)
        shuffled = latent_encode(model.config, model.store, scene.permuted(order))
        assert np.array_equal(shuffled.mu.data, base.mu.data)
        assert np.array_equal(shuffled.log_var.data, base.log_var.data)
