"""
Tests for the loss terms, the optimizer update and the alternating loop.

Oracles are closed-form values computed by hand; the loop tests run a couple
of steps on the tiny fixture network.
"""

from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest

from bigat import constants as _ct
from bigat.autodiff import Graph, Value
from bigat.errors import ConfigError, ContractError, NumericError
from bigat.model import BigatModel, ModelConfig, global_discriminator, local_discriminator
from bigat.params import DetachedParams, ParameterStore, load_checkpoint
from bigat.scene import SceneSample, TrajectoryWindow
from bigat.training import (
    DISCRIMINATOR_SCOPE,
    LossReport,
    LossWeights,
    OptimizerConfig,
    adam_step,
    bce_with_logits,
    discriminator_losses,
    fit,
    generator_objective,
    kl_divergence,
    loss_path_noise,
    train_step,
    trajectory_l2,
    variety_loss,
)

from .conftest import TINY, make_scene


@pytest.fixture
def model(tiny_config: ModelConfig) -> BigatModel:
    return BigatModel.create(tiny_config, seed=7)


@pytest.fixture
def batch(rng) -> list:
    return [make_scene(rng, n=2, scene_id="a"), make_scene(rng, n=3, with_grid=False, scene_id="b")]


# ------------------------------------------------------------------ oracles


def test_bce_with_logits_oracle():
    assert bce_with_logits(Value([0.0, 0.0]), 1.0).item() == pytest.approx(math.log(2.0))
    assert bce_with_logits(Value([2.0]), 1.0).item() == pytest.approx(math.log1p(math.exp(-2.0)))
    assert bce_with_logits(Value([2.0]), 0.0).item() == pytest.approx(math.log1p(math.exp(2.0)))


def test_bce_with_extreme_logits_stays_finite():
    assert bce_with_logits(Value([800.0, -800.0]), 1.0).item() == pytest.approx(400.0)


def test_kl_divergence_oracle():
    assert kl_divergence(Value(np.zeros(4)), Value(np.zeros(4))).item() == 0.0
    expected = 0.5 * ((1.0 + 1.0 - 0.0 - 1.0) + (4.0 + 2.0 - math.log(2.0) - 1.0))
    assert kl_divergence(Value([1.0, 2.0]), Value([0.0, math.log(2.0)])).item() == pytest.approx(expected)


def test_trajectory_l2_is_mean_of_per_pedestrian_norms():
    truth = np.zeros((2, _ct.T_FUT, 2))
    futures = truth.copy()
    futures[0, :, 1] = 0.5
    assert trajectory_l2(Value(futures), truth).item() == pytest.approx(math.sqrt(3.0) / 2.0)


def test_noise_path_adversarial_loss_matches_the_bce_of_both_scores(model: BigatModel, rng):
    scene = make_scene(rng, n=3)
    z = np.random.default_rng(11).standard_normal(model.config.latent_dim)
    terms = loss_path_noise(model.config, model.store, scene, z)
    local = local_discriminator(model.config, model.store, scene, terms.futures.data).data
    global_ = global_discriminator(model.config, model.store, scene, terms.futures.data).data
    expected = -np.mean(np.log(local)) - np.mean(np.log(global_))
    assert terms.l_gan1.item() == pytest.approx(expected, rel=0.0, abs=1e-12)


def test_loss_report_total_uses_the_weighted_sum():
    report = LossReport.compose(LossWeights(), l_gan1=1.0, l_z=2.0, l_gan2=3.0, l_traj=0.5, l_kl=4.0)
    assert report.total == pytest.approx(1.0 + 0.5 * 2.0 + 3.0 + 10.0 * 0.5 + 0.01 * 4.0)
    row = report.as_row(3)
    assert list(row) == _ct.TRAINING_LOG_COLUMNS
    assert row["step"] == 3


@pytest.mark.parametrize("field", ["lambda_z", "lambda_traj", "lambda_kl"])
def test_negative_loss_weights_are_rejected(field: str):
    with pytest.raises(ConfigError) as info:
        LossWeights(**{field: -0.1})
    assert info.value.key == field


@pytest.mark.parametrize(
    "kwargs",
    [{"generator_rate": 0.0}, {"betas": (0.5, 1.0)}, {"epsilon": 0.0}, {"batch_scenes": 0}, {"variety_k": 0}],
)
def test_optimizer_config_validation(kwargs):
    with pytest.raises(ConfigError):
        OptimizerConfig(**kwargs)


# ---------------------------------------------------------------- optimizer


def test_adam_first_step_moves_by_the_learning_rate():
    store = ParameterStore()
    store.add("gen.w", np.array([1.0, 1.0]))
    store.add("disc.w", np.array([5.0]))
    store["gen.w"].grad = np.array([2.0, -0.5])
    store["disc.w"].grad = np.array([1.0])

    adam_step(store, OptimizerConfig(), ("gen.",), rate=0.1)

    np.testing.assert_allclose(store["gen.w"].data, [0.9, 1.1], atol=1e-8)
    assert store["gen.w"].grad is None
    np.testing.assert_array_equal(store["disc.w"].data, [5.0])
    assert store["disc.w"].grad is not None
    assert store.slot("gen.w").steps == 1
    assert store.slot("disc.w").steps == 0


def test_adam_refuses_to_move_without_every_gradient():
    store = ParameterStore()
    store.add("gen.a", np.zeros(2))
    store.add("gen.b", np.zeros(2))
    store["gen.a"].grad = np.ones(2)
    with pytest.raises(ContractError, match="no gradient"):
        adam_step(store, OptimizerConfig(), "gen.")
    np.testing.assert_array_equal(store["gen.a"].data, 0.0)


def test_adam_refuses_non_finite_gradients():
    store = ParameterStore()
    store.add("gen.a", np.zeros(2))
    store.add("gen.b", np.zeros(2))
    store["gen.a"].grad = np.ones(2)
    store["gen.b"].grad = np.array([np.nan, 1.0])
    with pytest.raises(NumericError, match="non-finite gradient"):
        adam_step(store, OptimizerConfig(), "gen.")
    np.testing.assert_array_equal(store["gen.a"].data, 0.0)
    assert store.slot("gen.a").steps == 0


def test_adam_rejects_an_empty_scope():
    with pytest.raises(ContractError, match="no parameters"):
        adam_step(ParameterStore(), OptimizerConfig(), "gen.")


# ------------------------------------------------------------- loss routing


def test_discriminator_losses_never_reach_the_generator(model: BigatModel, batch):
    scene = batch[0]
    fakes = [scene.future + 0.3, scene.future - 0.2]
    with Graph():
        losses = discriminator_losses(model.config, model.store, scene, fakes)
        losses.total.backward()
    assert all(model.store[name].grad is None for name in model.store.names("gen."))
    assert all(model.store[name].grad is not None for name in model.store.names(DISCRIMINATOR_SCOPE))
    assert losses.local_loss.item() > 0.0 and losses.global_loss.item() > 0.0


def test_generator_objective_leaves_frozen_discriminators_alone(model: BigatModel, batch):
    scene = batch[0]
    config = model.config
    z = np.full(config.latent_dim, 0.2)
    epsilon = np.full(config.latent_dim, -0.1)
    with Graph():
        objective = generator_objective(
            config, DetachedParams(model.store, (DISCRIMINATOR_SCOPE,)), scene, z, epsilon, LossWeights()
        )
        objective.total.backward()
    assert all(model.store[name].grad is None for name in model.store.names("disc."))
    assert all(model.store[name].grad is not None for name in model.store.names("gen."))
    assert all(model.store[name].grad is not None for name in model.store.names("enc."))

    terms = objective.noise, objective.trajectory
    recomposed = (
        terms[0].l_gan1.item()
        + 0.5 * terms[0].l_z.item()
        + terms[1].l_gan2.item()
        + 10.0 * terms[1].l_traj.item()
        + 0.01 * terms[1].l_kl.item()
    )
    assert objective.total.item() == pytest.approx(recomposed)


def test_variety_loss_never_increases_with_k(model: BigatModel, batch):
    scene = batch[1]
    draws = np.random.default_rng(11)
    latents = [draws.standard_normal(model.config.latent_dim) for _ in range(8)]
    values = [variety_loss(model.config, model.store, scene, k, latents=latents) for k in (1, 2, 4, 8)]
    assert all(later <= earlier for earlier, later in zip(values, values[1:]))


def test_variety_loss_needs_enough_latents(model: BigatModel, batch):
    with pytest.raises(ContractError, match="only 2"):
        variety_loss(model.config, model.store, batch[0], 3, latents=[np.zeros(3), np.zeros(3)])


# ------------------------------------------------------------------ the loop


def test_train_step_updates_every_network(model: BigatModel, batch):
    before = model.store.snapshot()
    report = train_step(model, batch, LossWeights(), OptimizerConfig(batch_scenes=2), np.random.default_rng(0))
    after = model.store.snapshot()
    for prefix in ("gen.", "enc.", "disc.local.", "disc.global."):
        assert any(not np.array_equal(before[n], after[n]) for n in model.store.names(prefix)), prefix
    assert all(model.store[name].grad is None for name in model.store.names())
    assert report.total == pytest.approx(
        report.l_gan1 + 0.5 * report.l_z + report.l_gan2 + 10.0 * report.l_traj + 0.01 * report.l_kl
    )
    assert report.d_local > 0.0 and report.d_global > 0.0


def test_train_step_is_reproducible(tiny_config: ModelConfig, batch):
    reports, snapshots = [], []
    for _ in range(2):
        model = BigatModel.create(tiny_config, seed=3)
        reports.append(train_step(model, batch, LossWeights(), OptimizerConfig(), np.random.default_rng(5)))
        snapshots.append(model.store.snapshot())
    assert reports[0] == reports[1]
    for name, data in snapshots[0].items():
        assert data.tobytes() == snapshots[1][name].tobytes()


def test_gat_variant_has_no_encoder_terms(batch):
    model = BigatModel.create(ModelConfig(**TINY, variant="gat"), seed=0)
    report = train_step(model, batch, LossWeights(), OptimizerConfig(), np.random.default_rng(0))
    assert report.l_z == report.l_gan2 == report.l_kl == 0.0
    assert report.l_traj > 0.0


@pytest.mark.parametrize(
    "optimizer", [OptimizerConfig(lz_updates_encoder=False), OptimizerConfig(train_variety=True, variety_k=3)]
)
def test_train_step_switches(model: BigatModel, batch, optimizer: OptimizerConfig):
    report = train_step(model, batch, LossWeights(), optimizer, np.random.default_rng(1))
    assert np.isfinite(report.total)
    if optimizer.train_variety:
        assert report.l_variety > 0.0


def test_bigan_variant_trains(batch):
    model = BigatModel.create(ModelConfig(**TINY, variant="bigan"), seed=0)
    report = train_step(model, batch, LossWeights(), OptimizerConfig(), np.random.default_rng(0))
    assert np.isfinite(report.total)


def _overflowing(model: BigatModel) -> BigatModel:
    # a huge log-variance makes exp overflow during reparameterisation
    name = model.store.names("enc.mlp_sigma.b")[-1]
    model.store.set(name, np.full(model.store[name].shape, 1e4))
    return model


def test_train_step_raises_numeric_error_with_clean_gradients(model: BigatModel, batch):
    _overflowing(model)
    with pytest.raises(NumericError):
        train_step(model, batch, LossWeights(), OptimizerConfig(), np.random.default_rng(0))
    assert all(model.store[name].grad is None for name in model.store.names())


def test_failed_generator_phase_rolls_back_the_discriminator_update(model: BigatModel, batch, monkeypatch):
    before = model.store.optimizer_state()

    def failing_objective(*args, **kwargs):
        raise NumericError("generator loss became non-finite", op="generator")

    monkeypatch.setattr("bigat.training.generator_objective", failing_objective)
    with pytest.raises(NumericError):
        train_step(model, batch, LossWeights(), OptimizerConfig(), np.random.default_rng(0))

    after = model.store.optimizer_state()
    assert model.store.names(DISCRIMINATOR_SCOPE)
    for name, saved in before.items():
        restored = after[name]
        assert restored.data.tobytes() == saved.data.tobytes(), name
        assert restored.first_moment.tobytes() == saved.first_moment.tobytes(), name
        assert restored.second_moment.tobytes() == saved.second_moment.tobytes(), name
        assert restored.steps == saved.steps == 0, name
    assert all(model.store[name].grad is None for name in model.store.names())


def test_fit_skips_non_finite_steps_then_gives_up(model: BigatModel, batch):
    _overflowing(model)
    log = fit(model, batch, epochs=1, max_skipped_steps=5)
    assert log.empty
    with pytest.raises(NumericError):
        fit(model, batch, epochs=2, max_skipped_steps=1)


def test_fit_writes_log_and_checkpoint(tmp_path, model: BigatModel, batch):
    log_path = tmp_path / "train.csv"
    ckpt = tmp_path / "model.ckpt"
    log = fit(model, batch, epochs=3, max_steps=4, seed=2, log_path=str(log_path), checkpoint_path=str(ckpt))

    assert list(log.columns) == _ct.TRAINING_LOG_COLUMNS
    assert log["step"].tolist() == [0, 1, 2, 3]
    assert np.all(np.isfinite(log.drop(columns="step").to_numpy()))
    written = pd.read_csv(log_path)
    pd.testing.assert_frame_equal(written, log, check_dtype=False)

    restored = load_checkpoint(str(ckpt))
    for name, data in model.store.snapshot().items():
        assert restored[name].tobytes() == data.tobytes()


def test_fit_requires_futures_and_positive_epochs(model: BigatModel, batch):
    unlabelled = [SceneSample(tuple(TrajectoryWindow(w.pedestrian_id, w.observed) for w in batch[0].pedestrians))]
    with pytest.raises(ContractError, match="ground-truth"):
        fit(model, unlabelled)
    with pytest.raises(ConfigError, match="epochs"):
        fit(model, batch, epochs=0)


def test_kl_divergence_matches_closed_form_on_random_draws():
    draws = np.random.default_rng(0)
    for _ in range(1000):
        mu, log_var = draws.normal(size=4), draws.normal(size=4)
        expected = 0.5 * np.sum(mu**2 + np.exp(log_var) - log_var - 1.0)
        assert kl_divergence(Value(mu), Value(log_var)).item() == pytest.approx(expected, rel=0.0, abs=1e-10)
