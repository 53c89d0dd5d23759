"""
The five-term Bicycle objective, the adaptive-moment optimizer and the
alternating training loop.

Each step runs two phases on the same batch of scenes:

1. the discriminators are updated to tell ground truth from detached samples,
2. generator and latent encoder are updated on
   ``L_gan1 + lambda_z L_z + L_gan2 + lambda_traj L_traj + lambda_kl L_kl``.

Every scene gets its own graph; gradients from the scenes of a batch
accumulate in the ``ParameterStore`` before the update.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from typing import Optional, Sequence, Union

import fsspec
import numpy as np
import pandas as pd

from . import autodiff as ad
from . import constants as _ct
from .autodiff import Graph, Value
from .errors import ConfigError, ContractError, NumericError
from .model import (
    DISC,
    ENC,
    GEN,
    BigatModel,
    LatentCode,
    ModelConfig,
    generate,
    global_logits,
    latent_encode,
    local_logits,
    reparameterize,
)
from .params import DetachedParams, ParameterStore, ParamSource
from .scene import SceneSample

logger = logging.getLogger("bigat.training")

Scope = Union[str, Sequence[str]]

GENERATOR_SCOPE = (f"{GEN}.", f"{ENC}.")
DISCRIMINATOR_SCOPE = f"{DISC}."


@dataclass(frozen=True)
class LossWeights:
    lambda_z: float = _ct.DEFAULT_LAMBDA_Z
    lambda_traj: float = _ct.DEFAULT_LAMBDA_TRAJ
    lambda_kl: float = _ct.DEFAULT_LAMBDA_KL

    def __post_init__(self) -> None:
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ConfigError(f"{f.name} must be >= 0, got {getattr(self, f.name)}", key=f.name)


@dataclass(frozen=True)
class OptimizerConfig:
    """Adaptive-moment settings plus the switches that route generator-side gradients."""

    generator_rate: float = _ct.DEFAULT_LEARNING_RATE
    discriminator_rate: float = _ct.DEFAULT_LEARNING_RATE
    betas: tuple[float, float] = _ct.DEFAULT_BETAS
    epsilon: float = _ct.DEFAULT_ADAM_EPS
    batch_scenes: int = 1
    variety_k: int = 1
    train_variety: bool = False
    lz_updates_encoder: bool = True

    def __post_init__(self) -> None:
        if not (self.generator_rate > 0 and self.discriminator_rate > 0):
            raise ConfigError("learning rates must be positive", key="learning_rate")
        if len(self.betas) != 2 or not all(0 < b < 1 for b in self.betas):
            raise ConfigError(f"moment decays must lie in (0, 1), got {self.betas}", key="betas")
        if not self.epsilon > 0:
            raise ConfigError("adam epsilon must be positive", key="adam_eps")
        if self.batch_scenes < 1:
            raise ConfigError("batch_scenes must be >= 1", key="batch_scenes")
        if self.variety_k < 1:
            raise ConfigError("variety_k must be >= 1", key="variety_k")


@dataclass(frozen=True)
class LossReport:
    l_gan1: float
    l_z: float
    l_gan2: float
    l_traj: float
    l_kl: float
    total: float
    d_local: float = 0.0
    d_global: float = 0.0
    l_variety: float = 0.0

    @classmethod
    def compose(
        cls,
        weights: LossWeights,
        *,
        l_gan1: float,
        l_z: float,
        l_gan2: float,
        l_traj: float,
        l_kl: float,
        d_local: float = 0.0,
        d_global: float = 0.0,
        l_variety: float = 0.0,
    ) -> "LossReport":
        total = (
            l_gan1
            + weights.lambda_z * l_z
            + l_gan2
            + weights.lambda_traj * l_traj
            + weights.lambda_kl * l_kl
        )
        return cls(l_gan1, l_z, l_gan2, l_traj, l_kl, total, d_local, d_global, l_variety)

    @classmethod
    def mean(cls, reports: Sequence["LossReport"], weights: LossWeights) -> "LossReport":
        if not reports:
            raise ContractError("cannot average an empty list of loss reports")
        names = ("l_gan1", "l_z", "l_gan2", "l_traj", "l_kl", "d_local", "d_global", "l_variety")
        averaged = {name: float(np.mean([getattr(r, name) for r in reports])) for name in names}
        return cls.compose(weights, **averaged)

    def as_row(self, step: int) -> dict[str, float]:
        values = (step, self.l_gan1, self.l_z, self.l_gan2, self.l_traj, self.l_kl, self.d_local, self.d_global, self.total)
        return dict(zip(_ct.TRAINING_LOG_COLUMNS, values))


@dataclass(frozen=True, eq=False)
class NoisePathTerms:
    futures: Value
    l_gan1: Value
    l_z: Value


@dataclass(frozen=True, eq=False)
class TrajectoryPathTerms:
    futures: Value
    l_gan2: Value
    l_traj: Value
    l_kl: Value


@dataclass(frozen=True, eq=False)
class DiscriminatorLosses:
    local_loss: Value
    global_loss: Value

    @property
    def total(self) -> Value:
        return self.local_loss + self.global_loss


# ------------------------------------------------------------- loss pieces


def bce_with_logits(logits: Value, target: float) -> Value:
    """Mean binary cross-entropy of sigmoid(logits) against a constant label."""
    return ad.mean(ad.softplus(logits) - logits * float(target))


def kl_divergence(mu: Value, log_var: Value) -> Value:
    """Closed-form KL(N(mu, sigma^2) || N(0, I))."""
    return ad.reduce_sum(ad.square(mu) + ad.exp(log_var) - log_var - 1.0) * 0.5


def trajectory_l2(futures: Value, truth: np.ndarray) -> Value:
    """Mean over pedestrians of the L2 norm of the whole 12-step error."""
    n = futures.shape[0]
    diff = (futures - np.asarray(truth, dtype=np.float64)).reshape(n, _ct.T_FUT * 2)
    return ad.mean(ad.l2_norm(diff, axis=1))


def generator_adversarial_loss(
    config: ModelConfig, params: ParamSource, scene: SceneSample, futures: Value
) -> Value:
    """Non-saturating loss: both discriminators should call the samples real."""
    local = bce_with_logits(local_logits(config, params, scene, futures), 1.0)
    glob = bce_with_logits(global_logits(config, params, scene, futures), 1.0)
    return local + glob


def _zero() -> Value:
    return Value(0.0)


def loss_path_noise(
    config: ModelConfig,
    params: ParamSource,
    scene: SceneSample,
    z: np.ndarray,
    *,
    encoder_params: Optional[ParamSource] = None,
) -> NoisePathTerms:
    """
    z -> G -> Y_hat -> E: adversarial loss on Y_hat and the L1 error of E(Y_hat).mu against z.

    ``encoder_params`` lets L_z read the encoder through a detached view.
    """
    z = np.asarray(z, dtype=np.float64)
    futures, _ = generate(config, params, scene, LatentCode.from_array(z))
    l_gan1 = generator_adversarial_loss(config, params, scene, futures)
    if not config.use_latent_encoder:
        return NoisePathTerms(futures, l_gan1, _zero())
    dist = latent_encode(config, encoder_params or params, scene, futures)
    return NoisePathTerms(futures, l_gan1, ad.l1_norm(dist.mu - z))


def _reconstruction_code(
    config: ModelConfig, params: ParamSource, scene: SceneSample, epsilon: np.ndarray
) -> tuple[LatentCode, Value]:
    if not config.use_latent_encoder:
        return LatentCode.from_array(epsilon), _zero()
    dist = latent_encode(config, params, scene, scene.future)
    return reparameterize(dist, epsilon), kl_divergence(dist.mu, dist.log_var)


def loss_path_trajectory(
    config: ModelConfig, params: ParamSource, scene: SceneSample, epsilon: np.ndarray
) -> TrajectoryPathTerms:
    """
    Y -> E -> z' -> G -> Y_hat': adversarial, reconstruction and KL terms.

    Without a latent encoder ``epsilon`` is used as a prior draw and only the
    reconstruction term is nonzero.
    """
    truth = scene.future
    code, l_kl = _reconstruction_code(config, params, scene, epsilon)
    futures, _ = generate(config, params, scene, code)
    l_traj = trajectory_l2(futures, truth)
    l_gan2 = generator_adversarial_loss(config, params, scene, futures) if config.use_latent_encoder else _zero()
    return TrajectoryPathTerms(futures, l_gan2, l_traj, l_kl)


def discriminator_losses(
    config: ModelConfig,
    params: ParamSource,
    scene: SceneSample,
    fake_futures: Sequence[Union[np.ndarray, Value]],
) -> DiscriminatorLosses:
    """
    Per discriminator: 0.5 * (BCE(real, 1) + mean over sample sets of BCE(fake, 0)).

    Samples are detached, so these losses never reach generator weights.
    """
    if not fake_futures:
        raise ContractError("discriminator_losses needs at least one generated sample set")
    real = scene.future
    fakes = [ad.as_value(f).detach() for f in fake_futures]

    def one(logits_fn) -> Value:
        real_term = bce_with_logits(logits_fn(config, params, scene, real), 1.0)
        fake_terms = [bce_with_logits(logits_fn(config, params, scene, f), 0.0) for f in fakes]
        fake_term = ad.mean(ad.stack(fake_terms))
        return (real_term + fake_term) * 0.5

    return DiscriminatorLosses(one(local_logits), one(global_logits))


def variety_term(
    config: ModelConfig, params: ParamSource, scene: SceneSample, latents: Sequence[np.ndarray]
) -> Value:
    """Minimum trajectory error over one generated sample per latent code."""
    if len(latents) < 1:
        raise ContractError("variety loss needs k >= 1 latent codes")
    truth = scene.future
    errors = [trajectory_l2(generate(config, params, scene, LatentCode.from_array(z))[0], truth) for z in latents]
    return ad.reduce_min(ad.stack(errors))


def variety_loss(
    config: ModelConfig,
    params: ParamSource,
    scene: SceneSample,
    k: int,
    rng: Optional[np.random.Generator] = None,
    *,
    latents: Optional[Sequence[np.ndarray]] = None,
) -> float:
    """Best-of-k trajectory error; pass ``latents`` to reuse a fixed (nested) draw."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if latents is None:
        rng = rng if rng is not None else np.random.default_rng()
        latents = [rng.standard_normal(config.latent_dim) for _ in range(k)]
    elif len(latents) < k:
        raise ContractError(f"asked for k={k} but only {len(latents)} latent codes were given")
    with ad.no_grad():
        return variety_term(config, params, scene, list(latents)[:k]).item()


@dataclass(frozen=True, eq=False)
class GeneratorObjective:
    total: Value
    noise: NoisePathTerms
    trajectory: TrajectoryPathTerms
    variety: Optional[Value] = None


def generator_objective(
    config: ModelConfig,
    params: ParamSource,
    scene: SceneSample,
    z: np.ndarray,
    epsilon: np.ndarray,
    weights: LossWeights,
    *,
    encoder_params: Optional[ParamSource] = None,
    variety_latents: Optional[Sequence[np.ndarray]] = None,
) -> GeneratorObjective:
    noise = loss_path_noise(config, params, scene, z, encoder_params=encoder_params)
    trajectory = loss_path_trajectory(config, params, scene, epsilon)
    total = (
        noise.l_gan1
        + noise.l_z * weights.lambda_z
        + trajectory.l_gan2
        + trajectory.l_traj * weights.lambda_traj
        + trajectory.l_kl * weights.lambda_kl
    )
    variety = None
    if variety_latents:
        variety = variety_term(config, params, scene, variety_latents)
        total = total + variety
    return GeneratorObjective(total, noise, trajectory, variety)


# ---------------------------------------------------------------- optimizer


def _scoped_names(store: ParameterStore, scope: Scope) -> list[str]:
    prefixes = (scope,) if isinstance(scope, str) else tuple(scope)
    return sorted({name for prefix in prefixes for name in store.names(prefix)})


def adam_step(store: ParameterStore, config: OptimizerConfig, scope: Scope, rate: Optional[float] = None) -> None:
    """
    One bias-corrected adaptive-moment update of every parameter under ``scope``.

    All gradients are checked before any weight moves; they are cleared afterwards.
    """
    names = _scoped_names(store, scope)
    if not names:
        raise ContractError(f"no parameters match scope {scope!r}")
    missing = [name for name in names if store.slot(name).value.grad is None]
    if missing:
        raise ContractError(f"no gradient for {len(missing)} parameter(s) in scope {scope!r}: {missing[:5]}")
    non_finite = [name for name in names if not np.all(np.isfinite(store.slot(name).value.grad))]
    if non_finite:
        raise NumericError(f"non-finite gradient for {non_finite[:5]} in scope {scope!r}", op="adam")

    rate = config.generator_rate if rate is None else rate
    beta1, beta2 = config.betas
    for name in names:
        slot = store.slot(name)
        grad = slot.value.grad
        slot.steps += 1
        slot.first_moment = beta1 * slot.first_moment + (1.0 - beta1) * grad
        slot.second_moment = beta2 * slot.second_moment + (1.0 - beta2) * grad * grad
        m_hat = slot.first_moment / (1.0 - beta1**slot.steps)
        v_hat = slot.second_moment / (1.0 - beta2**slot.steps)
        slot.value.data = slot.value.data - rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        slot.value.grad = None


# ------------------------------------------------------------- train loop


def _draw(rng: np.random.Generator, config: ModelConfig, count: int) -> list[np.ndarray]:
    return [rng.standard_normal(config.latent_dim) for _ in range(count)]


def train_step(
    model: BigatModel,
    batch: Sequence[SceneSample],
    weights: LossWeights,
    optimizer: OptimizerConfig,
    rng: np.random.Generator,
) -> LossReport:
    """
    One discriminator update followed by one generator+encoder update.

    If a loss or gradient turns non-finite in either phase, every weight and
    moment is rolled back to where the step started, gradients are cleared,
    and the NumericError propagates.
    """
    if not batch:
        raise ContractError("train_step needs a nonempty batch")
    config, store = model.config, model.store
    scale = 1.0 / len(batch)
    start_state = store.optimizer_state()

    draws = []
    for scene in batch:
        z, epsilon = _draw(rng, config, 2)
        variety = _draw(rng, config, optimizer.variety_k) if optimizer.train_variety else None
        draws.append((z, epsilon, variety))

    try:
        d_values: list[tuple[float, float]] = []
        for scene, (z, epsilon, _) in zip(batch, draws):
            with ad.no_grad():
                fake_noise, _ = generate(config, store, scene, LatentCode.from_array(z))
                fake_traj, _ = generate(config, store, scene, _reconstruction_code(config, store, scene, epsilon)[0])
            with Graph():
                losses = discriminator_losses(config, store, scene, [fake_noise, fake_traj])
                (losses.total * scale).backward()
            d_values.append((losses.local_loss.item(), losses.global_loss.item()))
        adam_step(store, optimizer, DISCRIMINATOR_SCOPE, rate=optimizer.discriminator_rate)

        frozen_disc = DetachedParams(store, (DISCRIMINATOR_SCOPE,))
        encoder_view = None
        if not optimizer.lz_updates_encoder:
            encoder_view = DetachedParams(store, (DISCRIMINATOR_SCOPE, f"{ENC}."))
        reports = []
        for scene, (z, epsilon, variety), (d_local, d_global) in zip(batch, draws, d_values):
            with Graph():
                objective = generator_objective(
                    config,
                    frozen_disc,
                    scene,
                    z,
                    epsilon,
                    weights,
                    encoder_params=encoder_view,
                    variety_latents=variety,
                )
                (objective.total * scale).backward()
            reports.append(
                LossReport.compose(
                    weights,
                    l_gan1=objective.noise.l_gan1.item(),
                    l_z=objective.noise.l_z.item(),
                    l_gan2=objective.trajectory.l_gan2.item(),
                    l_traj=objective.trajectory.l_traj.item(),
                    l_kl=objective.trajectory.l_kl.item(),
                    d_local=d_local,
                    d_global=d_global,
                    l_variety=0.0 if objective.variety is None else objective.variety.item(),
                )
            )
        adam_step(store, optimizer, GENERATOR_SCOPE, rate=optimizer.generator_rate)
    except NumericError:
        store.zero_grad()
        store.restore_optimizer_state(start_state)
        raise
    return LossReport.mean(reports, weights)


def write_training_log(log: pd.DataFrame, path: str) -> None:
    with fsspec.open(path, "w") as handle:
        log.to_csv(handle, index=False, columns=_ct.TRAINING_LOG_COLUMNS)


def fit(
    model: BigatModel,
    scenes: Sequence[SceneSample],
    *,
    weights: LossWeights = LossWeights(),
    optimizer: OptimizerConfig = OptimizerConfig(),
    epochs: int = 1,
    max_steps: Optional[int] = None,
    seed: int = 0,
    log_path: Optional[str] = None,
    checkpoint_path: Optional[str] = None,
    checkpoint_every: int = 0,
    max_skipped_steps: int = 10,
) -> pd.DataFrame:
    """
    Run the alternating loop over shuffled batches and return the training log.

    A step whose loss turns non-finite is skipped with a warning; more than
    ``max_skipped_steps`` of them in a row re-raise the NumericError.
    """
    scenes = [s for s in scenes if s.has_future]
    if not scenes:
        raise ContractError("fit needs at least one scene with ground-truth futures")
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}", key="epochs")

    rng = np.random.default_rng(seed)
    batch_size = optimizer.batch_scenes
    per_epoch = math.ceil(len(scenes) / batch_size)
    total_steps = epochs * per_epoch if max_steps is None else min(max_steps, epochs * per_epoch)
    logger.info(
        "training %s on %d scenes: %d step(s), batch %d", model.config.variant, len(scenes), total_steps, batch_size
    )

    rows: list[dict[str, float]] = []
    step = 0
    skipped_in_row = 0
    for epoch in range(epochs):
        order = rng.permutation(len(scenes))
        epoch_reports: list[LossReport] = []
        for start in range(0, len(order), batch_size):
            if step >= total_steps:
                break
            batch = [scenes[i] for i in order[start : start + batch_size]]
            try:
                report = train_step(model, batch, weights, optimizer, rng)
            except NumericError as exc:
                skipped_in_row += 1
                logger.warning("step %d skipped: %s", step, exc)
                if skipped_in_row > max_skipped_steps:
                    raise
                step += 1
                continue
            skipped_in_row = 0
            rows.append(report.as_row(step))
            epoch_reports.append(report)
            logger.debug("step %d: total=%.5f L_traj=%.5f", step, report.total, report.l_traj)
            step += 1
            if checkpoint_path and checkpoint_every > 0 and step % checkpoint_every == 0:
                model.save(checkpoint_path)
                if log_path:
                    write_training_log(pd.DataFrame(rows, columns=_ct.TRAINING_LOG_COLUMNS), log_path)
        if epoch_reports:
            summary = LossReport.mean(epoch_reports, weights)
            logger.info(
                "epoch %d: total=%.4f L_traj=%.4f L_z=%.4f D_local=%.4f D_global=%.4f",
                epoch + 1,
                summary.total,
                summary.l_traj,
                summary.l_z,
                summary.d_local,
                summary.d_global,
            )
        if step >= total_steps:
            break

    log = pd.DataFrame(rows, columns=_ct.TRAINING_LOG_COLUMNS)
    if log_path:
        write_training_log(log, log_path)
    if checkpoint_path:
        model.save(checkpoint_path)
    return log
