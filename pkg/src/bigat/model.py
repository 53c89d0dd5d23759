"""
The four Social-BiGAT networks: generator, local and global discriminators,
and the latent scene encoder.

Weights are grouped by owner prefix so optimizers can be scoped:

- ``gen.*``          generator (social encoder, GAT, CNN + physical attention, decoder)
- ``enc.*``          latent encoder
- ``disc.local.*``   local discriminator
- ``disc.global.*``  global discriminator

No parameters are shared between the networks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from . import constants as _ct
from .autodiff import Value
from .errors import ConfigError, ContractError
from .layers import (
    GatLayerSpec,
    GridCnnSpec,
    LstmSpec,
    LstmState,
    MlpSpec,
    PhysicalAttentionSpec,
    gat_stack,
    grid_cnn,
    init_gat_stack,
    init_grid_cnn,
    init_lstm,
    init_mlp,
    canonical_order,
    init_physical_attention,
    lstm_cell,
    lstm_forward,
    mlp_forward,
    physical_attention,
)
from .params import ParameterStore, ParamSource, load_checkpoint, save_checkpoint
from .scene import SceneSample

logger = logging.getLogger("bigat.model")

GEN = "gen"
ENC = "enc"
DISC = "disc"
DISC_LOCAL = "disc.local"
DISC_GLOBAL = "disc.global"

FutureLike = Union[np.ndarray, Value]


@dataclass(frozen=True)
class ModelConfig:
    """Network sizes. Defaults are the smallest that keep every concatenation nontrivial."""

    embedding_dim: int = 16
    encoder_hidden: int = 32
    gat_dim: int = 32
    gat_layers: int = 2
    cnn_channels: tuple[int, ...] = (8, 16)
    cnn_kernel: int = 3
    cnn_stride: int = 2
    grid_channels: int = 1
    attention_hidden: int = 32
    latent_dim: int = 8
    decoder_hidden: int = 64
    classifier_hidden: int = 32
    latent_hidden: int = 32
    variant: str = "social-bigat"

    def __post_init__(self) -> None:
        if self.variant not in _ct.MODEL_VARIANTS:
            raise ConfigError(
                f"unknown model variant '{self.variant}'; choose from {', '.join(_ct.MODEL_VARIANTS)}",
                key="variant",
            )
        object.__setattr__(self, "cnn_channels", tuple(int(c) for c in self.cnn_channels))
        sizes = (
            self.embedding_dim,
            self.encoder_hidden,
            self.gat_dim,
            self.gat_layers,
            self.grid_channels,
            self.attention_hidden,
            self.latent_dim,
            self.decoder_hidden,
            self.classifier_hidden,
            self.latent_hidden,
            self.cnn_kernel,
            self.cnn_stride,
            *self.cnn_channels,
        )
        if not self.cnn_channels or min(sizes) < 1:
            raise ConfigError("model sizes must all be positive integers", key="model")

    @property
    def use_gat(self) -> bool:
        return self.variant != "bigan"

    @property
    def use_latent_encoder(self) -> bool:
        return self.variant != "gat"

    @property
    def physical_dim(self) -> int:
        return self.cnn_channels[-1]

    # derived layer specs
    @property
    def embedding(self) -> MlpSpec:
        return MlpSpec((2, self.embedding_dim), final_activation="relu")

    @property
    def encoder(self) -> LstmSpec:
        return LstmSpec(self.embedding_dim, self.encoder_hidden)

    @property
    def gat(self) -> list[GatLayerSpec]:
        dims = [self.encoder_hidden] + [self.gat_dim] * self.gat_layers
        return [GatLayerSpec(a, b) for a, b in zip(dims[:-1], dims[1:])]

    @property
    def cnn(self) -> GridCnnSpec:
        return GridCnnSpec(self.grid_channels, self.cnn_channels, self.cnn_kernel, self.cnn_stride)

    @property
    def attention(self) -> PhysicalAttentionSpec:
        return PhysicalAttentionSpec(self.physical_dim, self.encoder_hidden, self.attention_hidden)

    @property
    def scene_context_dim(self) -> int:
        """Width of [V_s, C_s^L, C_p]."""
        return self.encoder_hidden + (self.gat_dim if self.use_gat else 0) + self.physical_dim

    @property
    def decoder_init(self) -> MlpSpec:
        return MlpSpec((self.scene_context_dim + self.latent_dim, self.decoder_hidden), final_activation="tanh")

    @property
    def decoder(self) -> LstmSpec:
        return LstmSpec(self.embedding_dim, self.decoder_hidden)

    @property
    def decoder_out(self) -> MlpSpec:
        return MlpSpec((self.decoder_hidden, 2))

    @property
    def local_classifier(self) -> MlpSpec:
        return MlpSpec((self.encoder_hidden, self.classifier_hidden, 1))

    @property
    def global_classifier(self) -> MlpSpec:
        return MlpSpec((self.scene_context_dim, self.classifier_hidden, 1))

    @property
    def latent_trunk(self) -> MlpSpec:
        return MlpSpec((self.encoder_hidden, self.latent_hidden), final_activation="relu")

    @property
    def latent_head(self) -> MlpSpec:
        return MlpSpec((self.latent_hidden, self.latent_dim))


@dataclass(frozen=True)
class LatentCode:
    """Scene-level noise vector z, shared by every pedestrian of the scene."""

    z: Value

    @classmethod
    def from_array(cls, z: np.ndarray) -> "LatentCode":
        return cls(Value(np.asarray(z, dtype=np.float64)))

    @property
    def dim(self) -> int:
        return int(self.z.shape[0])


@dataclass(frozen=True)
class LatentDistribution:
    """Posterior (mu, log sigma^2) over the scene latent."""

    mu: Value
    log_var: Value

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.log_var.data)


@dataclass(frozen=True, eq=False)
class PredictedScene:
    """Predicted futures, one row per pedestrian in the source scene's order."""

    positions: np.ndarray
    latent: np.ndarray
    pedestrian_ids: list[int] = field(default_factory=list)
    scene_id: str = ""


# ------------------------------------------------------------ construction


def _init_scene_encoder(store: ParameterStore, prefix: str, config: ModelConfig, rng: np.random.Generator) -> None:
    init_mlp(store, f"{prefix}.mlp_emb", config.embedding, rng)
    init_lstm(store, f"{prefix}.lstm_en", config.encoder, rng)


def _init_context(store: ParameterStore, prefix: str, config: ModelConfig, rng: np.random.Generator) -> None:
    if config.use_gat:
        init_gat_stack(store, f"{prefix}.gat", config.gat, rng)
    init_grid_cnn(store, f"{prefix}.cnn", config.cnn, rng)
    init_physical_attention(store, f"{prefix}.att_p", config.attention, rng)


def init_parameters(config: ModelConfig, rng: np.random.Generator) -> ParameterStore:
    """Register every weight of the four networks."""
    store = ParameterStore()
    _init_scene_encoder(store, GEN, config, rng)
    _init_context(store, GEN, config, rng)
    init_mlp(store, f"{GEN}.mlp_init", config.decoder_init, rng)
    init_mlp(store, f"{GEN}.mlp_dec_emb", config.embedding, rng)
    init_lstm(store, f"{GEN}.lstm_dec", config.decoder, rng)
    init_mlp(store, f"{GEN}.mlp_d", config.decoder_out, rng)

    _init_scene_encoder(store, DISC_LOCAL, config, rng)
    init_mlp(store, f"{DISC_LOCAL}.mlp_clf", config.local_classifier, rng)

    _init_scene_encoder(store, DISC_GLOBAL, config, rng)
    _init_context(store, DISC_GLOBAL, config, rng)
    init_mlp(store, f"{DISC_GLOBAL}.mlp_clf", config.global_classifier, rng)

    if config.use_latent_encoder:
        _init_scene_encoder(store, ENC, config, rng)
        init_mlp(store, f"{ENC}.mlp_l", config.latent_trunk, rng)
        init_mlp(store, f"{ENC}.mlp_mu", config.latent_head, rng)
        init_mlp(store, f"{ENC}.mlp_sigma", config.latent_head, rng)
    logger.debug("initialized %d parameter tensors (%d weights)", len(store), store.count())
    return store


# ----------------------------------------------------------------- encoders


def observed_displacements(scene: SceneSample) -> np.ndarray:
    """N x 8 x 2 relative displacements of the observed paths; the first is (0, 0)."""
    observed = scene.observed
    rel = np.zeros_like(observed)
    rel[:, 1:] = observed[:, 1:] - observed[:, :-1]
    return rel


def future_displacements(scene: SceneSample, future: FutureLike) -> Value:
    """
    Step displacements of a (possibly generated) future, measured from the
    last observed position, so the first step carries the handover velocity.
    """
    future = _as_futures(scene, future)
    anchor = Value(scene.observed[:, -1:, :])
    previous = ad.concat([anchor, future[:, : _ct.T_FUT - 1, :]], axis=1)
    return future - previous


def _as_futures(scene: SceneSample, future: FutureLike) -> Value:
    future = ad.as_value(future)
    n = len(scene)
    if future.shape != (n, _ct.T_FUT, 2):
        raise ContractError(f"expected candidate futures of shape {(n, _ct.T_FUT, 2)}, got {future.shape}")
    return future


def pedestrian_order(scene: SceneSample, futures: Optional[FutureLike] = None) -> tuple[np.ndarray, np.ndarray]:
    """
    (order, inverse) that put the scene's pedestrians in canonical order.

    The networks run on ``scene.permuted(order)`` and hand back rows indexed by
    ``inverse``, so relabelling the pedestrians relabels every output bit for bit.
    """
    keys = [scene.observed]
    if futures is not None:
        keys.append(ad.as_value(futures).data)
    order = canonical_order(*keys)
    return order, np.argsort(order)


def _encode_steps(config: ModelConfig, params: ParamSource, prefix: str, rel: Value) -> Value:
    n, steps, _ = rel.shape
    embedded = mlp_forward(config.embedding, params, f"{prefix}.mlp_emb", rel.reshape(n * steps, 2))
    embedded = embedded.reshape(n, steps, config.embedding_dim)
    inputs = [embedded[:, t, :] for t in range(steps)]
    _, state = lstm_forward(config.encoder, params, f"{prefix}.lstm_en", inputs)
    return state.h


def encode_social(
    config: ModelConfig,
    params: ParamSource,
    scene: SceneSample,
    include_future: bool = False,
    future: Optional[FutureLike] = None,
    prefix: str = GEN,
) -> Value:
    """
    V_s: displacements -> MLP_emb -> LSTM_en, final hidden state per pedestrian.

    With ``include_future`` the observed and future displacement sequences are
    concatenated first (the discriminator input). ``future`` defaults to the
    scene's ground truth.
    """
    rel = Value(observed_displacements(scene))
    if include_future:
        if future is None:
            if not scene.has_future:
                raise ContractError(f"scene '{scene.scene_id}': include_future needs a future path")
            future = scene.future
        rel = ad.concat([rel, future_displacements(scene, future)], axis=1)
    return _encode_steps(config, params, prefix, rel)


def social_context(config: ModelConfig, params: ParamSource, encodings: Value, prefix: str = GEN) -> Value:
    """C_s^L from the last GAT layer."""
    return gat_stack(config.gat, params, f"{prefix}.gat", encodings)


def scene_cells(config: ModelConfig, params: ParamSource, scene: SceneSample, prefix: str = GEN) -> Value:
    """V_p; a scene without a grid sees one zero patch, so its context is a learned constant."""
    if scene.grid is None:
        side = config.cnn.receptive_field
        cells = np.zeros((side, side, config.grid_channels))
    else:
        cells = scene.grid.cells
    return grid_cnn(config.cnn, params, f"{prefix}.cnn", cells)


def physical_context(
    config: ModelConfig, params: ParamSource, scene: SceneSample, encodings: Value, prefix: str = GEN
) -> Value:
    """C_p per pedestrian, attending once per window over the encoded grid."""
    cells = scene_cells(config, params, scene, prefix)
    return physical_attention(config.attention, params, f"{prefix}.att_p", cells, encodings)


def _scene_context(
    config: ModelConfig, params: ParamSource, scene: SceneSample, encodings: Value, prefix: str
) -> list[Value]:
    parts = [encodings]
    if config.use_gat:
        parts.append(social_context(config, params, encodings, prefix))
    parts.append(physical_context(config, params, scene, encodings, prefix))
    return parts


# ---------------------------------------------------------------- generator


def generate(
    config: ModelConfig, params: ParamSource, scene: SceneSample, z: Union[LatentCode, Value, np.ndarray]
) -> tuple[Value, Value]:
    """
    Decode 12 steps for every pedestrian; returns (positions, displacements), each N x 12 x 2.

    The decoder state starts from MLP(C_g) with C_g = [V_s, C_s^L, C_p, z]; each
    step embeds the previously emitted displacement (the last observed one first).
    """
    z_value = z.z if isinstance(z, LatentCode) else ad.as_value(z)
    if z_value.shape != (config.latent_dim,):
        raise ContractError(f"latent code must have shape ({config.latent_dim},), got {z_value.shape}")
    order, inverse = pedestrian_order(scene)
    positions, displacements = _decode(config, params, scene.permuted(order), z_value)
    return ad.take(positions, inverse), ad.take(displacements, inverse)


def _decode(config: ModelConfig, params: ParamSource, scene: SceneSample, z_value: Value) -> tuple[Value, Value]:
    n = len(scene)
    encodings = encode_social(config, params, scene, prefix=GEN)
    context = _scene_context(config, params, scene, encodings, GEN)
    context.append(ad.broadcast(z_value, (n, config.latent_dim)))
    c_g = ad.concat(context, axis=1)

    hidden = mlp_forward(config.decoder_init, params, f"{GEN}.mlp_init", c_g)
    state = LstmState(hidden, Value(np.zeros((n, config.decoder_hidden))))
    previous: Value = Value(observed_displacements(scene)[:, -1, :])
    position: Value = Value(scene.observed[:, -1, :])
    positions, displacements = [], []
    for _ in range(_ct.T_FUT):
        step_input = mlp_forward(config.embedding, params, f"{GEN}.mlp_dec_emb", previous)
        state = lstm_cell(config.decoder, params, f"{GEN}.lstm_dec", step_input, state)
        step = mlp_forward(config.decoder_out, params, f"{GEN}.mlp_d", state.h)
        position = position + step
        positions.append(position)
        displacements.append(step)
        previous = step
    return ad.stack(positions, axis=1), ad.stack(displacements, axis=1)


def generator_forward(
    config: ModelConfig, params: ParamSource, scene: SceneSample, z: Union[LatentCode, np.ndarray]
) -> PredictedScene:
    code = z if isinstance(z, LatentCode) else LatentCode.from_array(z)
    positions, _ = generate(config, params, scene, code)
    return PredictedScene(
        positions=positions.numpy(),
        latent=code.z.numpy(),
        pedestrian_ids=scene.pedestrian_ids,
        scene_id=scene.scene_id,
    )


# ----------------------------------------------------------- discriminators


def _canonical_inputs(scene: SceneSample, futures: FutureLike) -> tuple[SceneSample, Value, np.ndarray]:
    futures = _as_futures(scene, futures)
    order, inverse = pedestrian_order(scene, futures)
    return scene.permuted(order), ad.take(futures, order), inverse


def local_logits(
    config: ModelConfig, params: ParamSource, scene: SceneSample, futures: FutureLike
) -> Value:
    scene, futures, inverse = _canonical_inputs(scene, futures)
    encodings = encode_social(config, params, scene, include_future=True, future=futures, prefix=DISC_LOCAL)
    logits = mlp_forward(config.local_classifier, params, f"{DISC_LOCAL}.mlp_clf", encodings).reshape(len(scene))
    return ad.take(logits, inverse)


def global_logits(
    config: ModelConfig, params: ParamSource, scene: SceneSample, futures: FutureLike
) -> Value:
    scene, futures, inverse = _canonical_inputs(scene, futures)
    encodings = encode_social(config, params, scene, include_future=True, future=futures, prefix=DISC_GLOBAL)
    context = ad.concat(_scene_context(config, params, scene, encodings, DISC_GLOBAL), axis=1)
    logits = mlp_forward(config.global_classifier, params, f"{DISC_GLOBAL}.mlp_clf", context).reshape(len(scene))
    return ad.take(logits, inverse)


def local_discriminator(
    config: ModelConfig, params: ParamSource, scene: SceneSample, futures: FutureLike
) -> Value:
    """Per-pedestrian probability that (X_i, future_i) is real."""
    return ad.sigmoid(local_logits(config, params, scene, futures))


def global_discriminator(
    config: ModelConfig, params: ParamSource, scene: SceneSample, futures: FutureLike
) -> Value:
    """Per-pedestrian realism score from the [V_s, C_s^L, C_p] context."""
    return ad.sigmoid(global_logits(config, params, scene, futures))


# ----------------------------------------------------------- latent encoder


def latent_encode(
    config: ModelConfig, params: ParamSource, scene: SceneSample, futures: Optional[FutureLike] = None
) -> LatentDistribution:
    """E(Y): per-pedestrian heads on future displacements, max-pooled over the scene."""
    if not config.use_latent_encoder:
        raise ContractError(f"model variant '{config.variant}' has no latent encoder")
    if len(scene) == 0:
        raise ContractError("latent encoder needs at least one pedestrian")
    if futures is None:
        futures = scene.future
    scene, futures, _ = _canonical_inputs(scene, futures)
    rel = future_displacements(scene, futures)
    encodings = _encode_steps(config, params, ENC, rel)
    trunk = mlp_forward(config.latent_trunk, params, f"{ENC}.mlp_l", encodings)
    mu = mlp_forward(config.latent_head, params, f"{ENC}.mlp_mu", trunk)
    log_var = mlp_forward(config.latent_head, params, f"{ENC}.mlp_sigma", trunk)
    return LatentDistribution(ad.reduce_max(mu, axis=0), ad.reduce_max(log_var, axis=0))


def reparameterize(dist: LatentDistribution, epsilon: np.ndarray) -> LatentCode:
    """z = mu + exp(log_var / 2) * epsilon."""
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if epsilon.shape != dist.mu.shape:
        raise ContractError(f"epsilon shape {epsilon.shape} does not match latent {dist.mu.shape}")
    return LatentCode(dist.mu + ad.exp(dist.log_var * 0.5) * epsilon)


# ------------------------------------------------------------------- facade


@dataclass(eq=False)
class BigatModel:
    """
    A configured set of networks with their weights.

    Example:
        >>> model = BigatModel.create(ModelConfig(), seed=0)
        >>> prediction = model.predict(scene, model.draw_latent(np.random.default_rng(1)))
    """

    config: ModelConfig
    store: ParameterStore

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0) -> "BigatModel":
        return cls(config, init_parameters(config, np.random.default_rng(seed)))

    @classmethod
    def from_checkpoint(cls, config: ModelConfig, path: str) -> "BigatModel":
        model = cls.create(config)
        load_checkpoint(path, model.store)
        logger.info("loaded checkpoint %s", path)
        return model

    def save(self, path: str) -> None:
        save_checkpoint(self.store, path)

    def draw_latent(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.config.latent_dim)

    def predict(self, scene: SceneSample, z: Union[LatentCode, np.ndarray]) -> PredictedScene:
        with ad.no_grad():
            return generator_forward(self.config, self.store, scene, z)
