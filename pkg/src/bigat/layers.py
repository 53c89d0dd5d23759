"""
Differentiable building blocks: MLP, LSTM, graph attention, soft physical
attention and the small grid CNN.

Layers are plain functions of ``(spec, params, prefix, inputs)``. ``prefix``
names the weights inside the store (``gen.gat.layer0.w`` and so on), and each
layer has a matching ``init_*`` that registers those weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from . import constants as _ct
from .autodiff import Value
from .errors import ContractError, DimensionError
from .params import ParameterStore, ParamSource
from .scene import FeatureGrid

_ACTIVATIONS = ("relu", "tanh", "none")


def _activate(x: Value, kind: str) -> Value:
    if kind == "relu":
        return ad.relu(x)
    if kind == "tanh":
        return ad.tanh(x)
    return x


def canonical_order(*features: np.ndarray) -> np.ndarray:
    """
    Row order sorted lexicographically by the rows' values.

    Each argument contributes its row ``i`` (flattened) to the key of row ``i``;
    the first column is the primary key. Any permutation of the rows sorts to
    the same array, and rows that tie are equal, so a computation run on the
    sorted rows gives the same bits whatever the input numbering was.
    """
    arrays = [np.asarray(f, dtype=np.float64) for f in features]
    if not arrays or any(a.ndim == 0 or a.shape[0] != arrays[0].shape[0] for a in arrays):
        raise ContractError(f"canonical_order needs arrays with a common first axis, got {[a.shape for a in arrays]}")
    keys = np.hstack([a.reshape(a.shape[0], -1) for a in arrays])
    return np.lexsort(keys.T[::-1])


# -------------------------------------------------------------------- MLP


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input first, output last) and the activations between them."""

    widths: tuple[int, ...]
    activation: str = "relu"
    final_activation: str = "none"

    def __post_init__(self) -> None:
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ContractError(f"MLP needs at least two positive widths, got {self.widths}")
        for kind in (self.activation, self.final_activation):
            if kind not in _ACTIVATIONS:
                raise ContractError(f"unknown activation '{kind}'; choose from {_ACTIVATIONS}")

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]


def init_mlp(store: ParameterStore, prefix: str, spec: MlpSpec, rng: np.random.Generator) -> None:
    for k, (fan_in, fan_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        store.add_glorot(f"{prefix}.w{k}", (fan_in, fan_out), rng)
        store.add_zeros(f"{prefix}.b{k}", (fan_out,))


def mlp_forward(spec: MlpSpec, params: ParamSource, prefix: str, x: Value) -> Value:
    x = ad.as_value(x)
    if x.ndim == 0 or x.shape[-1] != spec.in_dim:
        raise DimensionError(
            f"mlp {prefix}: expected last axis {spec.in_dim}, got input {x.shape}",
            op="mlp",
            shapes=[x.shape],
        )
    last = len(spec.widths) - 2
    for k in range(last + 1):
        x = x @ params[f"{prefix}.w{k}"] + params[f"{prefix}.b{k}"]
        x = _activate(x, spec.final_activation if k == last else spec.activation)
    return x


# ------------------------------------------------------------------- LSTM


@dataclass(frozen=True)
class LstmSpec:
    input_dim: int
    hidden_dim: int


@dataclass(frozen=True)
class LstmState:
    """Hidden and cell state; a row per sequence when run batched."""

    h: Value
    c: Value

    def __post_init__(self) -> None:
        if self.h.shape != self.c.shape:
            raise DimensionError(
                f"LSTM state h {self.h.shape} and c {self.c.shape} differ",
                op="lstm",
                shapes=[self.h.shape, self.c.shape],
            )

    @classmethod
    def zeros(cls, hidden_dim: int, batch: Optional[int] = None) -> "LstmState":
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(Value(np.zeros(shape)), Value(np.zeros(shape)))


def init_lstm(store: ParameterStore, prefix: str, spec: LstmSpec, rng: np.random.Generator) -> None:
    hidden = spec.hidden_dim
    store.add_glorot(f"{prefix}.w_ih", (spec.input_dim, 4 * hidden), rng)
    store.add_glorot(f"{prefix}.w_hh", (hidden, 4 * hidden), rng)
    bias = np.zeros(4 * hidden)
    bias[hidden : 2 * hidden] = 1.0  # forget gate starts open
    store.add(f"{prefix}.b", bias)


def lstm_cell(spec: LstmSpec, params: ParamSource, prefix: str, x: Value, state: LstmState) -> LstmState:
    """One step with gates laid out as [input, forget, candidate, output]."""
    x = ad.as_value(x)
    if x.shape[-1] != spec.input_dim:
        raise DimensionError(
            f"lstm {prefix}: expected input dim {spec.input_dim}, got {x.shape}",
            op="lstm",
            shapes=[x.shape],
        )
    hidden = spec.hidden_dim
    gates = x @ params[f"{prefix}.w_ih"] + state.h @ params[f"{prefix}.w_hh"] + params[f"{prefix}.b"]
    i = ad.sigmoid(gates[..., 0:hidden])
    f = ad.sigmoid(gates[..., hidden : 2 * hidden])
    g = ad.tanh(gates[..., 2 * hidden : 3 * hidden])
    o = ad.sigmoid(gates[..., 3 * hidden : 4 * hidden])
    c = f * state.c + i * g
    return LstmState(o * ad.tanh(c), c)


def lstm_forward(
    spec: LstmSpec,
    params: ParamSource,
    prefix: str,
    inputs: Sequence[Value],
    initial: Optional[LstmState] = None,
) -> tuple[list[Value], LstmState]:
    if not inputs:
        raise ContractError(f"lstm {prefix}: input sequence is empty")
    state = initial
    if state is None:
        first = ad.as_value(inputs[0])
        state = LstmState.zeros(spec.hidden_dim, None if first.ndim == 1 else first.shape[0])
    outputs = []
    for x in inputs:
        state = lstm_cell(spec, params, prefix, x, state)
        outputs.append(state.h)
    return outputs, state


# ------------------------------------------------------------------- GAT


@dataclass(frozen=True)
class GatLayerSpec:
    """Single-head graph attention: shared map W (in -> out) and vector a (2*out)."""

    in_dim: int
    out_dim: int
    slope: float = _ct.LEAKY_RELU_SLOPE

    def __post_init__(self) -> None:
        if self.in_dim < 1 or self.out_dim < 1:
            raise ContractError(f"GAT dims must be positive, got {self.in_dim} -> {self.out_dim}")
        if not 0.0 < self.slope < 1.0:
            raise ContractError(f"leaky-relu slope must lie in (0, 1), got {self.slope}")


def init_gat_layer(store: ParameterStore, prefix: str, spec: GatLayerSpec, rng: np.random.Generator) -> None:
    store.add_glorot(f"{prefix}.w", (spec.in_dim, spec.out_dim), rng)
    limit = np.sqrt(6.0 / (2 * spec.out_dim + 1))
    store.add(f"{prefix}.a", rng.uniform(-limit, limit, size=2 * spec.out_dim))


def gat_attention(spec: GatLayerSpec, params: ParamSource, prefix: str, nodes: Value) -> tuple[Value, Value]:
    """Return (alpha N x N, projected features N x out)."""
    nodes = ad.as_value(nodes)
    if nodes.ndim != 2 or nodes.shape[0] < 1 or nodes.shape[1] != spec.in_dim:
        raise DimensionError(
            f"gat {prefix}: expected N x {spec.in_dim} node features, got {nodes.shape}",
            op="gat",
            shapes=[nodes.shape],
        )
    n = nodes.shape[0]
    projected = nodes @ params[f"{prefix}.w"]
    a = params[f"{prefix}.a"]
    source = (projected @ ad.reshape(a[0 : spec.out_dim], (spec.out_dim, 1))).reshape(n)
    target = (projected @ ad.reshape(a[spec.out_dim :], (spec.out_dim, 1))).reshape(n)
    # e[i, j] = source[i] + target[j]; every pair is an edge, self included
    scores = ad.broadcast(source, (n, n)).T + ad.broadcast(target, (n, n))
    alpha = ad.softmax(ad.leaky_relu(scores, spec.slope), axis=1)
    return alpha, projected


def gat_layer(spec: GatLayerSpec, params: ParamSource, prefix: str, nodes: Value) -> Value:
    """
    ``out_i = sum_j alpha_ij W v_j``, with every row's sum taken over the
    nodes in canonical order and the result scattered back, so permuting the
    nodes permutes the output exactly.
    """
    nodes = ad.as_value(nodes)
    if nodes.ndim != 2:
        return gat_attention(spec, params, prefix, nodes)[0]  # raises DimensionError
    order = canonical_order(nodes.data)
    alpha, projected = gat_attention(spec, params, prefix, ad.take(nodes, order))
    return ad.take(alpha @ projected, np.argsort(order))


def init_gat_stack(
    store: ParameterStore, prefix: str, layers: Sequence[GatLayerSpec], rng: np.random.Generator
) -> None:
    for index, spec in enumerate(layers):
        init_gat_layer(store, f"{prefix}.layer{index}", spec, rng)


def gat_stack(layers: Sequence[GatLayerSpec], params: ParamSource, prefix: str, nodes: Value) -> Value:
    """Stacked GAT layers with ELU in between and nothing after the last."""
    if not layers:
        raise ContractError("gat stack needs at least one layer")
    for lower, upper in zip(layers[:-1], layers[1:]):
        if lower.out_dim != upper.in_dim:
            raise DimensionError(
                f"gat stack {prefix}: layer output {lower.out_dim} does not feed input {upper.in_dim}",
                op="gat",
                shapes=[(lower.in_dim, lower.out_dim), (upper.in_dim, upper.out_dim)],
            )
    x = ad.as_value(nodes)
    for index, spec in enumerate(layers):
        if index > 0:
            x = ad.elu(x)
        x = gat_layer(spec, params, f"{prefix}.layer{index}", x)
    return x


# ------------------------------------------------------- physical attention


@dataclass(frozen=True)
class PhysicalAttentionSpec:
    """Scores each grid cell from [cell features, pedestrian encoding]."""

    cell_dim: int
    query_dim: int
    hidden_dim: int = 32

    @property
    def scorer(self) -> MlpSpec:
        return MlpSpec((self.cell_dim + self.query_dim, self.hidden_dim, 1), activation="tanh")


def init_physical_attention(
    store: ParameterStore, prefix: str, spec: PhysicalAttentionSpec, rng: np.random.Generator
) -> None:
    init_mlp(store, prefix, spec.scorer, rng)


def physical_attention_weights(
    spec: PhysicalAttentionSpec, params: ParamSource, prefix: str, cells: Value, query: Value
) -> Value:
    """Softmax over the K cells for a single pedestrian encoding."""
    cells, query = ad.as_value(cells), ad.as_value(query)
    if cells.ndim != 2 or cells.shape[1] != spec.cell_dim or query.shape != (spec.query_dim,):
        raise DimensionError(
            f"physical attention {prefix}: cells {cells.shape} / query {query.shape} "
            f"do not match ({spec.cell_dim}, {spec.query_dim})",
            op="physical-attention",
            shapes=[cells.shape, query.shape],
        )
    k = cells.shape[0]
    joined = ad.concat([cells, ad.broadcast(query, (k, spec.query_dim))], axis=1)
    scores = mlp_forward(spec.scorer, params, prefix, joined).reshape(k)
    return ad.softmax(scores, axis=0)


def physical_attention(
    spec: PhysicalAttentionSpec, params: ParamSource, prefix: str, cells: Value, queries: Value
) -> Value:
    """
    Context C_p for one encoding (vector in, vector out) or for N of them
    (N x d_h in, N x C out).

    Each row is computed on its own from its query and the shared cells, so
    the weighted sum over cells does not depend on the row's position.
    """
    queries = ad.as_value(queries)
    if queries.ndim == 1:
        return physical_attention_weights(spec, params, prefix, cells, queries) @ cells
    rows = [
        physical_attention_weights(spec, params, prefix, cells, queries[i]) @ cells
        for i in range(queries.shape[0])
    ]
    return ad.stack(rows, axis=0)


# -------------------------------------------------------------------- CNN


@dataclass(frozen=True)
class GridCnnSpec:
    """Valid, strided convolutions with ReLU after each layer."""

    in_channels: int
    channels: tuple[int, ...] = (8, 16)
    kernel: int = 3
    stride: int = 2

    @property
    def receptive_field(self) -> int:
        field_size, jump = 1, 1
        for _ in self.channels:
            field_size += (self.kernel - 1) * jump
            jump *= self.stride
        return field_size

    @property
    def out_channels(self) -> int:
        return self.channels[-1]

    def output_cells(self, height: int, width: int) -> int:
        for _ in self.channels:
            height = (height - self.kernel) // self.stride + 1
            width = (width - self.kernel) // self.stride + 1
        return height * width


def init_grid_cnn(store: ParameterStore, prefix: str, spec: GridCnnSpec, rng: np.random.Generator) -> None:
    c_in = spec.in_channels
    for index, c_out in enumerate(spec.channels):
        store.add_glorot(f"{prefix}.conv{index}.w", (spec.kernel * spec.kernel * c_in, c_out), rng)
        store.add_zeros(f"{prefix}.conv{index}.b", (c_out,))
        c_in = c_out


def grid_cnn(
    spec: GridCnnSpec, params: ParamSource, prefix: str, grid: Union[FeatureGrid, np.ndarray, Value]
) -> Value:
    """Encode an H x W x C grid into K cells of ``out_channels`` features."""
    cells = grid.cells if isinstance(grid, FeatureGrid) else grid
    x = ad.as_value(cells)
    if x.ndim != 3 or x.shape[2] != spec.in_channels:
        raise DimensionError(
            f"grid cnn {prefix}: expected H x W x {spec.in_channels}, got {x.shape}",
            op="grid-cnn",
            shapes=[x.shape],
        )
    if min(x.shape[0], x.shape[1]) < spec.receptive_field:
        raise DimensionError(
            f"grid cnn {prefix}: grid {x.shape[0]}x{x.shape[1]} is smaller than "
            f"the receptive field {spec.receptive_field}",
            op="grid-cnn",
            shapes=[x.shape],
        )
    for index, c_out in enumerate(spec.channels):
        height, width = x.shape[0], x.shape[1]
        out_h = (height - spec.kernel) // spec.stride + 1
        out_w = (width - spec.kernel) // spec.stride + 1
        columns = ad.patches(x, spec.kernel, spec.stride)
        y = ad.relu(columns @ params[f"{prefix}.conv{index}.w"] + params[f"{prefix}.conv{index}.b"])
        x = y.reshape(out_h, out_w, c_out)
    return x.reshape(x.shape[0] * x.shape[1], spec.out_channels)
