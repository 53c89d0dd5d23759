"""
Named trainable weights and their checkpoint format.

Parameter names are dotted paths (``gen.mlp_emb.w0``); the first segment is
the network that owns the weight (``gen``, ``enc``, ``disc``), which is what
optimizer scope filters match against.
"""

from __future__ import annotations

import io
import logging
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from difflib import get_close_matches
from typing import Iterator, Mapping, Optional, Protocol, Sequence

import fsspec
import numpy as np

from . import constants as _ct
from .autodiff import Value
from .errors import CheckpointError, ContractError

logger = logging.getLogger("bigat.params")

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class ParamSource(Protocol):
    """Anything the networks can read weights from by name."""

    def __getitem__(self, name: str) -> Value: ...


@dataclass(eq=False)
class ParameterSlot:
    """A trainable value plus its adaptive-moment state."""

    value: Value
    first_moment: np.ndarray
    second_moment: np.ndarray
    steps: int = 0


@dataclass(frozen=True, eq=False)
class SlotState:
    data: np.ndarray
    first_moment: np.ndarray
    second_moment: np.ndarray
    steps: int


@dataclass(eq=False)
class ParameterStore:
    """
    Registry of every trainable weight, keyed by dotted name.

    Example:
        >>> store = ParameterStore()
        >>> w = store.add("gen.mlp.w0", np.zeros((2, 3)))
        >>> store["gen.mlp.w0"] is w
        True
    """

    _slots: dict[str, ParameterSlot] = field(default_factory=dict)

    def add(self, name: str, data: np.ndarray) -> Value:
        if name in self._slots:
            raise ContractError(f"parameter '{name}' is already registered")
        value = Value(data, requires_grad=True, name=name)
        self._slots[name] = ParameterSlot(
            value=value,
            first_moment=np.zeros_like(value.data),
            second_moment=np.zeros_like(value.data),
        )
        return value

    def add_glorot(self, name: str, shape: Sequence[int], rng: np.random.Generator) -> Value:
        """Uniform Glorot init for a (fan_in, fan_out) weight."""
        fan_in, fan_out = shape[0], shape[-1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, rng.uniform(-limit, limit, size=tuple(shape)))

    def add_zeros(self, name: str, shape: Sequence[int]) -> Value:
        return self.add(name, np.zeros(tuple(shape)))

    def __getitem__(self, name: str) -> Value:
        try:
            return self._slots[name].value
        except KeyError:
            close = get_close_matches(name, list(self._slots), n=3, cutoff=0.6)
            hint = f" Did you mean: {', '.join(close)}?" if close else ""
            raise ContractError(f"no parameter named '{name}'.{hint}") from None

    def __contains__(self, name: object) -> bool:
        return name in self._slots

    def __len__(self) -> int:
        return len(self._slots)

    def slot(self, name: str) -> ParameterSlot:
        self[name]  # raises with suggestions
        return self._slots[name]

    def names(self, prefix: str = "") -> list[str]:
        return sorted(name for name in self._slots if name.startswith(prefix))

    def count(self, prefix: str = "") -> int:
        return int(sum(self._slots[n].value.data.size for n in self.names(prefix)))

    def zero_grad(self, prefix: str = "") -> None:
        for name in self.names(prefix):
            self._slots[name].value.grad = None

    def set(self, name: str, data: np.ndarray) -> None:
        """Overwrite a parameter's values in place (shape must match)."""
        value = self[name]
        data = np.asarray(data, dtype=np.float64)
        if data.shape != value.shape:
            raise ContractError(f"parameter '{name}' has shape {value.shape}, got {data.shape}")
        value.data = data.copy()

    def snapshot(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {name: self._slots[name].value.data.copy() for name in self.names(prefix)}

    def optimizer_state(self, prefix: str = "") -> dict[str, SlotState]:
        """Copies of values, moments and step counts, for rolling back an aborted update."""
        state = {}
        for name in self.names(prefix):
            slot = self._slots[name]
            state[name] = SlotState(
                slot.value.data.copy(), slot.first_moment.copy(), slot.second_moment.copy(), slot.steps
            )
        return state

    def restore_optimizer_state(self, state: Mapping[str, SlotState]) -> None:
        for name, saved in state.items():
            slot = self.slot(name)
            slot.value.data = saved.data.copy()
            slot.first_moment = saved.first_moment.copy()
            slot.second_moment = saved.second_moment.copy()
            slot.steps = saved.steps

    def load_state(self, arrays: Mapping[str, np.ndarray], strict: bool = True) -> None:
        if strict:
            missing = sorted(set(self._slots) - set(arrays))
            extra = sorted(set(arrays) - set(self._slots))
            if missing or extra:
                raise CheckpointError(
                    f"checkpoint does not match the model: missing={missing[:5]}, unexpected={extra[:5]}"
                )
        for name, data in arrays.items():
            if name not in self._slots:
                continue
            if self._slots[name].value.shape != data.shape:
                raise CheckpointError(
                    f"shape mismatch for '{name}': model {self._slots[name].value.shape}, checkpoint {data.shape}"
                )
            self.set(name, data)

    @contextmanager
    def substituted(self, name: str, value: Value) -> Iterator[None]:
        """Temporarily route lookups of ``name`` to ``value`` (gradient checks)."""
        slot = self.slot(name)
        original = slot.value
        slot.value = value
        try:
            yield
        finally:
            slot.value = original


@dataclass(frozen=True)
class DetachedParams:
    """
    Read-through view that hands out constants for the given name prefixes.

    Used when a loss term must not update a network, e.g. L_z with
    ``lz_updates_encoder`` switched off.
    """

    store: ParameterStore
    prefixes: tuple[str, ...]

    def __getitem__(self, name: str) -> Value:
        value = self.store[name]
        if any(name.startswith(prefix) for prefix in self.prefixes):
            return value.detach()
        return value


# -------------------------------------------------------------- checkpoints


def encode_checkpoint(arrays: Mapping[str, np.ndarray]) -> bytes:
    buffer = io.BytesIO()
    buffer.write(_ct.CHECKPOINT_MAGIC)
    for name in sorted(arrays):
        data = np.ascontiguousarray(arrays[name], dtype="<f8")
        encoded = name.encode("utf-8")
        buffer.write(_U32.pack(len(encoded)))
        buffer.write(encoded)
        buffer.write(_U32.pack(data.ndim))
        for dim in data.shape:
            buffer.write(_U64.pack(dim))
        buffer.write(data.tobytes())
    return buffer.getvalue()


def decode_checkpoint(payload: bytes) -> dict[str, np.ndarray]:
    magic = _ct.CHECKPOINT_MAGIC
    if not payload.startswith(magic):
        raise CheckpointError("not a bigat checkpoint (bad magic)")
    offset = len(magic)
    arrays: dict[str, np.ndarray] = {}

    def read(size: int) -> bytes:
        nonlocal offset
        if offset + size > len(payload):
            raise CheckpointError(f"checkpoint truncated at byte {offset}")
        chunk = payload[offset : offset + size]
        offset += size
        return chunk

    while offset < len(payload):
        (name_len,) = _U32.unpack(read(_U32.size))
        name = read(name_len).decode("utf-8")
        (rank,) = _U32.unpack(read(_U32.size))
        shape = tuple(_U64.unpack(read(_U64.size))[0] for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(read(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        arrays[name] = data
    return arrays


def save_checkpoint(store: ParameterStore, path: str) -> None:
    with fsspec.open(path, "wb") as handle:
        handle.write(encode_checkpoint(store.snapshot()))
    logger.info("checkpoint written to %s (%d parameters)", path, len(store))


def load_checkpoint(path: str, store: Optional[ParameterStore] = None) -> dict[str, np.ndarray]:
    """Read a checkpoint; when ``store`` is given, load it in place as well."""
    with fsspec.open(path, "rb") as handle:
        arrays = decode_checkpoint(handle.read())
    if store is not None:
        store.load_state(arrays)
    return arrays
