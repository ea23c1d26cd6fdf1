"""Named parameter collection, Adam updates, and binary checkpoints.

All learnable tensors in a model live in one flat ``ParamStore`` keyed by a
hierarchical dotted name (``enc.in.proj.w``, ``rsf.out.gate.b2``, ...).  The
store also owns the Adam moment accumulators so training can be checkpointed
and resumed exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConsistencyError
from .tensor import Tensor

CHECKPOINT_VERSION = 1


class ParamStore:
    """Flat registry of named parameter tensors plus optimiser state."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._entries:
            raise ConsistencyError(f"parameter {name!r} registered twice")
        tensor.requires_grad = True
        self._entries[name] = tensor
        self._m[name] = np.zeros_like(tensor.data)
        self._v[name] = np.zeros_like(tensor.data)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def num_values(self) -> int:
        return sum(t.data.size for t in self._entries.values())

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        """Gradients after a backward pass; parameters a loss never touched
        get explicit zeros so adam_step's coverage check still holds."""
        out = {}
        for name, t in self._entries.items():
            out[name] = np.zeros_like(t.data) if t.grad is None else t.grad
        return out

    def clone_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._entries.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self._entries):
            raise ConsistencyError("value names do not match registered parameters")
        for name, arr in values.items():
            tgt = self._entries[name]
            if arr.shape != tgt.data.shape:
                raise ConsistencyError(f"shape mismatch for {name!r}: {arr.shape} vs {tgt.data.shape}")
            tgt.data = arr.astype(tgt.data.dtype)


def adam_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place.

    ``grads`` must cover exactly the registered parameter names; a missing or
    extra name raises ConsistencyError instead of silently skipping.
    """
    expected = set(store._entries)
    got = set(grads)
    if got != expected:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise ConsistencyError(f"gradient names do not match parameters (missing={missing}, extra={extra})")
    store.step += 1
    t = store.step
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    for name, tensor in store._entries.items():
        g = grads[name]
        if g.shape != tensor.data.shape:
            raise ConsistencyError(f"gradient shape mismatch for {name!r}")
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        tensor.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)


# -- checkpoint serialization -------------------------------------------------
#
# Layout (all little-endian):
#   u32 format version | u64 adam step | u32 entry count
#   per entry: u32 name length | name utf-8 | u32 ndim | u32 dims...
#              f64 values | f64 first moments | f64 second moments
# Values are row-major.  Moments are always present so a resumed run continues
# with the exact optimiser state.


def save_checkpoint(store: ParamStore, path: str | Path) -> None:
    path = Path(path)
    chunks = [struct.pack("<IQI", CHECKPOINT_VERSION, store.step, len(store._entries))]
    for name, tensor in store._entries.items():
        raw = name.encode("utf-8")
        shape = tensor.data.shape
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", len(shape)))
        chunks.append(struct.pack(f"<{len(shape)}I", *shape) if shape else b"")
        for arr in (tensor.data, store._m[name], store._v[name]):
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path, store: ParamStore | None = None) -> ParamStore:
    """Read a checkpoint.  With `store` given, fill it in place (names and
    shapes must match); otherwise return a fresh store."""
    blob = Path(path).read_bytes()
    offset = 0

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise CheckpointError("truncated checkpoint")
        values = struct.unpack_from(fmt, blob, offset)
        offset += size
        return values

    version, step, count = take("<IQI")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    entries: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        if offset + name_len > len(blob):
            raise CheckpointError("truncated checkpoint")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        arrays = []
        for _ in range(3):
            nbytes = 8 * n
            if offset + nbytes > len(blob):
                raise CheckpointError("truncated checkpoint")
            arrays.append(np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape).copy())
            offset += nbytes
        entries[name] = tuple(arrays)
    if offset != len(blob):
        raise CheckpointError("trailing bytes after last checkpoint entry")

    if store is None:
        store = ParamStore()
        for name, (data, m, v) in entries.items():
            store.register(name, Tensor(data))
            store._m[name] = m
            store._v[name] = v
    else:
        if set(entries) != set(store._entries):
            raise CheckpointError("checkpoint parameter names do not match the model")
        for name, (data, m, v) in entries.items():
            tgt = store._entries[name]
            if data.shape != tgt.data.shape:
                raise CheckpointError(f"checkpoint shape mismatch for {name!r}")
            tgt.data = data.astype(tgt.data.dtype)
            store._m[name] = m
            store._v[name] = v
    store.step = step
    return store
