"""Dense float64 tensors with tape-based reverse-mode differentiation.

Small by design: enough primitives for MLP networks and the batch/feature
statistics the SSL losses need. A ``Tape`` records primitive applications in
creation order; ``backward`` replays it in exact reverse order, so gradients
are deterministic (two identical tapes produce bit-identical gradients).

Tensors are immutable after creation except for their ``grad`` buffer and, for
parameters, in-place data updates by the single training thread. A tape must
never be driven from two threads.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested primitive."""


class TapeError(RuntimeError):
    """Tape misuse: foreign tensor, double replay, or missing tape."""


class ContractError(RuntimeError):
    """A caller violated an operation contract (e.g. non-scalar loss)."""


class NumericError(ArithmeticError):
    """Non-finite values or an invalid numeric domain."""


class DomainError(ValueError):
    """Argument outside its legal domain."""


class DegenerateBatchError(ValueError):
    """Batch statistics requested with fewer than two samples."""


class CheckpointError(RuntimeError):
    """Checkpoint files are missing, truncated, or inconsistent."""


_TAPE_STACK: list["Tape"] = []


@dataclass
class _Record:
    out: "Tensor"
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Tape:
    """Ordered record of primitive operations for one backward pass.

    Use as a context manager; primitives applied while a tape is active are
    recorded when any input is grad-enabled. A tape can be replayed once;
    rebuild it (a fresh forward pass) for the next gradient.
    """

    def __init__(self) -> None:
        self._records: list[_Record] = []
        self._consumed = False
        self._produced: set[int] = set()
        self._leaves: dict[int, "Tensor"] = {}

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def _record(self, rec: _Record) -> None:
        for t in rec.inputs:
            if t.grad_enabled and id(t) not in self._produced:
                self._leaves.setdefault(id(t), t)
        self._produced.add(id(rec.out))
        self._records.append(rec)

    def clear(self) -> None:
        """Release every cached intermediate held by this tape."""
        self._records.clear()
        self._produced.clear()
        self._leaves.clear()


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Dense n-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "grad_enabled", "tape")

    def __init__(self, data, grad_enabled: bool = False) -> None:
        arr = np.asarray(data, dtype=np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.grad_enabled = bool(grad_enabled)
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Stop-gradient view: same values, no tape, no gradient flow."""
        return Tensor(self.data, grad_enabled=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad_enabled={self.grad_enabled})"

    # Operator sugar; scalars and ndarrays are wrapped as constants.
    def __add__(self, other): return add(self, _wrap(other))
    def __radd__(self, other): return add(_wrap(other), self)
    def __sub__(self, other): return sub(self, _wrap(other))
    def __rsub__(self, other): return sub(_wrap(other), self)
    def __mul__(self, other): return mul(self, _wrap(other))
    def __rmul__(self, other): return mul(_wrap(other), self)
    def __truediv__(self, other): return div(self, _wrap(other))
    def __rtruediv__(self, other): return div(_wrap(other), self)
    def __matmul__(self, other): return matmul(self, _wrap(other))
    def __neg__(self): return neg(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(
    out_data: np.ndarray,
    inputs: tuple[Tensor, ...],
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]],
) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.grad_enabled for t in inputs)
    out = Tensor(out_data, grad_enabled=track)
    if track:
        out.tape = tape
        tape._record(_Record(out, inputs, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# Elementwise primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _apply(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _apply(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _apply(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _apply(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _apply(-a.data, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _apply(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def square(a: Tensor) -> Tensor:
    return _apply(a.data * a.data, (a,), lambda g: (g * (2.0 * a.data),))


def sqrt_eps(a: Tensor, eps: float) -> Tensor:
    """sqrt(x + eps) with caller-supplied eps > 0."""
    if not eps > 0.0:
        raise DomainError(f"sqrt_eps needs eps > 0, got {eps}")
    shifted = a.data + eps
    if np.any(shifted < 0.0):
        raise NumericError("sqrt_eps argument below -eps")
    out = np.sqrt(shifted)
    return _apply(out, (a,), lambda g: (g * (0.5 / out),))


def _sqrt0(a: Tensor) -> Tensor:
    """sqrt with subgradient 0 at 0; internal, used by batch_stats."""
    clipped = np.maximum(a.data, 0.0)
    out = np.sqrt(clipped)
    safe = np.where(out > 0.0, out, 1.0)
    return _apply(out, (a,), lambda g: (g * np.where(out > 0.0, 0.5 / safe, 0.0),))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "relu": relu,
    "square": square,
    "sqrt-eps": sqrt_eps,
}


def elementwise(kind: str, a: Tensor, b: Tensor | None = None, *, eps: float | None = None) -> Tensor:
    """Dispatch by kind name; binary kinds require ``b``, sqrt-eps requires ``eps``."""
    if kind not in _ELEMENTWISE:
        raise DomainError(f"unknown elementwise kind {kind!r}")
    fn = _ELEMENTWISE[kind]
    if kind in ("add", "sub", "mul", "div"):
        if b is None:
            raise ContractError(f"{kind} is binary")
        return fn(a, b)
    if kind == "sqrt-eps":
        if eps is None:
            raise ContractError("sqrt-eps needs eps")
        return fn(a, eps)
    return fn(a)


# ---------------------------------------------------------------------------
# Matrix / movement primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} @ {b.shape}")
    na, nb = a.grad_enabled, b.grad_enabled
    return _apply(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T if na else None, a.data.T @ g if nb else None),
    )


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused affine map x @ w + b with b of shape (1, out)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear shapes incompatible: {x.shape} @ {w.shape}")
    if b.shape != (1, w.shape[1]):
        raise ShapeError(f"bias must be (1, {w.shape[1]}), got {b.shape}")
    nx, nw, nb = x.grad_enabled, w.grad_enabled, b.grad_enabled
    return _apply(
        x.data @ w.data + b.data,
        (x, w, b),
        lambda g: (
            g @ w.data.T if nx else None,
            x.data.T @ g if nw else None,
            g.sum(axis=0, keepdims=True) if nb else None,
        ),
    )


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs rank-2, got {a.shape}")
    return _apply(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    return _apply(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ranks = {t.ndim for t in tensors}
    if len(ranks) != 1:
        raise ShapeError("concat operands must share rank")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> tuple[np.ndarray, ...]:
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    return _apply(out, tuple(tensors), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if not 0 <= axis < a.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {a.shape}")
    if not (0 <= start <= stop <= a.shape[axis]):
        raise ShapeError(f"slice [{start}:{stop}] invalid for extent {a.shape[axis]}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _apply(a.data[idx].copy(), (a,), backward)


def reduce(kind: str, a: Tensor, axis: int | None = None) -> Tensor:
    """sum or mean; the axis is removed (scalar result when axis is None)."""
    if kind not in ("sum", "mean"):
        raise DomainError(f"unknown reduce kind {kind!r}")
    if axis is not None and not 0 <= axis < a.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {a.shape}")
    count = a.size if axis is None else a.shape[axis]
    scale = 1.0 / count if kind == "mean" else 1.0

    if axis is None:
        out = a.data.sum() * scale

        def backward(g: np.ndarray) -> tuple[np.ndarray]:
            return (np.broadcast_to(g * scale, a.shape).copy(),)

    else:
        out = a.data.sum(axis=axis) * scale

        def backward(g: np.ndarray) -> tuple[np.ndarray]:
            return (np.broadcast_to(np.expand_dims(g * scale, axis), a.shape).copy(),)

    return _apply(np.asarray(out), (a,), backward)


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    return reduce("sum", a, axis)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    return reduce("mean", a, axis)


def batch_stats(z: Tensor) -> tuple[Tensor, Tensor]:
    """Per-dimension mean and population-variance std along the batch axis."""
    if z.ndim != 2:
        raise ShapeError(f"batch_stats needs a B x d matrix, got {z.shape}")
    if z.shape[0] < 2:
        raise DegenerateBatchError(f"batch_stats needs B >= 2, got B={z.shape[0]}")
    mean = tmean(z, axis=0)
    centered = sub(z, reshape(mean, (1, z.shape[1])))
    var = tmean(square(centered), axis=0)
    return mean, _sqrt0(var)


# ---------------------------------------------------------------------------
# Backward pass


def backward(loss: Tensor, tape: Tape) -> None:
    """Replay ``tape`` in reverse, filling ``grad`` on grad-enabled tensors.

    Every grad-enabled tensor the tape saw gets a gradient buffer; tensors off
    the path to the loss get zeros. A second call without rebuilding is
    rejected.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape:
        raise TapeError("loss was not produced under this tape")
    if tape._consumed:
        raise TapeError("tape already replayed; rebuild it before calling backward again")
    tape._consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape._records):
        g_out = grads.pop(id(rec.out), None)
        if g_out is None:
            g_out = np.zeros_like(rec.out.data)
        rec.out.grad = g_out
        contributions = rec.backward(g_out)
        for t, g in zip(rec.inputs, contributions):
            if g is None or not t.grad_enabled:
                continue
            prev = grads.get(id(t))
            grads[id(t)] = g if prev is None else prev + g
    for tid, leaf in tape._leaves.items():
        acc = grads.get(tid)
        leaf.grad = acc if acc is not None else np.zeros_like(leaf.data)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a pure scalar function of its tensor argument. Returns
    ``max_i |analytic_i - numeric_i| / max(1e-12, |analytic_i| + |numeric_i|)``.
    """
    if not h > 0.0:
        raise DomainError(f"grad_check needs h > 0, got {h}")
    base = np.array(x.data, dtype=np.float64, copy=True)

    with Tape() as tape:
        probe = Tensor(base.copy(), grad_enabled=True)
        out = f(probe)
    if out.size != 1:
        raise ContractError("grad_check needs a scalar-valued f")
    if not np.isfinite(out.data).all():
        raise NumericError("f(x) is not finite")
    if out.tape is tape:
        backward(out, tape)
    # else: f never touched the probe differentiably; analytic gradient is zero.
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(Tensor(base)).item()
        flat[i] = orig - h
        down = f(Tensor(base)).item()
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError("f is not finite near x")
        num_flat[i] = (up - down) / (2.0 * h)

    denom = np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------------------------------------------------------------------------
# Checkpoint format: JSON manifest + little-endian raw float64 blob


_MAGIC = "sprlab-checkpoint-v1"


def save_checkpoint(base_path: str | Path, arrays: dict[str, np.ndarray], extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<base>.json`` (manifest) and ``<base>.bin`` (raw '<f8' blob)."""
    base = Path(base_path)
    manifest_path = base.with_suffix(".json")
    blob_path = base.with_suffix(".bin")
    entries = []
    offset = 0
    chunks = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += len(raw)
        chunks.append(raw)
    manifest = {
        "format": _MAGIC,
        "byte_order": "little",
        "dtype": "float64",
        "blob": blob_path.name,
        "total_bytes": offset,
        "entries": entries,
    }
    if extra is not None:
        manifest["extra"] = extra
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    blob_path.write_bytes(b"".join(chunks))
    return manifest_path, blob_path


def load_checkpoint(base_path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint pair; returns (arrays, extra). Raises CheckpointError."""
    base = Path(base_path)
    manifest_path = base.with_suffix(".json")
    blob_path = base.with_suffix(".bin")
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read manifest {manifest_path}: {e}") from e
    if manifest.get("format") != _MAGIC:
        raise CheckpointError(f"unexpected manifest format {manifest.get('format')!r}")
    try:
        blob = blob_path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read blob {blob_path}: {e}") from e
    if len(blob) != manifest.get("total_bytes"):
        raise CheckpointError(
            f"blob size {len(blob)} differs from manifest total {manifest.get('total_bytes')}"
        )
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        end = start + count * struct.calcsize("<d")
        if end > len(blob):
            raise CheckpointError(f"entry {entry['name']!r} overruns the blob")
        arrays[entry["name"]] = np.frombuffer(blob[start:end], dtype="<f8").reshape(shape).copy()
    return arrays, manifest.get("extra", {})


def parameters_finite(arrays: Iterable[np.ndarray]) -> bool:
    return all(np.isfinite(a).all() for a in arrays)
