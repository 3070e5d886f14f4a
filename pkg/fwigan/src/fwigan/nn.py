"""Reverse-mode differentiation over dense float64 arrays.

Only the operations the critic needs are provided. Every backward rule is itself written
with Tensor operations, so a gradient computed with ``create_graph=True`` can be
differentiated again (the gradient penalty relies on this).
"""

import hashlib
import json
import logging
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def _grad_mode(enabled: bool) -> Iterator[None]:
    previous = is_grad_enabled()
    _grad_state.enabled = enabled
    try:
        yield
    finally:
        _grad_state.enabled = previous


def no_grad():
    """Operations inside the block record no graph."""
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


Vjp = Callable[["Tensor"], Sequence["Tensor | None"]]


class Tensor:
    """A dense array node in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple["Tensor", ...] = ()
        self._vjp: Vjp | None = None

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other) -> "Tensor":
        return add(as_tensor(other), neg(self))

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Tensor":
        return mul(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def sum(self, axis=None) -> "Tensor":
        return tensor_sum(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Vjp) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcast result back to shape."""
    if x.shape == tuple(shape):
        return x

    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and x.shape[lead + i] != 1
    )
    data = x.data.sum(axis=axes, keepdims=True).reshape(shape)

    return _make(data, (x,), lambda g: (broadcast_to(g, x.shape),))


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if x.shape == tuple(shape):
        return x

    data = np.broadcast_to(x.data, shape).copy()
    return _make(data, (x,), lambda g: (sum_to(g, x.shape),))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (neg(g),))


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    return _make(
        a.data**exponent,
        (a,),
        lambda g: (mul(g, mul(power(a, exponent - 1.0), exponent)),),
    )


def tensor_sum(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        axis = tuple(range(a.ndim))
    elif isinstance(axis, int):
        axis = (axis,)
    axis = tuple(ax % a.ndim for ax in axis)

    kept = tuple(1 if i in axis else n for i, n in enumerate(a.shape))
    data = a.data.sum(axis=axis)

    return _make(data, (a,), lambda g: (broadcast_to(reshape(g, kept), a.shape),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, a.shape),))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError(f"transpose expects a 2D tensor, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (transpose(g),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2D tensors, got {a.shape} and {b.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
    )


def im2col(x: Tensor) -> Tensor:
    """[C, H, W] -> [C*9, H*W] with zero same-padding; row index is c*9 + ki*3 + kj."""
    channels, height, width = x.shape
    padded = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    cols = np.empty((channels, 3, 3, height, width))
    for ki in range(3):
        for kj in range(3):
            cols[:, ki, kj] = padded[:, ki : ki + height, kj : kj + width]

    return _make(
        cols.reshape(channels * 9, height * width),
        (x,),
        lambda g: (col2im(g, x.shape),),
    )


def col2im(cols: Tensor, shape: tuple[int, int, int]) -> Tensor:
    """Adjoint of im2col."""
    channels, height, width = shape
    blocks = cols.data.reshape(channels, 3, 3, height, width)
    padded = np.zeros((channels, height + 2, width + 2))
    for ki in range(3):
        for kj in range(3):
            padded[:, ki : ki + height, kj : kj + width] += blocks[:, ki, kj]

    return _make(padded[:, 1:-1, 1:-1].copy(), (cols,), lambda g: (im2col(g),))


def pad_trailing(x: Tensor, height: int, width: int) -> Tensor:
    """Zero-pad the last two axes at their trailing edge up to (height, width)."""
    h, w = x.shape[-2:]
    if (h, w) == (height, width):
        return x
    if h > height or w > width:
        raise ValueError(f"Cannot pad {(h, w)} down to {(height, width)}")

    widths = [(0, 0)] * (x.ndim - 2) + [(0, height - h), (0, width - w)]
    return _make(np.pad(x.data, widths), (x,), lambda g: (crop(g, h, w),))


def crop(x: Tensor, height: int, width: int) -> Tensor:
    """Adjoint of pad_trailing."""
    if x.shape[-2:] == (height, width):
        return x

    h, w = x.shape[-2:]
    return _make(
        x.data[..., :height, :width].copy(),
        (x,),
        lambda g: (pad_trailing(g, h, w),),
    )


def gather_flat(x: Tensor, index: np.ndarray) -> Tensor:
    """Pick x.ravel()[index]; index is treated as a constant."""
    return _make(
        x.data.reshape(-1)[index],
        (x,),
        lambda g: (scatter_flat(g, index, x.shape),),
    )


def scatter_flat(values: Tensor, index: np.ndarray, shape: tuple[int, ...]) -> Tensor:
    """Adjoint of gather_flat: sum values into a zero array of the given shape."""
    size = int(np.prod(shape))
    data = np.bincount(
        index.reshape(-1), weights=values.data.reshape(-1), minlength=size
    ).reshape(shape)

    return _make(
        data, (values,), lambda g: (reshape(gather_flat(g, index), values.shape),)
    )


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    """x for x > 0, slope * x otherwise; the derivative at 0 is slope."""
    mask = np.where(x.data > 0, 1.0, slope)
    return mul(x, Tensor(mask))


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 stride-2 max pooling over [C, H, W]; ties go to the first cell in row-major order."""
    channels, height, width = x.shape
    if height % 2 or width % 2:
        raise ValueError(f"maxpool2d needs even spatial dims, got {(height, width)}")

    oh, ow = height // 2, width // 2
    windows = (
        x.data.reshape(channels, oh, 2, ow, 2)
        .transpose(0, 1, 3, 2, 4)
        .reshape(channels, oh, ow, 4)
    )
    k = windows.argmax(axis=-1)
    c = np.arange(channels)[:, None, None]
    i = np.arange(oh)[None, :, None]
    j = np.arange(ow)[None, None, :]
    index = c * height * width + (2 * i + k // 2) * width + (2 * j + k % 2)

    return reshape(gather_flat(x, index.reshape(-1)), (channels, oh, ow))


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """3x3 stride-1 cross-correlation with zero same-padding.

    Args:
    ----
        x (Tensor): Input of shape [C_in, H, W].
        kernel (Tensor): Weights of shape [C_out, C_in, 3, 3].
        bias (Tensor): Bias of shape [C_out].

    Returns:
    -------
        Tensor: Output of shape [C_out, H, W].
    """
    c_out, c_in, kh, kw = kernel.shape
    channels, height, width = x.shape
    if (kh, kw) != (3, 3):
        raise ValueError(f"Only 3x3 kernels are supported, got {(kh, kw)}")
    if channels != c_in:
        raise ValueError(f"Input has {channels} channels, kernel expects {c_in}")

    out = matmul(reshape(kernel, (c_out, c_in * 9)), im2col(x))
    out = add(out, reshape(bias, (c_out, 1)))

    return reshape(out, (c_out, height, width))


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """weight @ x + bias for a vector x of length N and weight [M, N]."""
    m, n = weight.shape
    if x.size != n:
        raise ValueError(f"dense expects {n} inputs, got {x.size}")

    out = matmul(weight, reshape(x, (n, 1)))
    return add(reshape(out, (m,)), bias)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue

        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    return order


def _propagate(
    out: Tensor, upstream: Tensor, create_graph: bool
) -> dict[int, tuple[Tensor, Tensor]]:
    """Map id(node) -> (node, d out / d node) for every node reachable from out."""
    grads: dict[int, tuple[Tensor, Tensor]] = {id(out): (out, upstream)}

    with _grad_mode(create_graph):
        for node in reversed(_topological_order(out)):
            entry = grads.get(id(node))
            if entry is None or node._vjp is None:
                continue

            parent_grads = node._vjp(entry[1])
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                previous = grads.get(id(parent))
                grads[id(parent)] = (
                    parent,
                    g if previous is None else add(previous[1], g),
                )

    return grads


def _check_scalar(out: Tensor) -> None:
    if out.size != 1:
        raise ValueError(f"Gradients need a scalar output, got shape {out.shape}")


def backward(out: Tensor) -> None:
    """Accumulate d out / d node into .grad of every node that requires grad."""
    _check_scalar(out)
    if not out.requires_grad:
        return

    for node, g in _propagate(out, Tensor(np.ones(out.shape)), False).values():
        node.grad = g.data.copy() if node.grad is None else node.grad + g.data


def grad(
    out: Tensor, inputs: Sequence[Tensor], create_graph: bool = False
) -> list[Tensor]:
    """Return d out / d input for each input without touching .grad.

    With create_graph the returned tensors are themselves differentiable."""
    _check_scalar(out)
    zeros = [Tensor(np.zeros(x.shape)) for x in inputs]
    if not out.requires_grad:
        return zeros

    grads = _propagate(out, Tensor(np.ones(out.shape)), create_graph)

    return [
        grads[id(x)][1] if id(x) in grads else zero for x, zero in zip(inputs, zeros)
    ]


class ParamEntry(BaseModel):
    shape: list[int]
    offset: int = Field(..., ge=0, description="Offset in elements")


class ParamIndex(BaseModel):
    format_version: int = 1
    dtype: str = "<f8"
    params: dict[str, ParamEntry]


class ParamStore:
    """Named trainable tensors with their gradient slots."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"Parameter {name} already exists")

        values = np.asarray(values, dtype=np.float64)
        if not np.isfinite(values).all():
            raise ValueError(f"Parameter {name} has non-finite values")

        tensor = Tensor(values.copy(), requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    @property
    def names(self) -> list[str]:
        return list(self._params)

    @property
    def count(self) -> int:
        return sum(p.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        return {
            name: p.grad if p.grad is not None else np.zeros(p.shape)
            for name, p in self._params.items()
        }

    def digest(self) -> str:
        sha = hashlib.sha256()
        for name, p in self._params.items():
            sha.update(name.encode())
            sha.update(p.data.astype("<f8").tobytes())
        return sha.hexdigest()

    def copy(self) -> "ParamStore":
        clone = ParamStore()
        for name, p in self._params.items():
            clone.add(name, p.data)
        return clone

    def save(self, path: Path) -> Path:
        """Write a flat little-endian float64 payload plus a JSON index next to it."""
        path = Path(path)
        entries: dict[str, ParamEntry] = {}
        offset = 0
        chunks = []
        for name, p in self._params.items():
            entries[name] = ParamEntry(shape=list(p.shape), offset=offset)
            chunks.append(p.data.astype("<f8").reshape(-1))
            offset += p.size

        path.write_bytes(np.concatenate(chunks).tobytes() if chunks else b"")
        index_path = path.with_suffix(".json")
        index_path.write_text(
            json.dumps(ParamIndex(params=entries).model_dump(), indent=2)
        )
        logger.info("Saved %d parameters to %s", offset, path)

        return index_path

    @classmethod
    def load(cls, path: Path) -> "ParamStore":
        path = Path(path)
        index = ParamIndex.model_validate_json(
            path.with_suffix(".json").read_text()
        )
        if index.format_version != 1 or index.dtype != "<f8":
            raise ValueError(
                f"Unsupported parameter file version {index.format_version} / {index.dtype}"
            )

        payload = np.frombuffer(path.read_bytes(), dtype="<f8")
        expected = sum(int(np.prod(e.shape)) for e in index.params.values())
        if payload.size != expected:
            raise ValueError(
                f"Parameter payload holds {payload.size} values, index expects {expected}"
            )

        store = cls()
        for name, entry in index.params.items():
            size = int(np.prod(entry.shape))
            store.add(
                name,
                payload[entry.offset : entry.offset + size].reshape(entry.shape),
            )

        return store


def uniform_init(
    rng: np.random.Generator, shape: tuple[int, ...], fan_in: int
) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
