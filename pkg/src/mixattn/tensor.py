"""Dense rank-4 tensors and the small set of numeric primitives built on them.

Tensors are plain numpy arrays laid out head-major as ``(B, H, N, E)``. The
library runs at one global precision (f32 by default); operations refuse to
mix dtypes.
"""

from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ShapeError",
    "DomainError",
    "PrecisionError",
    "FormatError",
    "get_dtype",
    "get_precision",
    "set_precision",
    "precision",
    "verify_mode",
    "is_verify_mode",
    "tensor4",
    "check_tensor4",
    "check_finite",
    "same_dtype",
    "to_head_major",
    "to_seq_major",
    "batched_matmul",
    "elementwise",
    "row_reduce_sum",
    "gram_schmidt",
    "gaussian_orthogonal_matrix",
    "dump_tensor",
    "dumps_tensor",
    "load_tensor",
    "loads_tensor",
]


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class PrecisionError(TypeError):
    pass


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


_PRECISIONS = {"f32": np.float32, "f64": np.float64}


@dataclass
class _State:
    precision: str = "f32"
    verify: bool = False


_state = _State()


def get_precision() -> str:
    return _state.precision


def get_dtype() -> np.dtype:
    return np.dtype(_PRECISIONS[_state.precision])


def set_precision(name: str) -> None:
    if name not in _PRECISIONS:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _state.precision = name


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the library-wide precision."""
    old = _state.precision
    set_precision(name)
    try:
        yield get_dtype()
    finally:
        _state.precision = old


def is_verify_mode() -> bool:
    return _state.verify


@contextlib.contextmanager
def verify_mode(enabled: bool = True):
    """Enable finiteness and partition checks inside the kernels."""
    old = _state.verify
    _state.verify = enabled
    try:
        yield
    finally:
        _state.verify = old


def tensor4(data) -> np.ndarray:
    """Coerce ``data`` to a contiguous 4-d array at the current precision."""
    arr = np.ascontiguousarray(data, dtype=get_dtype())
    check_tensor4(arr)
    return arr


def check_tensor4(t: np.ndarray, name: str = "tensor") -> None:
    if t.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (B, H, N, E), got shape {t.shape}")
    if min(t.shape) < 1:
        raise ShapeError(f"{name} dims must all be >= 1, got {t.shape}")


def check_finite(t: np.ndarray, name: str = "output") -> None:
    if _state.verify and not np.all(np.isfinite(t)):
        raise DomainError(f"{name} contains NaN or Inf")


def same_dtype(*arrays: np.ndarray) -> np.dtype:
    dtypes = {a.dtype for a in arrays}
    if len(dtypes) != 1:
        raise PrecisionError(f"mixed precisions are not supported: {sorted(str(d) for d in dtypes)}")
    (dt,) = dtypes
    if dt not in (np.float32, np.float64):
        raise PrecisionError(f"unsupported dtype {dt}")
    return dt


def to_head_major(x: np.ndarray) -> np.ndarray:
    """(B, N, H, E) -> (B, H, N, E)."""
    return np.ascontiguousarray(np.swapaxes(x, 1, 2))


def to_seq_major(x: np.ndarray) -> np.ndarray:
    """(B, H, N, E) -> (B, N, H, E)."""
    return np.ascontiguousarray(np.swapaxes(x, 1, 2))


def batched_matmul(a: np.ndarray, b: np.ndarray, transpose_b: bool = False) -> np.ndarray:
    """Per-(batch, head) matrix product ``a @ b`` (or ``a @ b^T``)."""
    check_tensor4(a, "a")
    check_tensor4(b, "b")
    same_dtype(a, b)
    inner_b = b.shape[3] if transpose_b else b.shape[2]
    if a.shape[:2] != b.shape[:2] or a.shape[3] != inner_b:
        raise ShapeError(
            f"cannot multiply {a.shape} by {b.shape}{' transposed' if transpose_b else ''}"
        )
    rhs = np.swapaxes(b, -1, -2) if transpose_b else b
    out = np.matmul(a, rhs)
    check_finite(out, "batched_matmul")
    return out


def elementwise(t: np.ndarray, f: str, c: float | None = None) -> np.ndarray:
    """Apply ``exp``, ``elu_plus_one``, ``scale`` (by ``c``) or ``reciprocal``."""
    if f == "exp":
        out = np.exp(t)
    elif f == "elu_plus_one":
        # elu with alpha=1, plus one: x + 1 on x >= 0, exp(x) below
        out = np.where(t >= 0, t + 1, np.exp(np.minimum(t, 0)))
    elif f == "scale":
        if c is None:
            raise ValueError("scale needs a constant")
        out = t * t.dtype.type(c)
    elif f == "reciprocal":
        if np.any(t == 0):
            raise DomainError("reciprocal of zero")
        out = 1 / t
    else:
        raise ValueError(f"unknown elementwise map {f!r}")
    return out.astype(t.dtype, copy=False)


def row_reduce_sum(t: np.ndarray) -> np.ndarray:
    return t.sum(axis=-1, keepdims=True)


def gram_schmidt(a: np.ndarray) -> np.ndarray:
    """Orthonormalize the rows of a square matrix (modified Gram-Schmidt)."""
    q = np.array(a, dtype=np.float64)
    for i in range(q.shape[0]):
        for j in range(i):
            q[i] -= (q[i] @ q[j]) * q[j]
        norm = np.linalg.norm(q[i])
        if norm == 0:
            raise DomainError("rank-deficient block in Gram-Schmidt")
        q[i] /= norm
    return q


def gaussian_orthogonal_matrix(m: int, d: int, seed: int) -> np.ndarray:
    """m x d matrix of orthogonal Gaussian rows with chi(d)-distributed norms.

    Rows come in blocks of ``d``; each block is an orthonormalized d x d
    Gaussian sample, and each row is rescaled to the length of an independent
    d-dim Gaussian vector. Rows in the same block are mutually orthogonal.
    """
    if m < 1 or d < 1:
        raise ValueError(f"m and d must be >= 1, got m={m}, d={d}")
    rng = np.random.default_rng(seed)
    blocks = []
    remaining = m
    while remaining > 0:
        q = gram_schmidt(rng.standard_normal((d, d)))
        blocks.append(q[: min(d, remaining)])
        remaining -= d
    w = np.vstack(blocks)
    norms = np.linalg.norm(rng.standard_normal((m, d)), axis=1)
    w *= norms[:, None]
    return w.astype(get_dtype())


# binary dump: "GFT4", u8 precision tag, 4 x u32 dims, raw LE scalars
_MAGIC = b"GFT4"
_HEADER = struct.Struct("<4sB4I")
_TAGS = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def dumps_tensor(t: np.ndarray) -> bytes:
    check_tensor4(t)
    tag = t.dtype.itemsize
    if t.dtype.kind != "f" or tag not in _TAGS:
        raise PrecisionError(f"cannot serialize dtype {t.dtype}")
    header = _HEADER.pack(_MAGIC, tag, *t.shape)
    return header + np.ascontiguousarray(t, dtype=_TAGS[tag]).tobytes()


def loads_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 4 and buf == _MAGIC[: len(buf)]:
        raise FormatError("truncated magic", len(buf))
    if buf[:4] != _MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", 0)
    if len(buf) < 5:
        raise FormatError("missing precision tag", 4)
    if buf[4] not in _TAGS:
        raise FormatError(f"unknown precision tag {buf[4]}", 4)
    if len(buf) < _HEADER.size:
        raise FormatError("truncated dims", len(buf))
    _, tag, *dims = _HEADER.unpack_from(buf)
    for i, d in enumerate(dims):
        if d < 1:
            raise FormatError(f"dim {i} is zero", 5 + 4 * i)
    dtype = _TAGS[tag]
    expected = int(np.prod(dims)) * dtype.itemsize
    body = len(buf) - _HEADER.size
    if body != expected:
        raise FormatError(f"payload has {body} bytes, expected {expected}", _HEADER.size + min(body, expected))
    arr = np.frombuffer(buf, dtype=dtype, offset=_HEADER.size).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def dump_tensor(t: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_tensor(t))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return loads_tensor(fh.read())
