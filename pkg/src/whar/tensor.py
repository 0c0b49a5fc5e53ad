"""Dense tensor value type and 16-bit float storage conversion.

Weights and archived activations travel as immutable, row-major,
numpy-backed tensors restricted to float32/float16 payloads. Compute
happens on plain float32 ndarrays; this wrapper exists so that storage
invariants (finiteness, shape/payload agreement, dtype) are enforced at
the archive boundary.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

F16_MAX = 65504.0

_NUMPY_DTYPES = {"f32": np.dtype("<f4"), "f16": np.dtype("<f2")}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float16): "f16"}
DTYPE_SIZES = {"f32": 4, "f16": 2}


class Tensor:
    """Immutable row-major array holding float32 or float16 scalars.

    Construction validates that the payload is finite and that the shape
    matches the scalar count; the backing array is marked read-only so
    instances can be shared across threads without locking.
    """

    __slots__ = ("_data",)

    def __init__(self, data, dtype: str | None = None, shape=None):
        arr = np.asarray(data)
        if dtype is not None:
            if dtype not in _NUMPY_DTYPES:
                raise TypeError(f"unknown dtype {dtype!r}; expected 'f32' or 'f16'")
            arr = arr.astype(_NUMPY_DTYPES[dtype], copy=False)
        if arr.dtype not in _DTYPE_NAMES:
            raise TypeError(f"unsupported dtype {arr.dtype}; expected float32 or float16")
        if shape is not None:
            shape = tuple(int(d) for d in shape)
            n = int(np.prod(shape, dtype=np.int64)) if shape else 1
            if n != arr.size:
                raise ShapeError(f"shape {shape} implies {n} scalars, payload has {arr.size}")
            arr = arr.reshape(shape)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"extents must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor payload contains NaN or Inf")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def dtype(self) -> str:
        return _DTYPE_NAMES[self._data.dtype]

    @property
    def shape(self) -> tuple:
        return self._data.shape

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def nbytes(self) -> int:
        return self._data.size * DTYPE_SIZES[self.dtype]

    def astype_f32(self) -> np.ndarray:
        """Return the payload as a float32 ndarray (upcast for compute)."""
        return self._data.astype(np.float32, copy=False)

    def tobytes(self) -> bytes:
        """Row-major little-endian payload bytes."""
        return self._data.astype(_NUMPY_DTYPES[self.dtype], copy=False).tobytes(order="C")

    @classmethod
    def frombytes(cls, payload: bytes, dtype: str, shape) -> "Tensor":
        if dtype not in _NUMPY_DTYPES:
            raise TypeError(f"unknown dtype {dtype!r}")
        arr = np.frombuffer(payload, dtype=_NUMPY_DTYPES[dtype]).copy()
        return cls(arr, shape=shape)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.dtype == other.dtype
            and self.shape == other.shape
            and self.tobytes() == other.tobytes()
        )

    def __hash__(self):
        return hash((self.dtype, self.shape, self.tobytes()))

    def __repr__(self):
        return f"Tensor(dtype={self.dtype}, shape={self.shape})"


def to_f16_roundtrip(t: Tensor, name: str = "tensor") -> Tensor:
    """Quantize an f32 tensor through IEEE binary16 and re-expand to f32.

    Conversion uses round-to-nearest-even (numpy's float16 cast). Values
    whose magnitude exceeds the largest finite binary16 raise OverflowError
    naming the offending tensor.
    """
    if t.dtype != "f32":
        raise TypeError(f"{name}: expected f32 input, got {t.dtype}")
    a = t.data
    amax = float(np.max(np.abs(a)))
    if amax > F16_MAX:
        raise OverflowError(f"{name}: magnitude {amax} exceeds float16 max finite {F16_MAX}")
    return Tensor(a.astype(np.float16).astype(np.float32))


def quantize_f16(t: Tensor, name: str = "tensor") -> Tensor:
    """Convert an f32 tensor to f16 storage; f16 inputs pass through."""
    if t.dtype == "f16":
        return t
    amax = float(np.max(np.abs(t.data)))
    if amax > F16_MAX:
        raise OverflowError(f"{name}: magnitude {amax} exceeds float16 max finite {F16_MAX}")
    return Tensor(t.data.astype(np.float16))
