"""Binary tensor serialization.

Centralizes the on-disk tensor format used everywhere in the toolkit.
The layout is deliberately dumb so any language can read it:

    bytes 0..8    magic ``C3DTENS\\0``
    bytes 8..12   format version, u32 little-endian, currently 1
    bytes 12..16  dtype code, u32 little-endian: 0 = float32, 1 = float64
    bytes 16..20  ndim, u32 little-endian
    then          ndim dimension sizes, u64 little-endian each
    then          payload, row-major, little-endian, product(dims) elements

Files are written atomically enough for our purposes (single write call)
and identical tensors always produce identical bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

MAGIC = b"C3DTENS\x00"
FORMAT_VERSION = 1

# dtype tag <-> numpy dtype; all payloads are little-endian on disk.
DTYPE_CODES = {"f32": 0, "f64": 1}
CODE_DTYPES = {0: "f32", 1: "f64"}
NUMPY_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}

_MAX_NDIM = 32

_HEADER = struct.Struct("<III")  # version, dtype code, ndim


@dataclass(frozen=True)
class Tensor:
    """A dense numeric array with an explicit wire dtype.

    ``data`` is kept flat (1-D, row-major element order); use
    :meth:`asarray` for a view shaped to ``dims``.
    """

    dtype: str
    dims: tuple
    data: np.ndarray

    @classmethod
    def from_array(cls, arr, dtype=None) -> "Tensor":
        arr = np.asarray(arr)
        if dtype is None:
            dtype = "f64" if arr.dtype == np.float64 else "f32"
        if dtype not in DTYPE_CODES:
            raise FormatError(f"unsupported dtype {dtype!r}; expected one of {sorted(DTYPE_CODES)}")
        if arr.ndim == 0:
            raise FormatError("tensors must have at least one dimension")
        flat = np.ascontiguousarray(arr, dtype=NUMPY_DTYPES[dtype]).reshape(-1)
        return cls(dtype=dtype, dims=tuple(int(d) for d in arr.shape), data=flat)

    def asarray(self) -> np.ndarray:
        return self.data.reshape(self.dims)

    @property
    def size(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n


def _check_tensor(t: Tensor, allow_nonfinite: bool):
    if t.dtype not in DTYPE_CODES:
        raise FormatError(f"unsupported dtype {t.dtype!r}")
    if len(t.dims) == 0:
        raise FormatError("tensors must have at least one dimension")
    if len(t.dims) > _MAX_NDIM:
        raise FormatError(f"rank {len(t.dims)} exceeds the maximum of {_MAX_NDIM}")
    for d in t.dims:
        if int(d) <= 0:
            raise FormatError(f"dimension sizes must be positive, got {d}")
    if t.data.ndim != 1:
        raise FormatError("tensor data must be flat")
    if t.data.size != t.size:
        raise FormatError(
            f"data length {t.data.size} does not match product of dims {t.size}"
        )
    if not allow_nonfinite and not np.all(np.isfinite(t.data)):
        raise FormatError("tensor contains NaN or Inf (pass allow_nonfinite to permit)")


def write_tensor(t: Tensor, path, allow_nonfinite: bool = False):
    """Serialize ``t`` to ``path``. Identical tensors yield identical bytes."""
    _check_tensor(t, allow_nonfinite)
    payload = np.ascontiguousarray(t.data, dtype=NUMPY_DTYPES[t.dtype])
    parts = [
        MAGIC,
        _HEADER.pack(FORMAT_VERSION, DTYPE_CODES[t.dtype], len(t.dims)),
        struct.pack(f"<{len(t.dims)}Q", *[int(d) for d in t.dims]),
        payload.tobytes(),
    ]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_tensor(path) -> Tensor:
    """Parse a tensor file, rejecting anything that deviates from the format.

    Errors cite the byte offset of the first violation.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic; not a tensor file", offset=0)
    header_end = len(MAGIC) + _HEADER.size
    if len(blob) < header_end:
        raise FormatError("truncated header", offset=len(MAGIC))
    version, dtype_code, ndim = _HEADER.unpack(blob[len(MAGIC) : header_end])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", offset=8)
    if dtype_code not in CODE_DTYPES:
        raise FormatError(f"unknown dtype code {dtype_code}", offset=12)
    if ndim == 0 or ndim > _MAX_NDIM:
        raise FormatError(f"rank {ndim} outside [1, {_MAX_NDIM}]", offset=16)
    dims_end = header_end + 8 * ndim
    if len(blob) < dims_end:
        raise FormatError("truncated dimension list", offset=header_end)
    dims = struct.unpack(f"<{ndim}Q", blob[header_end:dims_end])
    count = 1
    for i, d in enumerate(dims):
        if d == 0:
            raise FormatError("dimension sizes must be positive", offset=header_end + 8 * i)
        count *= d
        if count > 2**48:
            raise FormatError("dimension product overflows", offset=header_end + 8 * i)
    dtype = CODE_DTYPES[dtype_code]
    itemsize = NUMPY_DTYPES[dtype].itemsize
    expected = count * itemsize
    actual = len(blob) - dims_end
    if actual != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected} bytes, got {actual}",
            offset=dims_end,
        )
    data = np.frombuffer(blob, dtype=NUMPY_DTYPES[dtype], offset=dims_end).copy()
    return Tensor(dtype=dtype, dims=tuple(int(d) for d in dims), data=data)
