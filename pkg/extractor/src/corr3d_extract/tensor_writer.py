"""Writer for the scoring toolkit's binary tensor container.

Implemented from the wire contract alone so this package stays
independent of the toolkit's code: 8-byte magic ``C3DTENS\\x00``, then
little-endian u32 version (1), u32 dtype code (0 = f32, 1 = f64),
u32 ndim, ndim u64 dims, and the row-major little-endian payload.
"""

import struct

import numpy as np

MAGIC = b"C3DTENS\x00"
VERSION = 1

_DTYPE_CODES = {"float32": 0, "float64": 1}
_WIRE_DTYPES = {"float32": "<f4", "float64": "<f8"}


def tensor_bytes(arr: np.ndarray) -> bytes:
    """Serialize an f32 or f64 array; raises ValueError on other dtypes."""
    name = arr.dtype.name
    if name not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype {arr.dtype}, expected float32 or float64")
    if arr.ndim == 0:
        raise ValueError("0-d arrays have no dims field, reshape to (1,)")
    header = MAGIC + struct.pack("<III", VERSION, _DTYPE_CODES[name], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_WIRE_DTYPES[name]).tobytes()
    return header + payload


def write_tensor_file(arr: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_bytes(arr))
