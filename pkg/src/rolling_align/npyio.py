"""NPY v1.0 file protocol: little-endian float32 (or bool masks), C order."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from numpy.lib import format as npy_format

from .errors import ManifestMismatch

FLOAT_DTYPE = np.dtype("<f4")
BOOL_DTYPE = np.dtype("|b1")


def save_array(path, arr, dtype=FLOAT_DTYPE) -> None:
    """Write ``arr`` as NPY 1.0; float data is stored as little-endian float32."""
    arr = np.ascontiguousarray(np.asarray(arr).astype(np.dtype(dtype), copy=False))
    with open(path, "wb") as fh:
        npy_format.write_array(fh, arr, version=(1, 0), allow_pickle=False)


def save_mask(path, mask) -> None:
    save_array(path, np.asarray(mask, dtype=bool), BOOL_DTYPE)


def load_array(path, ndim: int | None = None, dtype=FLOAT_DTYPE) -> np.ndarray:
    """Read an NPY 1.0 array, checking dtype, order and (optionally) rank."""
    path = Path(path)
    with open(path, "rb") as fh:
        version = npy_format.read_magic(fh)
        if version != (1, 0):
            raise ManifestMismatch(f"{path.name}: NPY version {version}, expected (1, 0)")
        shape, fortran, file_dtype = npy_format.read_array_header_1_0(fh)
        if fortran:
            raise ManifestMismatch(f"{path.name}: Fortran-ordered arrays are not accepted")
        if dtype is not None and file_dtype != np.dtype(dtype):
            raise ManifestMismatch(f"{path.name}: dtype {file_dtype.str}, expected {np.dtype(dtype).str}")
        if ndim is not None and len(shape) != ndim:
            raise ManifestMismatch(f"{path.name}: rank {len(shape)}, expected {ndim}")
        count = int(np.prod(shape, dtype=np.int64))
        data = np.fromfile(fh, dtype=file_dtype, count=count)
        if data.size != count:
            raise ManifestMismatch(f"{path.name}: truncated payload ({data.size} of {count} values)")
    return data.reshape(shape)


def load_mask(path, ndim: int | None = None) -> np.ndarray:
    return load_array(path, ndim, BOOL_DTYPE)
