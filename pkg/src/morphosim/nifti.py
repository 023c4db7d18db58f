"""Minimal NIfTI-1 single-file (.nii) reader and writer.

Only the subset this toolkit needs: little-endian, uncompressed, no
extensions, datatypes uint8 / int16 / float32 on read and float32 (uint8
for masks) on write. The qform/sform block is kept as opaque bytes so a
read-modify-write cycle does not lose orientation metadata.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .volume import Grid3, Mask3, Volume3

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

DT_UINT8, DT_INT16, DT_FLOAT32 = 2, 4, 16
_DTYPES = {
    DT_UINT8: np.dtype("<u1"),
    DT_INT16: np.dtype("<i2"),
    DT_FLOAT32: np.dtype("<f4"),
}
INTENT_NONE, INTENT_VECTOR = 0, 1007

# byte range holding qform_code .. srow_z
_GEOMETRY = slice(252, 328)


def _parse(path) -> tuple[dict, np.ndarray]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read file ({exc.strerror})") from exc
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: sizeof_hdr: file shorter than a 348-byte header")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        if struct.unpack_from(">i", raw, 0)[0] == HEADER_SIZE:
            raise FormatError(f"{path}: sizeof_hdr: big-endian files are not supported")
        raise FormatError(f"{path}: sizeof_hdr: expected 348, got {sizeof_hdr}")
    magic = raw[344:348]
    if magic != MAGIC:
        raise FormatError(f"{path}: magic: expected 'n+1\\0' single-file NIfTI-1, got {magic!r}")

    dim = struct.unpack_from("<8h", raw, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7 or any(d < 1 for d in dim[1:ndim + 1]):
        raise FormatError(f"{path}: dim: invalid dimension vector {dim}")
    intent_code, datatype, bitpix = struct.unpack_from("<3h", raw, 68)
    if datatype not in _DTYPES:
        raise FormatError(f"{path}: datatype: unsupported code {datatype} (need uint8, int16 or float32)")
    dtype = _DTYPES[datatype]
    pixdim = struct.unpack_from("<8f", raw, 76)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    slope, inter = struct.unpack_from("<2f", raw, 112)

    shape = tuple(dim[1:ndim + 1])
    count = int(np.prod(shape))
    offset = int(vox_offset)
    if offset < HEADER_SIZE:
        raise FormatError(f"{path}: vox_offset: {vox_offset} lies inside the header")
    need = offset + count * dtype.itemsize
    if len(raw) < need:
        raise FormatError(
            f"{path}: payload truncated: need {count * dtype.itemsize} bytes at offset {offset}, "
            f"file has {len(raw) - offset}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape, order="F")
    header = {
        "dim": dim,
        "shape": shape,
        "datatype": datatype,
        "intent_code": intent_code,
        "pixdim": pixdim,
        "scl_slope": slope,
        "scl_inter": inter,
        "geometry": raw[_GEOMETRY],
    }
    return header, data


def _scaled(header: dict, data: np.ndarray) -> np.ndarray:
    out = data.astype(np.float64)
    slope, inter = header["scl_slope"], header["scl_inter"]
    if np.isfinite(slope) and slope != 0 and (slope != 1 or inter != 0):
        out = out * slope + inter
    return out


def _spatial_grid(path, header: dict) -> Grid3:
    shape = header["shape"]
    if len(shape) < 3:
        raise FormatError(f"{path}: dim: need at least 3 spatial dimensions, got {len(shape)}")
    spacing = tuple(abs(float(s)) for s in header["pixdim"][1:4])
    try:
        return Grid3(shape[:3], spacing)
    except ValueError as exc:
        raise FormatError(f"{path}: pixdim/dim: {exc}") from exc


def _header_bytes(shape, spacing, datatype, intent_code=INTENT_NONE, geometry=None,
                  descrip=b"morphosim") -> bytes:
    itemsize = _DTYPES[datatype].itemsize
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    hdr[38] = ord("r")
    dim = [len(shape)] + list(shape) + [1] * (7 - len(shape))
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<3h", hdr, 68, intent_code, datatype, 8 * itemsize)
    pixdim = [1.0] + list(spacing) + [1.0] * (7 - len(spacing))
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 0.0, 0.0)
    hdr[123] = 2  # xyzt_units: millimetres
    hdr[148:148 + len(descrip)] = descrip[:80]
    if geometry is not None:
        hdr[_GEOMETRY] = geometry
    hdr[344:348] = MAGIC
    return bytes(hdr)


def _write_raw(path, array: np.ndarray, spacing, datatype, intent_code=INTENT_NONE, geometry=None):
    path = Path(path)
    payload = np.asarray(array, dtype=_DTYPES[datatype]).tobytes(order="F")
    header = _header_bytes(array.shape, spacing, datatype, intent_code, geometry)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(b"\x00" * (VOX_OFFSET - HEADER_SIZE))
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise FormatError(f"{path}: cannot write file ({exc.strerror})") from exc


def read_nifti(path) -> Volume3:
    header, data = _parse(path)
    grid = _spatial_grid(path, header)
    if int(np.prod(header["shape"][3:])) != 1:
        raise FormatError(f"{path}: dim: expected a scalar volume, got shape {header['shape']}")
    values = _scaled(header, data).reshape(grid.dims, order="F")
    return Volume3(grid, values, header["geometry"])


def write_nifti(v: Volume3, path) -> None:
    _write_raw(path, v.data, v.grid.spacing, DT_FLOAT32, geometry=v.geometry)


def read_mask(path) -> Mask3:
    header, data = _parse(path)
    grid = _spatial_grid(path, header)
    return Mask3(grid, (data != 0).reshape(grid.dims, order="F"))


def write_mask(m: Mask3, path) -> None:
    _write_raw(path, m.data.astype(np.uint8), m.grid.spacing, DT_UINT8)


def read_field(path):
    """Read a displacement field stored as dim=[5, nx, ny, nz, 1, 3]."""
    from .deformation import DisplacementField3

    header, data = _parse(path)
    grid = _spatial_grid(path, header)
    shape = header["shape"]
    if len(shape) != 5 or shape[3] != 1 or shape[4] != 3:
        raise FormatError(f"{path}: dim: displacement field must be [5, nx, ny, nz, 1, 3], got {header['dim']}")
    values = _scaled(header, data).reshape(grid.dims + (3,), order="F")
    return DisplacementField3(grid, values)


def write_field(f, path) -> None:
    data = f.data.reshape(f.grid.dims + (1, 3))
    _write_raw(path, data, f.grid.spacing, DT_FLOAT32, intent_code=INTENT_VECTOR)
