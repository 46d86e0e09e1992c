"""Minimal single-file NIfTI-1 reading and writing.

Covers exactly what this pipeline needs: gzip-compressed .nii.gz (and plain
.nii) volumes with a 348-byte header, sform affine, and the common scalar
datatypes. Data is stored in Fortran order (first index fastest) as the
format requires, so arrays round-trip bitwise.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HEADER_SIZE = 348
MAGIC_SINGLE = b"n+1\x00"

# NIfTI datatype code -> numpy dtype
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


@dataclass
class NiftiImage:
    data: np.ndarray
    affine: np.ndarray
    spacing: tuple[float, float, float]


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def read_nifti(path: str | Path) -> NiftiImage:
    path = Path(path)
    blob = _read_bytes(path)
    if len(blob) < HEADER_SIZE:
        raise ValueError(f"{path}: truncated NIfTI header")
    endian = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", blob, 0)
    if sizeof_hdr != HEADER_SIZE:
        endian = ">"
        (sizeof_hdr,) = struct.unpack_from(">i", blob, 0)
        if sizeof_hdr != HEADER_SIZE:
            raise ValueError(f"{path}: not a NIfTI-1 file (sizeof_hdr={sizeof_hdr})")
    if blob[344:347] not in (b"n+1", b"ni1"):
        raise ValueError(f"{path}: bad NIfTI magic {blob[344:348]!r}")

    dim = struct.unpack_from(f"{endian}8h", blob, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise ValueError(f"{path}: invalid dim[0]={ndim}")
    shape = tuple(int(d) for d in dim[1 : 1 + ndim])
    # trailing singleton dims (e.g. stored as 4D with one frame) are squeezed
    while len(shape) > 3 and shape[-1] == 1:
        shape = shape[:-1]
    if len(shape) != 3:
        raise ValueError(f"{path}: expected a 3D volume, got shape {shape}")

    (datatype,) = struct.unpack_from(f"{endian}h", blob, 70)
    if datatype not in _DTYPES:
        raise ValueError(f"{path}: unsupported NIfTI datatype code {datatype}")
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder(endian)

    pixdim = struct.unpack_from(f"{endian}8f", blob, 76)
    spacing = tuple(float(abs(p)) if p != 0 else 1.0 for p in pixdim[1:4])

    (vox_offset,) = struct.unpack_from(f"{endian}f", blob, 108)
    offset = int(vox_offset) if vox_offset >= HEADER_SIZE else HEADER_SIZE + 4
    slope, inter = struct.unpack_from(f"{endian}2f", blob, 112)

    (sform_code,) = struct.unpack_from(f"{endian}h", blob, 254)
    affine = np.eye(4)
    if sform_code > 0:
        rows = struct.unpack_from(f"{endian}12f", blob, 280)
        affine[0, :] = rows[0:4]
        affine[1, :] = rows[4:8]
        affine[2, :] = rows[8:12]
    else:
        affine[0, 0], affine[1, 1], affine[2, 2] = spacing

    count = int(np.prod(shape))
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    data = data.reshape(shape, order="F")
    if (slope not in (0.0, 1.0)) or inter != 0.0:
        data = data * np.float32(slope if slope != 0.0 else 1.0) + np.float32(inter)
    return NiftiImage(data=np.ascontiguousarray(data), affine=affine, spacing=spacing)


def write_nifti(
    path: str | Path,
    data: np.ndarray,
    affine: np.ndarray | None = None,
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
):
    """Write a 3D array as single-file NIfTI-1, gzipped when the path ends
    in .gz. The affine is stored as the sform (float32, as the format
    dictates)."""
    path = Path(path)
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"expected a 3D array, got shape {data.shape}")
    dtype = np.dtype(data.dtype).newbyteorder("=")
    if dtype not in _CODES:
        raise ValueError(f"unsupported dtype {data.dtype} for NIfTI output")
    if affine is None:
        affine = np.diag([*spacing, 1.0])
    affine = np.asarray(affine, dtype=np.float64)

    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    header[38] = ord("r")  # regular
    struct.pack_into("<8h", header, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, _CODES[dtype])
    struct.pack_into("<h", header, 72, dtype.itemsize * 8)  # bitpix
    struct.pack_into("<8f", header, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, float(HEADER_SIZE + 4))  # vox_offset
    struct.pack_into("<2f", header, 112, 1.0, 0.0)  # scl_slope, scl_inter
    header[123] = 2  # spatial units: millimetres
    struct.pack_into("<2h", header, 252, 0, 1)  # qform_code, sform_code
    struct.pack_into("<12f", header, 280, *affine[0], *affine[1], *affine[2])
    header[344:348] = MAGIC_SINGLE

    blob = bytes(header) + b"\x00" * 4 + data.astype(dtype, copy=False).tobytes(order="F")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if path.suffix == ".gz":
        with open(tmp, "wb") as fh:
            with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(blob)
    else:
        tmp.write_bytes(blob)
    tmp.replace(path)
