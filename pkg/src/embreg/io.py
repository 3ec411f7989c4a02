"""File I/O: MetaImage (.mhd + .raw) and the native .evol container.

MetaImage headers store DimSize / ElementSpacing / Offset in (x, y, z)
order; the toolkit flips them to its internal (z, y, x) convention on load
and back on save.

.evol layout (all little-endian):
    magic  "EVOL\\0"            5 bytes
    version u16 = 1
    C, D, H, W                  u32 each
    spacing (sz, sy, sx)        f32 each
    origin  (oz, oy, ox)        f32 each
    payload C*D*H*W f32, channel-major

Scalar volumes use C=1, displacement fields C=3, embeddings C=channels.
Round trips are bitwise lossless for float32 data.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import VolumeIOError
from .volume import Volume

EVOL_MAGIC = b"EVOL\x00"
EVOL_VERSION = 1

_MHD_DTYPES = {
    "MET_SHORT": np.dtype("<i2"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_UCHAR": np.dtype("<u1"),
}


# ---------------------------------------------------------------------------
# MetaImage


def _parse_mhd_header(path: str) -> dict:
    header = {}
    try:
        with open(path, "r", encoding="ascii", errors="replace") as fh:
            for line in fh:
                line = line.strip()
                if not line or "=" not in line:
                    continue
                key, value = line.split("=", 1)
                header[key.strip()] = value.strip()
    except FileNotFoundError:
        raise VolumeIOError(f"header file not found: {path}") from None
    return header


def _read_mhd(path: str):
    header = _parse_mhd_header(path)
    ndims = header.get("NDims")
    if ndims is not None and int(ndims) != 3:
        raise VolumeIOError(f"unsupported NDims in {path}: {ndims} (need 3)")
    if "DimSize" not in header:
        raise VolumeIOError(f"missing DimSize in {path}")
    if "ElementType" not in header:
        raise VolumeIOError(f"missing ElementType in {path}")
    if "ElementDataFile" not in header:
        raise VolumeIOError(f"missing ElementDataFile in {path}")

    size_xyz = [int(t) for t in header["DimSize"].split()]
    if len(size_xyz) != 3:
        raise VolumeIOError(f"DimSize must have 3 entries, got {header['DimSize']!r}")
    dims = (size_xyz[2], size_xyz[1], size_xyz[0])

    etype = header["ElementType"]
    if etype not in _MHD_DTYPES:
        raise VolumeIOError(
            f"unsupported ElementType {etype!r} in {path}; "
            f"expected one of {sorted(_MHD_DTYPES)}"
        )
    dtype = _MHD_DTYPES[etype]
    if header.get("BinaryDataByteOrderMSB", "False").lower() in ("true", "1"):
        dtype = dtype.newbyteorder(">")

    def _vec(key, default):
        if key not in header:
            return default
        vals = [float(t) for t in header[key].split()]
        if len(vals) != 3:
            raise VolumeIOError(f"{key} must have 3 entries, got {header[key]!r}")
        return (vals[2], vals[1], vals[0])

    spacing = _vec("ElementSpacing", (1.0, 1.0, 1.0))
    origin = _vec("Offset", (0.0, 0.0, 0.0))

    datafile = header["ElementDataFile"]
    if datafile.upper() == "LOCAL":
        raise VolumeIOError(f"ElementDataFile = LOCAL is not supported ({path})")
    raw_path = os.path.join(os.path.dirname(os.path.abspath(path)), datafile)
    if not os.path.exists(raw_path):
        raise VolumeIOError(f"raw data file not found: {raw_path}")

    expected = int(np.prod(dims)) * dtype.itemsize
    actual = os.path.getsize(raw_path)
    if actual != expected:
        raise VolumeIOError(
            f"raw size mismatch for {raw_path}: header DimSize implies "
            f"{expected} bytes ({int(np.prod(dims))} elements), file has {actual}"
        )
    raw = np.fromfile(raw_path, dtype=dtype).reshape(dims)
    return raw, spacing, origin


def _write_mhd(path: str, data: np.ndarray, spacing, origin, element_type: str):
    dtype = _MHD_DTYPES[element_type]
    base = os.path.splitext(os.path.basename(path))[0]
    raw_name = base + ".raw"
    raw_path = os.path.join(os.path.dirname(os.path.abspath(path)), raw_name)
    D, H, W = data.shape
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        f"DimSize = {W} {H} {D}",
        f"ElementSpacing = {spacing[2]:.9g} {spacing[1]:.9g} {spacing[0]:.9g}",
        f"Offset = {origin[2]:.9g} {origin[1]:.9g} {origin[0]:.9g}",
        f"ElementType = {element_type}",
        f"ElementDataFile = {raw_name}",
    ]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    np.ascontiguousarray(data, dtype=dtype).tofile(raw_path)


# ---------------------------------------------------------------------------
# Native .evol container


def save_evol(path: str, data: np.ndarray, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """Write a (C, D, H, W) or (D, H, W) float32 array to an .evol file."""
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise VolumeIOError(f"evol payload must be 3D or 4D, got shape {arr.shape}")
    c, d, h, w = arr.shape
    header = EVOL_MAGIC + struct.pack("<H", EVOL_VERSION)
    header += struct.pack("<4I", c, d, h, w)
    header += struct.pack("<3f", *[float(s) for s in spacing])
    header += struct.pack("<3f", *[float(o) for o in origin])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_evol(path: str):
    """Read an .evol file; returns (data (C, D, H, W) float32, spacing, origin)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise VolumeIOError(f"file not found: {path}") from None
    if len(blob) < 47 or blob[:5] != EVOL_MAGIC:
        raise VolumeIOError(f"not an evol container: {path}")
    (version,) = struct.unpack_from("<H", blob, 5)
    if version != EVOL_VERSION:
        raise VolumeIOError(f"unsupported evol version {version} in {path}")
    c, d, h, w = struct.unpack_from("<4I", blob, 7)
    spacing = struct.unpack_from("<3f", blob, 23)
    origin = struct.unpack_from("<3f", blob, 35)
    expected = 47 + c * d * h * w * 4
    if len(blob) != expected:
        raise VolumeIOError(
            f"evol size mismatch for {path}: header implies {expected} bytes, "
            f"file has {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=47).reshape(c, d, h, w).copy()
    return data, tuple(float(s) for s in spacing), tuple(float(o) for o in origin)


# ---------------------------------------------------------------------------
# Typed entry points


def load_volume(path: str) -> Volume:
    """Load a scalar volume from a .mhd/.raw pair or an .evol container."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".mhd":
        raw, spacing, origin = _read_mhd(path)
        return Volume(raw.astype(np.float32), spacing, origin)
    if ext == ".evol":
        data, spacing, origin = load_evol(path)
        if data.shape[0] != 1:
            raise VolumeIOError(
                f"expected a scalar volume (C=1) in {path}, found C={data.shape[0]}"
            )
        return Volume(data[0], spacing, origin)
    raise VolumeIOError(f"unsupported volume extension {ext!r} for {path}")


def save_volume(v: Volume, path: str) -> None:
    """Save a volume; format chosen by extension (.mhd writes MET_FLOAT)."""
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".mhd":
            _write_mhd(path, v.data, v.spacing, v.origin, "MET_FLOAT")
        elif ext == ".evol":
            save_evol(path, v.data, v.spacing, v.origin)
        else:
            raise VolumeIOError(f"unsupported volume extension {ext!r} for {path}")
    except OSError as exc:
        raise VolumeIOError(f"cannot write {path}: {exc}") from exc


def load_labels(path: str) -> np.ndarray:
    """Load an integer label map (.mhd MET_UCHAR/MET_SHORT, or .evol C=1)."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".mhd":
        raw, _, _ = _read_mhd(path)
        return np.ascontiguousarray(raw.astype(np.int32))
    if ext == ".evol":
        data, _, _ = load_evol(path)
        if data.shape[0] != 1:
            raise VolumeIOError(f"label map must have C=1 in {path}")
        return np.ascontiguousarray(np.rint(data[0]).astype(np.int32))
    raise VolumeIOError(f"unsupported label extension {ext!r} for {path}")


def save_labels(labels: np.ndarray, path: str, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> None:
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".mhd":
            lmax = int(labels.max()) if labels.size else 0
            lmin = int(labels.min()) if labels.size else 0
            etype = "MET_UCHAR" if 0 <= lmin and lmax <= 255 else "MET_SHORT"
            _write_mhd(path, labels, spacing, origin, etype)
        elif ext == ".evol":
            save_evol(path, labels.astype(np.float32), spacing, origin)
        else:
            raise VolumeIOError(f"unsupported label extension {ext!r} for {path}")
    except OSError as exc:
        raise VolumeIOError(f"cannot write {path}: {exc}") from exc
