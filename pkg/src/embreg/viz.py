"""Static slice rendering: grayscale panels with optional label contours."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .metrics import LabelVolume
from .volume import Volume

# fixed palette; labels index it modulo its length (label 1 -> first entry)
PALETTE = [
    (230, 60, 60),
    (60, 200, 80),
    (70, 110, 240),
    (240, 200, 40),
    (200, 70, 220),
    (60, 210, 210),
    (240, 140, 40),
    (150, 240, 60),
    (240, 80, 150),
]

_AXIS_NAMES = {0: "z", 1: "y", 2: "x", "z": 0, "y": 1, "x": 2}


def _resolve_axis(axis) -> int:
    if isinstance(axis, str):
        if axis not in _AXIS_NAMES:
            raise ValueError(f"axis must be one of z/y/x or 0/1/2, got {axis!r}")
        return _AXIS_NAMES[axis]
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be one of z/y/x or 0/1/2, got {axis!r}")
    return int(axis)


def _take_slice(data: np.ndarray, axis: int, index: int) -> np.ndarray:
    if not 0 <= index < data.shape[axis]:
        raise ValueError(
            f"slice index {index} out of range for axis {axis} (size {data.shape[axis]})"
        )
    return np.take(data, index, axis=axis)


def _to_gray(slc: np.ndarray) -> np.ndarray:
    # volumes are normalized to [-1, 1]
    return np.clip(np.floor((slc + 1.0) * 0.5 * 255.0 + 0.5), 0, 255).astype(np.uint8)


def _boundary(label_slice: np.ndarray) -> np.ndarray:
    """Pixels whose 4-neighborhood (in-slice) contains a different value."""
    lab = label_slice
    edge = np.zeros(lab.shape, dtype=bool)
    edge[:-1, :] |= lab[:-1, :] != lab[1:, :]
    edge[1:, :] |= lab[1:, :] != lab[:-1, :]
    edge[:, :-1] |= lab[:, :-1] != lab[:, 1:]
    edge[:, 1:] |= lab[:, 1:] != lab[:, :-1]
    return edge & (lab != 0)


def label_color(label: int) -> tuple[int, int, int]:
    return PALETTE[(int(label) - 1) % len(PALETTE)]


def emit_slices(
    volumes,
    labels: LabelVolume | None = None,
    axis=0,
    index: int | None = None,
    out_dir: str = ".",
    names=None,
) -> list[str]:
    """Write one PNG per volume at the chosen slice; returns the file paths.

    With labels, the label boundary pixels are overlaid in a fixed
    palette and the output is RGB; otherwise grayscale. Output bytes are
    deterministic for identical inputs.
    """
    if isinstance(volumes, Volume):
        volumes = [volumes]
    if not volumes:
        raise ValueError("emit_slices needs at least one volume")
    ax = _resolve_axis(axis)
    dims = volumes[0].dims
    for v in volumes:
        if v.dims != dims:
            raise ValueError(f"volume dims differ: {v.dims} != {dims}")
    if labels is not None and labels.dims != dims:
        raise ValueError(f"label dims {labels.dims} != volume dims {dims}")
    if index is None:
        index = dims[ax] // 2

    os.makedirs(out_dir, exist_ok=True)
    axis_name = _AXIS_NAMES[ax]
    if names is None:
        names = [f"volume{i}" for i in range(len(volumes))]

    label_slice = _take_slice(labels.data, ax, index) if labels is not None else None
    paths = []
    for name, v in zip(names, volumes):
        gray = _to_gray(_take_slice(v.data, ax, index))
        if label_slice is None:
            img = Image.fromarray(gray, mode="L")
        else:
            rgb = np.repeat(gray[:, :, None], 3, axis=2)
            edge = _boundary(label_slice)
            for lab in np.unique(label_slice[edge]):
                rgb[edge & (label_slice == lab)] = label_color(int(lab))
            img = Image.fromarray(rgb, mode="RGB")
        path = os.path.join(out_dir, f"{name}_{axis_name}{index:04d}.png")
        img.save(path)
        paths.append(path)
    return paths
