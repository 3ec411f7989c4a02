"""Synthetic volumes, label maps, transforms and fields shared by the tests."""

import numpy as np

from embreg import AffineTransform, DisplacementField, Volume


def textured_body(dims, seed=0, n_blobs=6, body_value=-0.2, body_frac=0.82):
    """Feature-rich phantom: background -1, ellipsoidal body with smooth
    multi-frequency texture and a handful of blobs inside."""
    rng = np.random.default_rng(seed)
    D, H, W = dims
    zz, yy, xx = np.meshgrid(
        np.linspace(-1, 1, D), np.linspace(-1, 1, H), np.linspace(-1, 1, W), indexing="ij"
    )
    body = (zz / body_frac) ** 2 + (yy / body_frac) ** 2 + (xx / body_frac) ** 2 <= 1.0

    data = np.full(dims, -1.0)
    inside = np.full(dims, body_value)
    # smooth incommensurate texture so descriptors vary everywhere in the body
    for _ in range(4):
        freq = rng.uniform(1.5, 4.0, size=3)
        phase = rng.uniform(0, 2 * np.pi)
        inside += 0.12 * np.sin(freq[0] * np.pi * zz + freq[1] * np.pi * yy
                                + freq[2] * np.pi * xx + phase)
    centers = rng.uniform(-0.45, 0.45, size=(n_blobs, 3))
    sigmas = rng.uniform(0.08, 0.2, size=n_blobs)
    amps = rng.uniform(0.4, 0.9, size=n_blobs)
    for c, s, a in zip(centers, sigmas, amps):
        r2 = (zz - c[0]) ** 2 + (yy - c[1]) ** 2 + (xx - c[2]) ** 2
        inside += a * np.exp(-r2 / (2 * s * s))
    data[body] = inside[body]
    return Volume(np.clip(data, -1.0, 1.0).astype(np.float32))


def organ_phantom(dims, seed=0, n_organs=5):
    """Textured body plus n ellipsoidal 'organ' labels; returns (volume, labels)."""
    rng = np.random.default_rng(seed)
    D, H, W = dims
    zz, yy, xx = np.meshgrid(
        np.linspace(-1, 1, D), np.linspace(-1, 1, H), np.linspace(-1, 1, W), indexing="ij"
    )
    volume = textured_body(dims, seed=seed, n_blobs=4)
    data = volume.data.astype(np.float64)
    labels = np.zeros(dims, dtype=np.int32)
    centers = rng.uniform(-0.4, 0.4, size=(n_organs, 3))
    axes = rng.uniform(0.1, 0.22, size=(n_organs, 3))
    amps = rng.uniform(0.35, 0.85, size=n_organs)
    for i in range(n_organs):
        c, ax = centers[i], axes[i]
        r2 = ((zz - c[0]) / ax[0]) ** 2 + ((yy - c[1]) / ax[1]) ** 2 + ((xx - c[2]) / ax[2]) ** 2
        organ = r2 <= 1.0
        labels[organ] = i + 1
        data[organ] = np.clip(data[organ] + amps[i] * (1.0 - r2[organ]), -1.0, 1.0)
    return Volume(data.astype(np.float32)), labels


def affine_about_center(dims, rot_z_deg=0.0, rot_y_deg=0.0, rot_x_deg=0.0,
                        scale=1.0, translation=(0.0, 0.0, 0.0)) -> AffineTransform:
    """Rotation (about the volume center) + isotropic scale + translation,
    acting on (z, y, x) coordinates."""

    def rot(axis, deg):
        a = np.deg2rad(deg)
        c, s = np.cos(a), np.sin(a)
        m = np.eye(3)
        i, j = [k for k in range(3) if k != axis]
        m[i, i] = c
        m[j, j] = c
        m[i, j] = -s
        m[j, i] = s
        return m

    linear = scale * rot(0, rot_z_deg) @ rot(1, rot_y_deg) @ rot(2, rot_x_deg)
    center = (np.asarray(dims, dtype=float) - 1.0) / 2.0
    matrix = np.eye(4)
    matrix[:3, :3] = linear
    matrix[:3, 3] = center - linear @ center + np.asarray(translation, dtype=float)
    return AffineTransform(matrix)


def random_affine(dims, rng, max_rot_deg=15.0, scale_range=(0.9, 1.1), max_translation=10.0):
    return affine_about_center(
        dims,
        rot_z_deg=rng.uniform(-max_rot_deg, max_rot_deg),
        rot_y_deg=rng.uniform(-max_rot_deg, max_rot_deg),
        rot_x_deg=rng.uniform(-max_rot_deg, max_rot_deg),
        scale=rng.uniform(*scale_range),
        translation=rng.uniform(-max_translation, max_translation, size=3),
    )


def smooth_random_field(dims, max_voxels, seed=0, modes=3) -> DisplacementField:
    """Sum of low-frequency sinusoidal modes, scaled to the given max norm."""
    rng = np.random.default_rng(seed)
    D, H, W = dims
    zz, yy, xx = np.meshgrid(
        np.linspace(0, np.pi, D), np.linspace(0, np.pi, H), np.linspace(0, np.pi, W),
        indexing="ij",
    )
    tau = np.zeros((3, D, H, W))
    for c in range(3):
        for _ in range(modes):
            f = rng.uniform(0.5, 1.5, size=3)
            phase = rng.uniform(0, 2 * np.pi)
            tau[c] += rng.normal() * np.sin(f[0] * zz + f[1] * yy + f[2] * xx + phase)
    peak = np.abs(tau).max()
    if peak > 0:
        tau *= max_voxels / peak
    return DisplacementField(tau.astype(np.float32))


def random_unit_vectors(rng, shape_cdhw):
    """Random embedding data with unit-normalized voxel vectors."""
    raw = rng.normal(size=shape_cdhw)
    norms = np.sqrt((raw**2).sum(axis=0, keepdims=True))
    return (raw / norms).astype(np.float32)


def smooth_unit_embedding(dims, channels, rng, sigma=2.0):
    """Spatially smooth unit-vector field (for matching and gradient tests)."""
    from scipy.ndimage import gaussian_filter

    raw = rng.normal(size=(channels,) + tuple(dims))
    raw = gaussian_filter(raw, sigma=(0, sigma, sigma, sigma))
    norms = np.sqrt((raw**2).sum(axis=0, keepdims=True))
    norms[norms < 1e-12] = 1.0
    return (raw / norms).astype(np.float32)
