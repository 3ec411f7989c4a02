"""Independent brute-force reference implementations.

Everything here is written with plain Python loops over raw arrays and
deliberately shares no code with the package, so tests can compare the
optimized implementations against these on small inputs.
"""

import numpy as np


def brute_force_argmax(query, emb_data):
    """(coord, similarity) by scanning every voxel in z-major order."""
    C, D, H, W = emb_data.shape
    best = None
    best_sim = -np.inf
    for z in range(D):
        for y in range(H):
            for x in range(W):
                sim = 0.0
                for c in range(C):
                    sim += float(query[c]) * float(emb_data[c, z, y, x])
                if sim > best_sim:
                    best_sim = sim
                    best = (z, y, x)
    return best, best_sim


def ncc_similarity(f, m, mask, radius, eps=1e-5):
    """Mean of squared windowed correlation over mask voxels."""
    D, H, W = f.shape
    total = 0.0
    count = 0
    for z in range(D):
        for y in range(H):
            for x in range(W):
                if not mask[z, y, x]:
                    continue
                fv, mv = [], []
                for dz in range(-radius, radius + 1):
                    for dy in range(-radius, radius + 1):
                        for dx in range(-radius, radius + 1):
                            zz, yy, xx = z + dz, y + dy, x + dx
                            if 0 <= zz < D and 0 <= yy < H and 0 <= xx < W:
                                fv.append(float(f[zz, yy, xx]))
                                mv.append(float(m[zz, yy, xx]))
                fv = np.array(fv)
                mv = np.array(mv)
                fc = fv - fv.mean()
                mc = mv - mv.mean()
                num = float((fc * mc).sum())
                den = float(np.sqrt((fc**2).sum() * (mc**2).sum() + eps))
                cc = num / den
                total += cc * cc
                count += 1
    return total / count


def embedding_loss(sf, sm, mask):
    """1 - mean cosine over mask voxels (inputs assumed unit vectors)."""
    C, D, H, W = sf.shape
    total = 0.0
    count = 0
    for z in range(D):
        for y in range(H):
            for x in range(W):
                if not mask[z, y, x]:
                    continue
                dot = 0.0
                for c in range(C):
                    dot += float(sf[c, z, y, x]) * float(sm[c, z, y, x])
                total += dot
                count += 1
    return 1.0 - total / count


def smoothness(tau, mask):
    """Mean over mask of squared forward differences, border repeating."""
    _, D, H, W = tau.shape
    total = 0.0
    count = 0

    def diff(c, z, y, x, axis):
        idx = [z, y, x]
        n = (D, H, W)[axis]
        if idx[axis] == n - 1:
            if n < 2:
                return 0.0
            lo = list(idx)
            lo[axis] -= 1
            return float(tau[c, idx[0], idx[1], idx[2]]) - float(tau[c, lo[0], lo[1], lo[2]])
        hi = list(idx)
        hi[axis] += 1
        return float(tau[c, hi[0], hi[1], hi[2]]) - float(tau[c, idx[0], idx[1], idx[2]])

    for z in range(D):
        for y in range(H):
            for x in range(W):
                if not mask[z, y, x]:
                    continue
                for c in range(3):
                    for axis in range(3):
                        g = diff(c, z, y, x, axis)
                        total += g * g
                count += 1
    return total / count


def correlation_feature(sf, sm, radius=2):
    """(27, D, H, W) inner products over offsets {-r, 0, r}^3, clamped."""
    C, D, H, W = sf.shape
    steps = (-radius, 0, radius)
    out = np.zeros((27, D, H, W))
    ch = 0
    for dz in steps:
        for dy in steps:
            for dx in steps:
                for z in range(D):
                    zz = min(max(z + dz, 0), D - 1)
                    for y in range(H):
                        yy = min(max(y + dy, 0), H - 1)
                        for x in range(W):
                            xx = min(max(x + dx, 0), W - 1)
                            dot = 0.0
                            for c in range(C):
                                dot += float(sf[c, z, y, x]) * float(sm[c, zz, yy, xx])
                            out[ch, z, y, x] = dot
                ch += 1
    return out


def surface_voxels(mask):
    D, H, W = mask.shape
    out = np.zeros_like(mask)
    for z in range(D):
        for y in range(H):
            for x in range(W):
                if not mask[z, y, x]:
                    continue
                for dz, dy, dx in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                   (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    zz, yy, xx = z + dz, y + dy, x + dx
                    if not (0 <= zz < D and 0 <= yy < H and 0 <= xx < W) or not mask[zz, yy, xx]:
                        out[z, y, x] = True
                        break
    return out


def average_surface_distance(mask_a, mask_b, spacing):
    """Pooled symmetric mean of nearest-surface distances, O(n^2)."""
    sa = np.argwhere(surface_voxels(mask_a)).astype(float) * np.asarray(spacing)
    sb = np.argwhere(surface_voxels(mask_b)).astype(float) * np.asarray(spacing)
    total = 0.0
    for p in sa:
        total += min(np.sqrt(((p - q) ** 2).sum()) for q in sb)
    for q in sb:
        total += min(np.sqrt(((q - p) ** 2).sum()) for p in sa)
    return total / (len(sa) + len(sb))


def jacobian_determinants(tau, mask):
    """det(I + grad tau) at mask voxels; np.gradient-style differences."""
    _, D, H, W = tau.shape
    dets = []

    def grad(c, axis, z, y, x):
        idx = [z, y, x]
        n = (D, H, W)[axis]
        i = idx[axis]
        if n == 1:
            return 0.0
        if i == 0:
            hi = list(idx)
            hi[axis] = 1
            return float(tau[c, hi[0], hi[1], hi[2]]) - float(tau[c, z, y, x])
        if i == n - 1:
            lo = list(idx)
            lo[axis] = n - 2
            return float(tau[c, z, y, x]) - float(tau[c, lo[0], lo[1], lo[2]])
        hi = list(idx)
        hi[axis] = i + 1
        lo = list(idx)
        lo[axis] = i - 1
        return 0.5 * (float(tau[c, hi[0], hi[1], hi[2]]) - float(tau[c, lo[0], lo[1], lo[2]]))

    for z in range(D):
        for y in range(H):
            for x in range(W):
                if not mask[z, y, x]:
                    continue
                J = np.eye(3)
                for c in range(3):
                    for axis in range(3):
                        J[c, axis] += grad(c, axis, z, y, x)
                dets.append(np.linalg.det(J))
    return np.array(dets)
