import numpy as np
import pytest

from embreg import EmbeddingVolume, Volume, normalize_embedding, synth_descriptors
from embreg.embedding import _SYNTH_BASE_CHANNELS, is_unit_normalized

import phantoms


def test_normalize_known_vector():
    data = np.zeros((4, 1, 1, 1), dtype=np.float32)
    data[0] = 3.0
    data[1] = 4.0
    out = normalize_embedding(EmbeddingVolume(data))
    np.testing.assert_allclose(out.data[:, 0, 0, 0], [0.6, 0.8, 0.0, 0.0], atol=1e-6)
    assert out.normalized


def test_normalize_idempotent(rng):
    unit = phantoms.random_unit_vectors(rng, (8, 2, 2, 2))
    once = normalize_embedding(EmbeddingVolume(unit))
    np.testing.assert_allclose(once.data, unit, atol=1e-6)


def test_normalize_random_norms(rng):
    raw = rng.normal(size=(8, 2, 2, 2)).astype(np.float32)
    out = normalize_embedding(EmbeddingVolume(raw))
    norms = np.sqrt((out.data.astype(np.float64) ** 2).sum(axis=0))
    np.testing.assert_allclose(norms, 1.0, atol=1e-5)
    assert is_unit_normalized(out)


def test_normalize_zero_vector_flagged():
    data = np.zeros((4, 1, 1, 2), dtype=np.float32)
    data[1, 0, 0, 1] = 2.0
    out = normalize_embedding(EmbeddingVolume(data))
    assert out.zero_count == 1
    np.testing.assert_allclose(out.data[:, 0, 0, 0], [1.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(out.data[:, 0, 0, 1], [0.0, 1.0, 0.0, 0.0])


def test_synth_deterministic(rng):
    v = Volume(rng.uniform(-1, 1, (8, 8, 8)).astype(np.float32))
    a = synth_descriptors(v, 16)
    b = synth_descriptors(v, 16)
    assert a.data.tobytes() == b.data.tobytes()


def test_synth_rejects_small_channel_count():
    v = Volume(np.zeros((4, 4, 4)))
    with pytest.raises(ValueError):
        synth_descriptors(v, 7)


def test_synth_channel_counts():
    v = Volume(np.zeros((4, 4, 4)))
    for c in (8, _SYNTH_BASE_CHANNELS, 24):
        emb = synth_descriptors(v, c)
        assert emb.channels == c
        assert emb.dims == v.dims
        assert emb.normalized


def test_synth_constant_volume_shift_invariant():
    # Local stats of a constant volume are shift invariant. After the final
    # unit normalization (whose norm varies through the coordinate channels)
    # that surfaces as: variance and gradient channels are identically zero,
    # and the three mean channels stay equal to each other at every voxel.
    v = Volume(np.full((6, 6, 6), 0.25, dtype=np.float32))
    emb = synth_descriptors(v, 16)
    for c in (1, 3, 5):  # variance channels
        assert np.allclose(emb.data[c], 0.0, atol=1e-7)
    for c in range(6, 12):  # gradient channels
        assert np.allclose(emb.data[c], 0.0, atol=1e-7)
    np.testing.assert_allclose(emb.data[0], emb.data[2], atol=1e-6)
    np.testing.assert_allclose(emb.data[0], emb.data[4], atol=1e-6)


def test_synth_distinguishes_blobs():
    data = np.full((16, 16, 16), -1.0, dtype=np.float32)
    zz, yy, xx = np.meshgrid(*(np.arange(16),) * 3, indexing="ij")
    blob_a = (zz - 4) ** 2 + (yy - 4) ** 2 + (xx - 4) ** 2
    blob_b = (zz - 11) ** 2 + (yy - 11) ** 2 + (xx - 11) ** 2
    data += 1.5 * np.exp(-blob_a / 6.0)  # small bright blob
    data += 0.6 * np.exp(-blob_b / 24.0)  # wide dim blob
    v = Volume(np.clip(data, -1, 1))
    emb = synth_descriptors(v, 16)
    va = emb.vector_at(4, 4, 4).astype(np.float64)
    vb = emb.vector_at(11, 11, 11).astype(np.float64)
    assert float(va @ va) == pytest.approx(1.0, abs=1e-5)
    assert float(vb @ vb) == pytest.approx(1.0, abs=1e-5)
    assert float(va @ vb) < 0.9
