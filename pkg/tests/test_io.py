import numpy as np
import pytest

from embreg import (
    DisplacementField,
    Volume,
    VolumeIOError,
    load_field,
    load_labels,
    load_volume,
    save_field,
    save_labels,
    save_volume,
)
from embreg.embedding import EmbeddingVolume, load_embedding, save_embedding
from embreg.io import load_evol, save_evol


def _write_mhd(tmp_path, name, header_lines, raw_bytes):
    mhd = tmp_path / f"{name}.mhd"
    raw = tmp_path / f"{name}.raw"
    mhd.write_text("\n".join(header_lines) + "\n")
    raw.write_bytes(raw_bytes)
    return mhd


def _header(dim_xyz, etype, raw_name, spacing=(2, 2, 2), msb=False):
    return [
        "ObjectType = Image",
        "NDims = 3",
        f"BinaryDataByteOrderMSB = {msb}",
        f"DimSize = {dim_xyz[0]} {dim_xyz[1]} {dim_xyz[2]}",
        f"ElementSpacing = {spacing[0]} {spacing[1]} {spacing[2]}",
        "Offset = 0 0 0",
        f"ElementType = {etype}",
        f"ElementDataFile = {raw_name}",
    ]


def test_load_mhd_short_zeros(tmp_path):
    raw = np.zeros(64, dtype="<i2").tobytes()
    mhd = _write_mhd(tmp_path, "vol", _header((4, 4, 4), "MET_SHORT", "vol.raw"), raw)
    v = load_volume(str(mhd))
    assert v.dims == (4, 4, 4)
    assert v.spacing == (2.0, 2.0, 2.0)
    assert np.all(v.data == 0)


def test_load_mhd_size_mismatch(tmp_path):
    raw = np.zeros(63, dtype="<i2").tobytes()
    mhd = _write_mhd(tmp_path, "bad", _header((4, 4, 4), "MET_SHORT", "bad.raw"), raw)
    with pytest.raises(VolumeIOError, match="size mismatch"):
        load_volume(str(mhd))


def test_load_mhd_unsupported_type(tmp_path):
    raw = np.zeros(8, dtype="<f8").tobytes()
    mhd = _write_mhd(tmp_path, "dbl", _header((2, 2, 2), "MET_DOUBLE", "dbl.raw"), raw)
    with pytest.raises(VolumeIOError, match="ElementType"):
        load_volume(str(mhd))


def test_load_mhd_missing_file(tmp_path):
    with pytest.raises(VolumeIOError, match="not found"):
        load_volume(str(tmp_path / "nope.mhd"))


def test_load_mhd_big_endian(tmp_path):
    values = np.arange(8, dtype=">i2")
    mhd = _write_mhd(
        tmp_path, "be", _header((2, 2, 2), "MET_SHORT", "be.raw", msb=True), values.tobytes()
    )
    v = load_volume(str(mhd))
    np.testing.assert_array_equal(v.data.ravel(), np.arange(8, dtype=np.float32))


def test_mhd_axis_order(tmp_path):
    # DimSize is x y z; internal dims are (z, y, x)
    data = np.arange(2 * 3 * 4, dtype="<f4")  # z=2, y=3, x=4
    mhd = _write_mhd(
        tmp_path, "ax",
        _header((4, 3, 2), "MET_FLOAT", "ax.raw", spacing=(1.5, 2.5, 3.5)),
        data.tobytes(),
    )
    v = load_volume(str(mhd))
    assert v.dims == (2, 3, 4)
    assert v.spacing == (3.5, 2.5, 1.5)
    assert v.data[0, 0, 1] == 1.0  # x is the fastest axis
    assert v.data[1, 0, 0] == 12.0


def test_mhd_round_trip_bitwise(tmp_path, rng):
    v = Volume(rng.uniform(-1, 1, (3, 3, 3)).astype(np.float32),
               spacing=(2, 2, 2), origin=(1, -2, 3))
    path = tmp_path / "rt.mhd"
    save_volume(v, str(path))
    again = load_volume(str(path))
    assert again.dims == v.dims
    assert again.spacing == v.spacing
    assert again.origin == v.origin
    assert again.data.tobytes() == v.data.tobytes()
    # writing the same volume twice produces identical raw payload bytes
    save_volume(again, str(tmp_path / "rt2.mhd"))
    assert (tmp_path / "rt.raw").read_bytes() == (tmp_path / "rt2.raw").read_bytes()


def test_evol_round_trip_bitwise(tmp_path, rng):
    v = Volume(rng.normal(size=(4, 5, 6)).astype(np.float32), spacing=(2, 2, 2))
    path = tmp_path / "v.evol"
    save_volume(v, str(path))
    again = load_volume(str(path))
    assert again.data.tobytes() == v.data.tobytes()
    assert again.spacing == v.spacing


def test_field_round_trip_constant(tmp_path):
    field = DisplacementField(np.tile(
        np.array([1.0, 2.0, 3.0], dtype=np.float32).reshape(3, 1, 1, 1), (1, 4, 4, 4)
    ))
    path = tmp_path / "f.evol"
    save_field(field, str(path))
    again = load_field(str(path))
    assert again.data.tobytes() == field.data.tobytes()


def test_field_wrong_channels(tmp_path):
    save_evol(str(tmp_path / "c2.evol"), np.zeros((2, 2, 2, 2), dtype=np.float32))
    with pytest.raises(VolumeIOError, match="C=3"):
        load_field(str(tmp_path / "c2.evol"))


def test_embedding_round_trip(tmp_path, rng):
    emb = EmbeddingVolume(rng.normal(size=(16, 3, 3, 3)).astype(np.float32))
    path = tmp_path / "e.evol"
    save_embedding(emb, str(path))
    again = load_embedding(str(path))
    assert again.channels == 16
    assert again.data.tobytes() == emb.data.tobytes()


def test_evol_rejects_truncation(tmp_path):
    path = tmp_path / "t.evol"
    save_evol(str(path), np.zeros((1, 2, 2, 2), dtype=np.float32))
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(VolumeIOError, match="size mismatch"):
        load_evol(str(path))


def test_evol_rejects_bad_magic(tmp_path):
    path = tmp_path / "m.evol"
    path.write_bytes(b"NOPE" + b"\x00" * 60)
    with pytest.raises(VolumeIOError, match="not an evol"):
        load_evol(str(path))


def test_save_to_unwritable_path(tmp_path):
    v = Volume(np.zeros((2, 2, 2)))
    with pytest.raises((VolumeIOError, OSError)):
        save_volume(v, str(tmp_path / "missing_dir" / "x.evol"))


def test_labels_round_trip_mhd_and_evol(tmp_path, rng):
    labels = rng.integers(0, 5, size=(4, 4, 4)).astype(np.int32)
    for name in ("l.mhd", "l.evol"):
        path = tmp_path / name
        save_labels(labels, str(path))
        again = load_labels(str(path))
        np.testing.assert_array_equal(again, labels)


def test_labels_mhd_short_when_needed(tmp_path):
    labels = np.full((2, 2, 2), 300, dtype=np.int32)
    path = tmp_path / "big.mhd"
    save_labels(labels, str(path))
    header = path.read_text()
    assert "MET_SHORT" in header
    np.testing.assert_array_equal(load_labels(str(path)), labels)
