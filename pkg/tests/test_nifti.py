import struct

import numpy as np
import pytest

from morphosim.deformation import DisplacementField3
from morphosim.errors import FormatError
from morphosim.nifti import (HEADER_SIZE, VOX_OFFSET, _header_bytes, read_field, read_mask, read_nifti,
                             write_field, write_mask, write_nifti)
from morphosim.volume import Grid3, Mask3, Volume3


def _raw_file(path, shape, datatype, payload, spacing=(1.0, 1.0, 1.0), magic=b"n+1\x00"):
    hdr = bytearray(_header_bytes(shape, spacing, datatype))
    hdr[344:348] = magic
    path.write_bytes(bytes(hdr) + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + payload)


def test_roundtrip_constant(tmp_path):
    v = Volume3(Grid3((4, 4, 4), (1.5, 2.0, 2.5)), np.full((4, 4, 4), 7.0))
    write_nifti(v, tmp_path / "v.nii")
    back = read_nifti(tmp_path / "v.nii")
    assert back.grid == v.grid
    np.testing.assert_array_equal(back.data, v.data)


def test_header_layout(tmp_path):
    v = Volume3(Grid3((3, 4, 5), (1.0, 2.0, 3.0)), np.arange(60.0))
    write_nifti(v, tmp_path / "v.nii")
    raw = (tmp_path / "v.nii").read_bytes()
    assert struct.unpack_from("<i", raw, 0)[0] == 348
    assert raw[344:348] == b"n+1\x00"
    assert struct.unpack_from("<8h", raw, 40)[:4] == (3, 3, 4, 5)
    assert struct.unpack_from("<h", raw, 70)[0] == 16
    assert struct.unpack_from("<4f", raw, 76)[1:] == (1.0, 2.0, 3.0)
    assert len(raw) == 352 + 60 * 4
    # x-fastest payload
    assert np.frombuffer(raw, "<f4", offset=352)[1] == v.data[1, 0, 0]


def test_rewrite_is_bit_identical(tmp_path, rng):
    v = Volume3.from_array(rng.normal(size=(5, 6, 7)))
    write_nifti(v, tmp_path / "a.nii")
    write_nifti(read_nifti(tmp_path / "a.nii"), tmp_path / "b.nii")
    assert (tmp_path / "a.nii").read_bytes() == (tmp_path / "b.nii").read_bytes()


def test_bad_magic(tmp_path):
    _raw_file(tmp_path / "x.nii", (2, 2, 2), 16, np.zeros(8, "<f4").tobytes(), magic=b"ni1\x00")
    with pytest.raises(FormatError, match="magic"):
        read_nifti(tmp_path / "x.nii")


def test_unsupported_datatype(tmp_path):
    hdr = bytearray(_header_bytes((2, 2, 2), (1, 1, 1), 16))
    struct.pack_into("<h", hdr, 70, 64)  # float64
    (tmp_path / "x.nii").write_bytes(bytes(hdr) + b"\x00" * 4 + b"\x00" * 64)
    with pytest.raises(FormatError, match="datatype"):
        read_nifti(tmp_path / "x.nii")


def test_truncated_payload(tmp_path):
    # 64^3 float32 needs 64**3 * 4 bytes after the offset
    need = 64 ** 3 * 4
    _raw_file(tmp_path / "short.nii", (64, 64, 64), 16, b"\x00" * (need - 1))
    with pytest.raises(FormatError, match="truncated"):
        read_nifti(tmp_path / "short.nii")
    _raw_file(tmp_path / "ok.nii", (64, 64, 64), 16, b"\x00" * need)
    assert read_nifti(tmp_path / "ok.nii").grid.dims == (64, 64, 64)


def test_short_header(tmp_path):
    (tmp_path / "x.nii").write_bytes(b"\x00" * 100)
    with pytest.raises(FormatError, match="sizeof_hdr"):
        read_nifti(tmp_path / "x.nii")


def test_missing_file(tmp_path):
    with pytest.raises(FormatError):
        read_nifti(tmp_path / "nope.nii")


@pytest.mark.parametrize("datatype,dtype", [(2, "<u1"), (4, "<i2")])
def test_integer_inputs(tmp_path, datatype, dtype):
    data = np.arange(24).reshape((2, 3, 4), order="F").astype(dtype)
    _raw_file(tmp_path / "i.nii", (2, 3, 4), datatype, data.tobytes(order="F"), spacing=(2, 2, 2))
    v = read_nifti(tmp_path / "i.nii")
    assert v.data.dtype == np.float64
    np.testing.assert_array_equal(v.data, data)
    assert v.grid.spacing == (2.0, 2.0, 2.0)


def test_geometry_bytes_survive_roundtrip(tmp_path):
    hdr = bytearray(_header_bytes((2, 2, 2), (1, 1, 1), 16))
    struct.pack_into("<hh", hdr, 252, 1, 2)
    struct.pack_into("<4f", hdr, 280, 1.0, 0.0, 0.0, -90.0)
    (tmp_path / "g.nii").write_bytes(bytes(hdr) + b"\x00" * 4 + np.zeros(8, "<f4").tobytes())
    v = read_nifti(tmp_path / "g.nii")
    write_nifti(v, tmp_path / "g2.nii")
    raw = (tmp_path / "g2.nii").read_bytes()
    assert raw[252:328] == bytes(hdr[252:328])


def test_mask_roundtrip(tmp_path, rng):
    m = Mask3(Grid3((4, 5, 6)), rng.random((4, 5, 6)) < 0.5)
    write_mask(m, tmp_path / "m.nii")
    raw = (tmp_path / "m.nii").read_bytes()
    assert struct.unpack_from("<h", raw, 70)[0] == 2
    assert set(raw[352:]) <= {0, 1}
    np.testing.assert_array_equal(read_mask(tmp_path / "m.nii").data, m.data)


def test_field_roundtrip(tmp_path, rng):
    data = rng.normal(size=(4, 5, 6, 3)).astype(np.float32).astype(np.float64)
    f = DisplacementField3(Grid3((4, 5, 6)), data)
    write_field(f, tmp_path / "f.nii")
    raw = (tmp_path / "f.nii").read_bytes()
    assert struct.unpack_from("<8h", raw, 40)[:6] == (5, 4, 5, 6, 1, 3)
    # vector component is the slowest axis on disk
    payload = np.frombuffer(raw, "<f4", offset=352)
    assert payload[1] == np.float32(data[1, 0, 0, 0])
    assert payload[4 * 5 * 6] == np.float32(data[0, 0, 0, 1])
    back = read_field(tmp_path / "f.nii")
    np.testing.assert_array_equal(back.data, data)


def test_field_reader_rejects_scalar_volume(tmp_path):
    write_nifti(Volume3.from_array(np.zeros((3, 3, 3))), tmp_path / "s.nii")
    with pytest.raises(FormatError, match="dim"):
        read_field(tmp_path / "s.nii")
