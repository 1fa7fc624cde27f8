import numpy as np
import pytest

from r2vd import hsio


def test_cube_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    cube = rng.standard_normal((5, 7, 3)).astype(np.float32)
    path = tmp_path / "cube.hsc"
    hsio.save_cube(cube, path)
    back = hsio.load_cube(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, cube)


def test_cube_payload_length_mismatch(tmp_path):
    path = tmp_path / "short.hsc"
    path.write_bytes(b"HSC1 4 4 3\n" + b"\x00" * 100)  # needs 4*4*3*4 = 192
    with pytest.raises(ValueError, match="payload"):
        hsio.load_cube(path)


def test_cube_bad_magic(tmp_path):
    path = tmp_path / "bad.hsc"
    path.write_bytes(b"XXXX 2 2 2\n" + b"\x00" * 32)
    with pytest.raises(ValueError, match="header"):
        hsio.load_cube(path)


def test_cube_rejects_non_finite_payload(tmp_path):
    cube = np.ones((2, 2, 2), dtype="<f4")
    payload = cube.transpose(2, 0, 1).tobytes()
    payload = np.frombuffer(payload, dtype="<f4").copy()
    payload[3] = np.nan
    path = tmp_path / "nan.hsc"
    path.write_bytes(b"HSC1 2 2 2\n" + payload.tobytes())
    with pytest.raises(ValueError, match="finite"):
        hsio.load_cube(path)


def test_save_cube_rejects_non_finite():
    cube = np.ones((2, 2, 2), dtype=np.float32)
    cube[0, 0, 0] = np.inf
    with pytest.raises(ValueError):
        hsio.save_cube(cube, "/dev/null")


def test_mask_round_trip_all_zero(tmp_path):
    mask = np.zeros((2, 2), dtype=np.uint8)
    path = tmp_path / "mask.pgm"
    hsio.save_mask(mask, path)
    assert np.array_equal(hsio.load_mask(path), mask)


def test_mask_values_threshold_to_binary(tmp_path):
    path = tmp_path / "mask.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 255, 0]))
    assert np.array_equal(hsio.load_mask(path), np.array([[0, 1], [1, 0]], dtype=np.uint8))


def test_mask_truncated_payload(tmp_path):
    path = tmp_path / "trunc.pgm"
    path.write_bytes(b"P5\n3 3\n255\n" + bytes([0, 255]))
    with pytest.raises(ValueError, match="payload"):
        hsio.load_mask(path)


def test_mask_round_trip_pattern(tmp_path):
    rng = np.random.default_rng(1)
    mask = (rng.random((9, 13)) > 0.7).astype(np.uint8)
    path = tmp_path / "m.pgm"
    hsio.save_mask(mask, path)
    assert np.array_equal(hsio.load_mask(path), mask)


def test_normalize_affine_map():
    cube = np.array([2.0, 4.0, 6.0]).reshape(1, 1, 3)
    out = hsio.normalize_cube(cube)
    assert np.allclose(out.ravel(), [0.0, 0.5, 1.0])


def test_normalize_constant_cube_is_zero():
    out = hsio.normalize_cube(np.full((3, 3, 4), 7.5, dtype=np.float32))
    assert np.all(out == 0.0)


def test_normalize_idempotent_on_unit_range():
    rng = np.random.default_rng(2)
    cube = rng.random((4, 4, 3)).astype(np.float32)
    cube.ravel()[0] = 0.0
    cube.ravel()[1] = 1.0
    out = hsio.normalize_cube(cube)
    assert np.max(np.abs(out - cube)) < 1e-6


def test_normalize_bounds():
    rng = np.random.default_rng(3)
    cube = (rng.standard_normal((6, 5, 4)) * 13 - 4).astype(np.float32)
    out = hsio.normalize_cube(cube)
    assert out.min() == 0.0 and out.max() == 1.0


def test_single_band_container_round_trip(tmp_path):
    field = np.random.default_rng(4).random((6, 6, 1)).astype(np.float32)
    path = tmp_path / "map.hsc"
    hsio.save_cube(field, path)
    assert np.array_equal(hsio.load_cube(path), field)
