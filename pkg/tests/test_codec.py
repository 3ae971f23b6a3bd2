import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motionpref import codec, tensorio


@pytest.fixture(scope="module")
def basis16():
    return codec.make_codec(16, 3, 7)


def test_make_codec_orthonormal(basis16):
    p = basis16.projection
    assert p.shape == (16, 768)
    np.testing.assert_allclose(p @ p.T, np.eye(16), atol=1e-6)


def test_make_codec_deterministic():
    a = codec.make_codec(16, 3, 7).projection
    b = codec.make_codec(16, 3, 7).projection
    assert a.tobytes() == b.tobytes()
    assert codec.make_codec(16, 3, 8).projection.tobytes() != a.tobytes()


def test_make_codec_too_large():
    with pytest.raises(codec.DimensionTooLarge):
        codec.make_codec(769, 3, 0)
    with pytest.raises(codec.DimensionTooLarge):
        codec.make_codec(257, 1, 0)


def test_full_rank_lossless():
    basis = codec.make_codec(768, 3, 0)
    rng = np.random.default_rng(0)
    v = rng.uniform(-1, 1, (8, 16, 16, 3))
    np.testing.assert_allclose(codec.decode(codec.encode(v, basis), basis, clamp=False), v, atol=1e-5)


def test_encode_shape_and_zero(basis16):
    assert codec.encode(np.zeros((8, 16, 16, 3)), basis16).shape == (2, 2, 2, 16)
    assert not np.any(codec.encode(np.zeros((8, 16, 16, 3)), basis16))


def test_decode_shape_and_zero(basis16):
    v = codec.decode(np.zeros((2, 2, 2, 16)), basis16)
    assert v.shape == (8, 16, 16, 3)
    assert not np.any(v)


def test_latent_round_trip(basis16):
    z = np.random.default_rng(1).standard_normal((2, 3, 2, 16))
    np.testing.assert_allclose(codec.encode(codec.decode(z, basis16, clamp=False), basis16), z, atol=1e-5)


def test_block_order_frame_major(basis16):
    # a single nonzero pixel lands in the block coordinate implied by the fixed order
    v = np.zeros((4, 8, 8, 3))
    v[2, 5, 1, 1] = 1.0
    flat = codec.to_blocks(v)[0, 0, 0]
    assert np.argmax(flat) == ((2 * 8 + 5) * 8 + 1) * 3 + 1


def test_encode_rejects_bad_shape(basis16):
    with pytest.raises(codec.ShapeMismatch):
        codec.encode(np.zeros((7, 16, 16, 3)), basis16)
    with pytest.raises(codec.ShapeMismatch):
        codec.encode(np.zeros((8, 16, 16, 1)), basis16)
    with pytest.raises(codec.ShapeMismatch):
        codec.decode(np.zeros((2, 2, 2, 15)), basis16)


def test_encode_with_padding(basis16):
    assert codec.encode(np.zeros((7, 15, 16, 3)), basis16, pad=True).shape == (2, 2, 2, 16)


def test_decode_clamps(basis16):
    z = 1e3 * np.random.default_rng(0).standard_normal((1, 1, 1, 16))
    v = codec.decode(z, basis16)
    assert v.min() >= -1.0 and v.max() <= 1.0


def test_pad_repeats_last_frame():
    v = np.random.default_rng(0).uniform(-1, 1, (7, 16, 16, 3))
    padded, orig = codec.pad_to_contract(v)
    assert padded.shape == (8, 16, 16, 3) and orig == (7, 16, 16, 3)
    np.testing.assert_array_equal(padded[7], v[6])
    np.testing.assert_array_equal(padded[:7], v)


def test_pad_identity_when_conforming():
    v = np.zeros((8, 16, 16, 3))
    padded, orig = codec.pad_to_contract(v)
    assert padded is v and orig == v.shape


def test_pad_spatial_reflect():
    v = np.random.default_rng(0).uniform(-1, 1, (5, 15, 16, 3))
    padded, _ = codec.pad_to_contract(v)
    assert padded.shape == (8, 16, 16, 3)
    np.testing.assert_array_equal(padded[:5, 15], v[:, 13])


@settings(max_examples=40, deadline=None)
@given(
    tl=st.integers(1, 3), hl=st.integers(1, 3), wl=st.integers(1, 3),
    c=st.integers(1, 3), d=st.integers(1, 32), seed=st.integers(0, 2**16),
)
def test_shape_contract_and_energy(tl, hl, wl, c, d, seed):
    basis = codec.make_codec(d, c, seed)
    v = np.random.default_rng(seed).uniform(-1, 1, (4 * tl, 8 * hl, 8 * wl, c))
    z = codec.encode(v, basis)
    assert z.shape == (tl, hl, wl, d)
    assert np.linalg.norm(z) <= np.linalg.norm(v) + 1e-9
    assert codec.encode(v, basis).tobytes() == z.tobytes()


def test_tensor_file_round_trip(tmp_path):
    a = np.random.default_rng(0).standard_normal((3, 4, 5)).astype(np.float32)
    tensorio.save(tmp_path / "a.ten", a)
    blob = (tmp_path / "a.ten").read_bytes()
    header, payload = blob.split(b"\n", 1)
    assert b'"dtype": "f32"' in header and b'"byte_order": "little"' in header
    assert payload == a.astype("<f4").tobytes()
    np.testing.assert_array_equal(tensorio.load(tmp_path / "a.ten"), a)


def test_tensor_file_rejects_truncated():
    blob = tensorio.dumps(np.zeros(4))
    with pytest.raises(tensorio.TensorFormatError):
        tensorio.loads(blob[:-1])
    with pytest.raises(tensorio.TensorFormatError):
        tensorio.loads(b"no header")
