import math

import numpy as np
import pytest

from ovfl.errors import ConfigError
from ovfl.quantize import (QuantizerSpec, bits_cost, hex_codebook, hex_layout, hex_nearest, quantize,
                           quantize_hex, quantize_identity, quantize_uniform, uniform_cell_width)


def brute_nearest(points, b):
    """Reference: exhaustive search over the codebook, first index wins ties."""
    book = hex_codebook(b)
    d2 = ((points[:, None, :] - book[None, :, :]) ** 2).sum(axis=-1)
    return book[np.argmin(d2, axis=1)]


# -- uniform scalar ---------------------------------------------------------

def test_uniform_b32_is_passthrough():
    x = np.random.default_rng(0).normal(size=(20, 16))
    q = quantize_uniform(x, 32)
    assert np.array_equal(q.reconstructed, x)
    assert q.bits == quantize_identity(x).bits == x.size * 32


def test_uniform_one_bit_cell_centres():
    x = np.array([0.0, 0.3, 0.49, 0.5, 0.8, 1.0])
    q = quantize_uniform(x, 1)
    np.testing.assert_array_equal(q.reconstructed, [0.25, 0.25, 0.25, 0.75, 0.75, 0.75])


def test_uniform_bits_examples():
    x = np.random.default_rng(1).normal(size=(20, 16))
    q4, q2 = quantize_uniform(x, 4), quantize_uniform(x, 2)
    assert bits_cost(q4) == 20 * 16 * 4 + 64 == 1344
    assert q2.payload_bits * 2 == q4.payload_bits
    ident = quantize(x, QuantizerSpec("identity"))
    assert ident.side_info_bits == 0 and ident.payload_bits == 320 * 32


def test_uniform_constant_tensor():
    x = np.full((3, 4), 2.5)
    q = quantize_uniform(x, 3)
    np.testing.assert_array_equal(q.reconstructed, x)
    assert q.payload_bits == 12 * 3


def test_uniform_range_and_error_bound_many_tensors():
    rng = np.random.default_rng(2)
    for _ in range(10_000):
        b = int(rng.integers(1, 17))
        x = rng.normal(loc=rng.normal(), scale=rng.uniform(0.01, 10), size=int(rng.integers(1, 40)))
        r = quantize_uniform(x, b).reconstructed
        half = uniform_cell_width(x, b) / 2
        ulps = 4 * np.finfo(float).eps * np.max(np.abs(x))  # float rounding of lo + (i + 1/2) w
        assert np.max(np.abs(x - r)) <= half + ulps
        assert r.min() >= x.min() and r.max() <= x.max()


def test_uniform_distortion_monotone_in_bits():
    rng = np.random.default_rng(3)
    mse = np.zeros(12)
    for _ in range(100):
        x = rng.normal(size=200)
        mse += [np.mean((quantize_uniform(x, b).reconstructed - x) ** 2) for b in range(1, 13)]
    assert np.all(np.diff(mse) <= 0)


# -- hexagonal lattice --------------------------------------------------------

def test_hex_codebook_size_and_order():
    for b in range(1, 5):
        book = hex_codebook(b)
        assert book.shape == (4 ** b, 2)
        assert len({tuple(np.round(p, 12)) for p in book}) == 4 ** b
        norms = np.hypot(book[:, 0], book[:, 1])
        assert np.all(np.diff(norms) >= -1e-12)
        assert np.all(book[0] == 0)
        assert norms.max() <= hex_layout(b).radius + 1e-12


def test_hex_layout_large_b_is_consistent():
    # exact shell counting gives the size without enumeration
    assert hex_layout(16).size == 2 ** 32
    assert hex_layout(3).size == 64


@pytest.mark.parametrize("b", [1, 2, 3, 4, 5])
def test_hex_nearest_matches_brute_force(b):
    rng = np.random.default_rng(b)
    r = hex_layout(b).radius
    ang = rng.uniform(0, 2 * np.pi, 1000)
    rad = r * np.sqrt(rng.uniform(0, 1, 1000))
    pts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    np.testing.assert_array_equal(hex_nearest(pts, b), brute_nearest(pts, b))


def test_hex_tie_breaking_is_deterministic_lowest_index():
    book = hex_codebook(2)
    # midpoints between the origin and each first-shell neighbour are equidistant
    mids = book[1:7] / 2.0
    chosen = hex_nearest(mids, 2)
    np.testing.assert_array_equal(chosen, np.zeros_like(mids))
    # midpoint between two first-shell neighbours (and the origin is farther)
    p = (book[1] + book[2]) / 2.0
    cands = [book[0], book[1], book[2]]
    d = [np.sum((p - c) ** 2) for c in cands]
    expected = book[1] if d[1] <= d[0] else book[0]
    np.testing.assert_array_equal(hex_nearest(p[None], 2)[0], expected)
    np.testing.assert_array_equal(hex_nearest(mids, 2), hex_nearest(mids.copy(), 2))


def test_hex_codeword_inputs_reconstruct_exactly():
    book = hex_codebook(2)
    np.testing.assert_array_equal(hex_nearest(book, 2), book)
    x = np.zeros((4, 6))
    q = quantize_hex(x, 2)
    assert np.array_equal(q.reconstructed, x)


def test_hex_bits_and_padding():
    x = np.random.default_rng(0).normal(size=(20, 16))
    q = quantize_hex(x, 2)
    assert q.payload_bits == (x.size // 2) * 2 * 2
    assert q.side_info_bits == 32
    odd = np.random.default_rng(1).normal(size=7)
    qo = quantize_hex(odd, 3)
    assert qo.reconstructed.shape == (7,)
    assert qo.payload_bits == 7 * 3


def test_hex_distortion_non_increasing_in_bits():
    rng = np.random.default_rng(4)
    for _ in range(50):
        x = rng.normal(loc=rng.normal(), size=64)
        mse = [np.mean((quantize_hex(x, b).reconstructed - x) ** 2) for b in range(1, 9)]
        assert np.all(np.diff(mse) <= 1e-15), mse


def test_spec_validation():
    with pytest.raises(ConfigError) as e:
        QuantizerSpec("uniform_scalar", 0)
    assert e.value.field == "quantizer.bits_per_component"
    with pytest.raises(ConfigError):
        QuantizerSpec("hex_lattice", 17)
    with pytest.raises(ConfigError):
        QuantizerSpec("lloyd", 4)
    assert QuantizerSpec("uniform_scalar", 32).lossless
