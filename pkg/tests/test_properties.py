"""Randomised property checks (hypothesis)."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ovfl.analysis import regret_from_losses
from ovfl.nn_core import MlpParams, init_mlp
from ovfl.quantize import hex_codebook, hex_layout, hex_nearest, quantize_hex, quantize_uniform, uniform_cell_width

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, st.integers(1, 60), elements=finite), st.integers(1, 31))
def test_uniform_error_within_half_cell(x, b):
    r = quantize_uniform(x, b).reconstructed
    slack = 4 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(x))))
    assert np.max(np.abs(r - x)) <= uniform_cell_width(x, b) / 2 + slack
    assert r.min() >= x.min() and r.max() <= x.max()


@given(arrays(np.float64, st.integers(1, 41), elements=finite), st.integers(1, 12))
def test_hex_shape_bits_and_bounded(x, b):
    q = quantize_hex(x, b)
    assert q.reconstructed.shape == x.shape
    assert q.payload_bits == x.size * b
    pairs = np.concatenate([x, np.zeros(x.size % 2)]).reshape(-1, 2)
    rpairs = np.concatenate([q.reconstructed, np.zeros(x.size % 2)]).reshape(-1, 2)
    # reconstructed pairs stay within the scaled codebook disk
    assert np.all(np.hypot(*rpairs.T) <= np.max(np.hypot(*pairs.T)) * (1 + 1e-9) + 1e-300)


@settings(max_examples=50)
@given(st.integers(1, 4), arrays(np.float64, (20, 2), elements=st.floats(-1, 1)))
def test_hex_nearest_is_optimal(b, unit):
    pts = unit * hex_layout(b).radius / np.sqrt(2)
    book = hex_codebook(b)
    chosen = hex_nearest(pts, b)
    best = np.min(((pts[:, None] - book[None]) ** 2).sum(-1), axis=1)
    np.testing.assert_allclose(((pts - chosen) ** 2).sum(-1), best, rtol=0, atol=1e-12)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=30), st.floats(-50, 50))
def test_regret_shift_invariance(losses, c):
    a = np.array(losses)
    comp = a[::-1].copy()
    r1 = regret_from_losses(a, comp).cumulative_regret
    r2 = regret_from_losses(a + c, comp + c).cumulative_regret
    np.testing.assert_allclose(r1, r2, atol=1e-9)


@given(st.lists(st.integers(1, 6), min_size=2, max_size=4), st.integers(0, 2 ** 16))
def test_mlp_flatten_roundtrip(sizes, seed):
    p = init_mlp(sizes, seed)
    q = MlpParams.from_flat(sizes, p.flatten())
    assert np.array_equal(q.flatten(), p.flatten())
    assert q.size == sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
