import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bionerf import encoding, ndtensor as nd
from conftest import gradcheck


def test_zero_input_pattern_per_component():
    # raw 0, then sin/cos at both frequencies: [0, 0, 1, 0, 1]
    out = encoding.positional_encode(np.array([[0.0]]), freqs=2, include_input=True)
    np.testing.assert_allclose(out, [[0.0, 0.0, 1.0, 0.0, 1.0]], atol=1e-7)


def test_half_at_l1_without_input():
    out = encoding.positional_encode(np.array([[0.5]]), freqs=1, include_input=False)
    np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-7)


def test_width_for_three_components_l10():
    out = encoding.positional_encode(np.zeros((1, 3)), freqs=10, include_input=True)
    assert out.shape == (1, 63)
    assert encoding.encoded_width(3, 10, True) == 63


def test_config_widths_and_validation():
    cfg = encoding.EncodingConfig()
    assert cfg.pos_width == 63 and cfg.dir_width == 27
    with pytest.raises(ValueError):
        encoding.EncodingConfig(l_pos=0)


def test_rejects_non_finite():
    with pytest.raises(nd.NumericInputError):
        encoding.positional_encode(np.array([[np.nan]]), freqs=1)
    with pytest.raises(nd.NumericInputError):
        encoding.positional_encode(np.array([[np.inf, 0.0, 0.0]]), freqs=4)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-1, 1, width=32), min_size=3, max_size=3),
    st.integers(1, 10),
    st.booleans(),
)
def test_encoded_values_bounded(vals, freqs, include_input):
    out = encoding.positional_encode(np.array([vals]), freqs=freqs, include_input=include_input)
    assert (out >= -1.0).all() and (out <= 1.0).all()


def test_deterministic():
    p = np.random.default_rng(0).uniform(-1, 1, (32, 3))
    a = encoding.positional_encode(p, 10)
    b = encoding.positional_encode(p, 10)
    assert np.array_equal(a, b)


def test_injective_on_grid_nearest_neighbor_roundtrip():
    # 1e4 points in [-1,1); every encoding's nearest neighbor is itself
    grid = np.linspace(-1.0, 1.0, 10_000, endpoint=False).reshape(-1, 1)
    enc = encoding.positional_encode(grid, freqs=1, include_input=False).astype(np.float64)
    for start in range(0, enc.shape[0], 500):
        chunk = enc[start : start + 500]
        d2 = ((chunk[:, None, :] - enc[None, :, :]) ** 2).sum(-1)
        nearest = d2.argmin(axis=1)
        np.testing.assert_array_equal(nearest, np.arange(start, start + chunk.shape[0]))


def test_encoding_gradient_matches_fd():
    rng = np.random.default_rng(11)

    def build(p):
        enc = encoding.encode_tensor(p["pos"], freqs=3, include_input=True)
        return nd.mean(nd.hadamard(enc, enc))

    gradcheck(build, {"pos": rng.uniform(-1, 1, (2, 3))})


def test_graph_and_plain_encodings_agree():
    p = np.random.default_rng(5).uniform(-1, 1, (4, 3)).astype(np.float32)
    plain = encoding.positional_encode(p, freqs=4, include_input=True)
    graph = encoding.encode_tensor(nd.Tensor(p), freqs=4, include_input=True).values
    # the graph path multiplies angles in float32; |err| <~ 2^L*pi*eps32
    np.testing.assert_allclose(plain, graph, atol=4e-6)
