import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from dqlc import bounds, codec, uncoded

finite = st.floats(-50, 50, allow_nan=False)
deltas = st.floats(0.01, 5.0)
styles = st.sampled_from([codec.MIDRISE, codec.MIDTHREAD])


def _levels(style, k):
    return 2 * k if style == codec.MIDRISE else 2 * k + 1


@given(finite, deltas, st.integers(1, 20), styles)
def test_quantizer_odd_symmetry(x, delta, k, style):
    assume(x != 0.0)
    nq = _levels(style, k)
    assert codec.quantize(-x, delta, nq, style) == -codec.quantize(x, delta, nq, style)


@given(finite, deltas, st.one_of(st.none(), st.integers(1, 20)), styles)
def test_quantizer_idempotent_and_in_range(x, delta, k, style):
    nq = None if k is None else _levels(style, k)
    q = codec.quantize(x, delta, nq, style)
    assert codec.quantize(q, delta, nq, style) == q
    if nq is not None:
        assert abs(q) <= codec.clip_level(delta, nq, style) + 1e-12
        assert np.min(np.abs(codec.centroids(delta, nq, style) - q)) < 1e-9 * delta
    if nq is None or abs(q) < codec.clip_level(delta, nq, style) - 1e-9:
        assert abs(x - q) <= delta / 2 + 1e-9


@settings(deadline=None)
@given(st.integers(2, 8), st.floats(0.0, 0.99), st.floats(-10, 50))
def test_uncoded_never_beats_bound(M, rho, snr_db):
    snr = bounds.from_db(snr_db)
    assert uncoded.distortion_uncoded(M, snr, rho) >= bounds.distortion_lower_bound(M, snr, rho).D_lb * (1 - 1e-12)
