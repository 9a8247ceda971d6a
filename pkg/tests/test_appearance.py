import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from abrupttrack.appearance import (
    LIKELIHOOD_FLOOR,
    N_BINS,
    AppearanceModel,
    EmptyHistogramError,
    TargetState,
    background_box,
    background_histogram,
    bhattacharyya,
    build_histogram,
    hsv_bin_image,
    likelihood,
    logistic_likelihood,
)
from abrupttrack.geometry import Box
from abrupttrack.imaging import Frame


def solid(h, w, color):
    return Frame(np.broadcast_to(np.asarray(color, float), (h, w, 3)).copy())


def test_single_color_histogram():
    hist = build_histogram(solid(6, 6, (0.2, 0.5, 0.7)), Box(1, 1, 4, 5))
    assert hist.shape == (N_BINS,)
    assert hist.max() == 1.0 and (hist > 0).sum() == 1


def test_red_green_halves():
    px = np.zeros((4, 4, 3))
    px[:, :2] = (1, 0, 0)
    px[:, 2:] = (0, 1, 0)
    hist = build_histogram(Frame(px), Box(0, 0, 4, 4))
    # red: h=0, s=1, v=1 -> (0, 9, 9); green: h=120 -> hue bin 3
    assert hist[99] == 0.5 and hist[399] == 0.5
    assert hist.sum() == 1.0


def test_one_pixel_box(rng):
    f = Frame(rng.random((5, 5, 3)))
    hist = build_histogram(f, Box(2, 3, 3, 4))
    assert hist[hsv_bin_image(f)[3, 2]] == 1.0


def test_box_outside_frame():
    with pytest.raises(EmptyHistogramError):
        build_histogram(solid(4, 4, (0.5, 0.5, 0.5)), Box(10, 10, 12, 12))


def test_bin_clipping():
    # s = 1 and v = 1 land in the last bin, never index 10
    bins = hsv_bin_image(solid(1, 1, (0.0, 0.0, 1.0)))
    assert bins[0, 0] == (6 * 10 + 9) * 10 + 9


def test_background_ring():
    px = np.zeros((20, 20, 3))
    px[8:12, 8:12] = (1, 0, 0)
    f = Frame(px)
    box = Box(8, 8, 12, 12)
    assert background_box(box, 20, 20) == Box(6, 6, 14, 14)
    hb = background_histogram(f, box)
    assert hb[99] == 0.0  # the red box is excluded
    # clipped at the border
    assert background_box(Box(0, 0, 4, 4), 20, 20) == Box(0, 0, 6, 6)


def test_bhattacharyya_examples():
    h1 = np.zeros(5)
    h1[:2] = 0.5
    h2 = np.zeros(5)
    h2[0] = 1.0
    assert bhattacharyya(h1, h2) == pytest.approx(0.5411961001461969, abs=1e-12)
    assert bhattacharyya(h2, h2) == 0.0
    h3 = np.zeros(5)
    h3[4] = 1.0
    assert bhattacharyya(h2, h3) == 1.0
    with pytest.raises(ValueError):
        bhattacharyya(np.array([0.5, 0.6]), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        bhattacharyya(np.array([1.5, -0.5]), np.array([1.0, 0.0]))


def dirichlet(seed, n=12):
    rng = np.random.default_rng(seed)
    h = rng.random(n) * (rng.random(n) < 0.7)
    h[rng.integers(n)] += 0.1
    return h / h.sum()


@given(st.integers(0, 2**31 - 1))
def test_bhattacharyya_metric(seed):
    a, b, c = dirichlet(seed), dirichlet(seed + 1), dirichlet(seed + 2)
    assert bhattacharyya(a, a) == pytest.approx(0.0, abs=1e-7)
    assert bhattacharyya(a, b) == pytest.approx(bhattacharyya(b, a), abs=1e-15)
    assert 0.0 <= bhattacharyya(a, b) <= 1.0
    assert bhattacharyya(a, c) <= bhattacharyya(a, b) + bhattacharyya(b, c) + 1e-12


def test_logistic_examples():
    assert logistic_likelihood(0.3, 0.3) == 0.5
    assert logistic_likelihood(0.0, 1.0) == pytest.approx(0.7310585786300049, abs=1e-15)
    assert logistic_likelihood(1.0, 0.0) == pytest.approx(0.2689414213699951, abs=1e-15)


@given(
    st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
)
def test_logistic_monotone(d1, d2, db):
    lo, hi = sorted((d1, d2))
    p_lo, p_hi = logistic_likelihood(lo, db), logistic_likelihood(hi, db)
    assert 0.0 < p_hi <= p_lo < 1.0
    if hi - lo > 1e-9:  # strictness within double resolution
        assert p_hi < p_lo
        assert logistic_likelihood(db, lo) < logistic_likelihood(db, hi)


@given(st.integers(0, 2**31 - 1), st.integers(-3, 3), st.integers(-3, 3))
def test_histogram_translation_equivariant(seed, dx, dy):
    rng = np.random.default_rng(seed)
    px = rng.random((16, 16, 3))
    box = Box(5, 6, 10, 9)
    shifted = np.roll(px, (dy, dx), axis=(0, 1))
    moved = Box(box.x0 + dx, box.y0 + dy, box.x1 + dx, box.y1 + dy)
    np.testing.assert_array_equal(build_histogram(Frame(px), box), build_histogram(Frame(shifted), moved))


def test_target_state_box_round_trip():
    for box in (Box(10, 20, 40, 50), Box(3, 4, 8, 11)):
        st_ = TargetState.from_box(box)
        assert st_.box(box.width, box.height) == box
    assert TargetState(10.0, 10.0, 2.0).box(4, 6) == Box(6, 4, 14, 16)


def test_likelihood_and_evaluator_agree(rng):
    px = rng.random((30, 40, 3)) * 0.3
    px[10:18, 12:20] = (0.9, 0.1, 0.1)
    f = Frame(px)
    model = AppearanceModel.from_frame(f, Box(12, 10, 20, 18))
    ev = model.evaluator(f)
    on = TargetState(16.0, 14.0)
    off = TargetState(32.0, 24.0)
    assert ev(on) == likelihood(f, on, model.h_fg, model.h_bg, (8, 8))
    assert ev(on) > 0.5 > ev(off)
    # box entirely outside the frame -> floor
    assert ev(TargetState(-50.0, -50.0)) == LIKELIHOOD_FLOOR
    # perfect foreground match: d_F = 0
    assert ev(on) == pytest.approx(1 / (1 + math.exp(-bhattacharyya(model.h_fg, model.h_bg))))


def test_model_rejects_outside_box(rng):
    with pytest.raises(ValueError):
        AppearanceModel.from_frame(Frame(rng.random((5, 5, 3))), Box(9, 9, 12, 12))
