import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from abrupttrack.annf import (
    PatchField,
    compute_annf,
    confidence_map,
    exhaustive_annf,
    forward_backward_filter,
    forward_targets,
    incoherence_map,
)
from abrupttrack.geometry import Box, RegionGrid
from abrupttrack.imaging import Frame


def random_frame(rng, h=8, w=8):
    return Frame(rng.random((h, w, 3)))


def hand_field(w, h, mapping, patch=1):
    """Field with patch 1 where ``mapping[(x, y)] = (tx, ty)``; identity elsewhere."""
    off = np.zeros((h, w, 2), dtype=np.int64)
    for (x, y), (tx, ty) in mapping.items():
        off[y, x] = (tx - x, ty - y)
    return PatchField(patch, off, np.zeros((h, w)), np.ones((h, w), dtype=bool))


def test_identity_field(rng):
    f = random_frame(rng, 12, 10)
    fld = compute_annf(f, f, patch=3, iterations=2, seed=4)
    assert (fld.offsets[fld.valid] == 0).all()
    assert (fld.errors[fld.valid] == 0).all()


def test_translation_recovered(rng):
    a = rng.random((16, 16, 3))
    b = np.roll(a, (1, 3), axis=(0, 1))
    fld = compute_annf(Frame(a), Frame(b), patch=3, iterations=8, seed=1)
    ex = exhaustive_annf(Frame(a), Frame(b), patch=3)
    # centers 1..11 in x (target patch must avoid the wrapped columns), 1..13 in y
    for y in range(1, 14):
        for x in range(1, 12):
            assert tuple(fld.offsets[y, x]) == (3, 1)
            assert fld.errors[y, x] == 0.0
            assert tuple(ex.offsets[y, x]) == (3, 1)


def test_center_convention():
    f = Frame(np.zeros((6, 6, 3)))
    fld = compute_annf(f, f, patch=4)
    # centers sit at top-left + 2, so valid centers span 2..4
    assert np.array_equal(np.nonzero(fld.valid.any(axis=0))[0], [2, 3, 4])


def test_field_invariants(rng):
    a, b = random_frame(rng, 9, 11), random_frame(rng, 9, 11)
    p = 3
    fld = compute_annf(a, b, patch=p, iterations=3, seed=7)
    ys, xs = np.nonzero(fld.valid)
    tx = xs + fld.offsets[ys, xs, 0]
    ty = ys + fld.offsets[ys, xs, 1]
    half = p // 2
    assert (tx - half >= 0).all() and (tx - half + p <= 11).all()
    assert (ty - half >= 0).all() and (ty - half + p <= 9).all()
    assert (fld.errors >= 0).all()
    for y, x, u, v in zip(ys, xs, tx, ty):
        pa = a.pixels[y - half:y - half + p, x - half:x - half + p]
        pb = b.pixels[v - half:v - half + p, u - half:u - half + p]
        assert fld.errors[y, x] == pytest.approx(((pa - pb) ** 2).sum(), rel=1e-12, abs=1e-15)
    ei = fld.error_image()
    assert ei.max() <= 1.0 and ei[~fld.valid].sum() == 0


@given(st.integers(0, 2**31 - 1))
def test_never_below_exhaustive(seed):
    rng = np.random.default_rng(seed)
    a, b = random_frame(rng, 7, 7), random_frame(rng, 7, 7)
    fld = compute_annf(a, b, patch=3, iterations=2, seed=seed)
    ex = exhaustive_annf(a, b, patch=3)
    assert (fld.errors[fld.valid] >= ex.errors[fld.valid] - 1e-12).all()


def test_initial_guess_bound(rng):
    # zero iterations leaves the best of {zero offset, one random guess}
    a, b = random_frame(rng), random_frame(rng)
    f0 = compute_annf(a, b, patch=3, iterations=0, seed=3)
    f5 = compute_annf(a, b, patch=3, iterations=5, seed=3)
    assert (f5.errors <= f0.errors).all()


def test_determinism(rng):
    a, b = random_frame(rng), random_frame(rng)
    f1 = compute_annf(a, b, patch=3, seed=11)
    f2 = compute_annf(a, b, patch=3, seed=11)
    assert np.array_equal(f1.offsets, f2.offsets) and np.array_equal(f1.errors, f2.errors)


def test_restricted_centers(rng):
    a, b = random_frame(rng, 10, 10), random_frame(rng, 10, 10)
    fld = compute_annf(a, b, patch=3, centers=Box(3, 4, 6, 6))
    assert fld.valid.sum() == 6 and fld.valid[4:6, 3:6].all()


def test_input_validation(rng):
    with pytest.raises(ValueError):
        compute_annf(random_frame(rng, 8, 8), random_frame(rng, 8, 9))
    with pytest.raises(ValueError):
        compute_annf(random_frame(rng, 4, 4), random_frame(rng, 4, 4), patch=5)


def test_csv_dump(tmp_path, rng):
    a = random_frame(rng, 5, 5)
    fld = compute_annf(a, a, patch=3)
    fld.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x,y,dx,dy,error" and len(lines) == 1 + 9


# --- forward-backward filter, incoherence, confidence ------------------------


def test_filter_perfect_inverse():
    box = Box(1, 1, 3, 3)
    fwd_map = {(x, y): (x + 4, y + 2) for x in range(1, 3) for y in range(1, 3)}
    bwd_map = {v: k for k, v in fwd_map.items()}
    fwd, bwd = hand_field(8, 6, fwd_map), hand_field(8, 6, bwd_map)
    s = forward_backward_filter(fwd, bwd, box)
    assert s.sum() == 4
    assert all(s[ty, tx] for tx, ty in fwd_map.values())


def test_filter_backward_outside():
    box = Box(0, 0, 2, 2)
    fwd = hand_field(6, 6, {(x, y): (x + 3, y + 3) for x in range(2) for y in range(2)})
    bwd = hand_field(6, 6, {(x, y): (5, 5) for x in range(6) for y in range(6)})
    assert not forward_backward_filter(fwd, bwd, box).any()


def test_filter_one_of_three():
    box = Box(0, 0, 3, 1)
    fwd = hand_field(10, 10, {(0, 0): (5, 5), (1, 0): (6, 5), (2, 0): (7, 5)})
    bwd = hand_field(10, 10, {(5, 5): (1, 0), (6, 5): (8, 8), (7, 5): (9, 0)})
    s = forward_backward_filter(fwd, bwd, box)
    assert s.sum() == 1 and s[5, 5]


def test_filter_empty_box():
    f = hand_field(4, 4, {})
    assert not forward_backward_filter(f, f, Box(2, 2, 2, 3)).any()


def test_incoherence_examples():
    box = Box(0, 0, 4, 3)
    all_to_one = {(x, y): (6, 6) for x in range(4) for y in range(3)}
    fwd = hand_field(8, 8, all_to_one)
    survivors = np.zeros((8, 8), dtype=bool)
    survivors[6, 6] = True
    h = incoherence_map(survivors, fwd, box)
    assert h[6, 6] == 12 and h.sum() == 12
    # a target that does not survive gets 0
    assert incoherence_map(np.zeros((8, 8), bool), fwd, box).sum() == 0
    bij = hand_field(8, 8, {(x, y): (x + 4, y + 4) for x in range(4) for y in range(3)})
    surv = np.zeros((8, 8), bool)
    surv[4:7, 4:8] = True
    h = incoherence_map(surv, bij, box)
    assert (h[4:7, 4:8] == 1).all() and h.sum() == 12
    tx, ty = forward_targets(bij, box)
    assert len(tx) == 12


def test_confidence_examples():
    grid = RegionGrid(5, 2, 1, 1)
    assert confidence_map(np.zeros((2, 5)), grid).lam.tolist() == [0.0]
    h = np.zeros((2, 5))
    h[1, 3] = 5
    assert confidence_map(h, grid).lam[0] == 0.5
    g2 = RegionGrid(6, 4, 2, 2)
    h = np.zeros((4, 6))
    h[:2, :3] = 4
    lam = confidence_map(h, g2).lam
    assert lam.tolist() == [4.0, 0.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        confidence_map(np.zeros((3, 3)), g2)


@given(
    st.integers(1, 30), st.integers(1, 30), st.integers(1, 6), st.integers(1, 6),
    st.integers(0, 2**31 - 1),
)
def test_confidence_mass_conservation(w, h, rows, cols, seed):
    rows, cols = min(rows, h), min(cols, w)
    rng = np.random.default_rng(seed)
    hmap = rng.integers(0, 20, size=(h, w)).astype(float)
    grid = RegionGrid(w, h, rows, cols)
    lam = confidence_map(hmap, grid).lam
    assert (lam >= 0).all()
    assert (lam * grid.areas()).sum() == pytest.approx(hmap.sum(), rel=1e-12, abs=1e-9)


def random_field(rng, w, h):
    off = np.stack([rng.integers(0, w, (h, w)), rng.integers(0, h, (h, w))], axis=-1)
    off -= np.stack(np.meshgrid(np.arange(w), np.arange(h)), axis=-1)
    return PatchField(1, off, np.zeros((h, w)), np.ones((h, w), dtype=bool))


@given(st.integers(0, 2**31 - 1), st.data())
def test_filter_monotone_in_box(seed, data):
    rng = np.random.default_rng(seed)
    w, h = 9, 7
    fwd, bwd = random_field(rng, w, h), random_field(rng, w, h)
    x0 = data.draw(st.integers(0, w - 1))
    y0 = data.draw(st.integers(0, h - 1))
    x1 = data.draw(st.integers(x0, w))
    y1 = data.draw(st.integers(y0, h))
    big = Box(x0, y0, x1, y1)
    sx0 = data.draw(st.integers(x0, x1))
    sy0 = data.draw(st.integers(y0, y1))
    small = Box(sx0, sy0, data.draw(st.integers(sx0, x1)), data.draw(st.integers(sy0, y1)))
    s_big = forward_backward_filter(fwd, bwd, big)
    s_small = forward_backward_filter(fwd, bwd, small)
    assert not (s_small & ~s_big).any()
