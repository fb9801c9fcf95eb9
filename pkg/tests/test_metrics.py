import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from raediff.errors import ShapeError
from raediff.metrics import C1, C2, compare, mse, psnr, ssim, to_display


def ssim_loops(a, b, win=8):
    """Straightforward windowed SSIM over every valid window position."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    per_channel = []
    for c in range(a.shape[0]):
        vals = []
        for i in range(a.shape[1] - win + 1):
            for j in range(a.shape[2] - win + 1):
                pa = a[c, i:i + win, j:j + win].ravel()
                pb = b[c, i:i + win, j:j + win].ravel()
                n = pa.size
                ma = sum(pa) / n
                mb = sum(pb) / n
                va = sum((x - ma) ** 2 for x in pa) / n
                vb = sum((y - mb) ** 2 for y in pb) / n
                cv = sum((x - ma) * (y - mb) for x, y in zip(pa, pb)) / n
                vals.append(((2 * ma * mb + C1) * (2 * cv + C2)) / ((ma ** 2 + mb ** 2 + C1) * (va + vb + C2)))
        per_channel.append(sum(vals) / len(vals))
    return sum(per_channel) / len(per_channel)


def test_mse_basics():
    a = np.zeros((1, 4, 4))
    assert mse(a, a) == 0.0
    assert mse(a, np.ones((1, 4, 4))) == 1.0


def test_mse_direct_summation():
    g = np.random.default_rng(0)
    a, b = g.uniform(0, 1, (1, 4, 4)), g.uniform(0, 1, (1, 4, 4))
    total = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        total += (x - y) ** 2
    assert mse(a, b) == pytest.approx(total / 16, abs=1e-12)


def test_psnr_values():
    a = np.zeros((1, 8, 8))
    assert psnr(a, a) == float("inf")
    assert psnr(a, np.full((1, 8, 8), 0.1)) == pytest.approx(20.0, abs=1e-9)
    assert psnr(a, np.ones((1, 8, 8))) == 0.0


def test_ssim_identity_and_constants():
    g = np.random.default_rng(1)
    a = g.uniform(0, 1, (1, 8, 8))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    d = 0.05
    ma, mb = 0.5, 0.5 + d
    closed = ((2 * ma * mb + C1) * C2) / ((ma ** 2 + mb ** 2 + C1) * C2)
    assert ssim(np.full((1, 8, 8), ma), np.full((1, 8, 8), mb)) == pytest.approx(closed, abs=1e-12)


@pytest.mark.parametrize("shape", [(1, 8, 8), (1, 12, 10), (3, 9, 9)])
def test_ssim_matches_loop_implementation(shape):
    g = np.random.default_rng(2)
    a = g.uniform(0, 1, shape)
    b = np.clip(a + 0.1 * g.standard_normal(shape), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim_loops(a, b), abs=1e-9)


def test_ssim_rejects_small_images():
    with pytest.raises(ShapeError):
        ssim(np.zeros((1, 7, 8)), np.zeros((1, 7, 8)))
    with pytest.raises(ShapeError):
        mse(np.zeros((1, 8, 8)), np.zeros((1, 8, 9)))


def test_to_display_clamps():
    assert to_display(np.array([-2.0, -1.0, 0.0, 1.0, 3.0])).tolist() == [0.0, 0.0, 0.5, 1.0, 1.0]


def test_compare_report():
    g = np.random.default_rng(3)
    a = [g.uniform(-1, 1, (1, 8, 8)) for _ in range(3)]
    r = compare(a, a, ["x", "y", "z"])
    assert r.mean_ssim == pytest.approx(1.0) and r.mean_psnr == float("inf") and r.mean_mse == 0.0
    assert len(r.rows()) == 3
    with pytest.raises(ShapeError):
        compare(a, a[:2])


unit_images = arrays(np.float64, (1, 8, 8), elements=st.floats(0, 1))


@settings(max_examples=50, deadline=None)
@given(unit_images, unit_images)
def test_symmetry_and_range(a, b):
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert mse(a, b) == mse(b, a)
    assert -1.0 <= ssim(a, b) <= 1.0 + 1e-12
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(unit_images, st.floats(0.001, 0.2), st.floats(0.001, 0.2))
def test_psnr_monotone_in_mse(a, d1, d2):
    b1, b2 = a + d1, a + d2
    if mse(a, b1) < mse(a, b2):
        assert psnr(a, b1) > psnr(a, b2)
