import math

import numpy as np
import pytest

from cuboidtrack.heatmap import (
    MIN_PEAK_SIGMA,
    Heatmap,
    PeakDetection,
    extract_peaks,
    read_pgm,
    render_gaussian,
    render_scale,
    sigma_from_scale,
    write_pgm,
)


def test_render_scale_constants():
    assert render_scale(9.0) == 0.0
    assert render_scale(3.0) == pytest.approx(0.85, abs=1e-12)
    assert render_scale(0.0) == pytest.approx(1.0 - 0.15**1.5, abs=1e-12)
    assert render_scale(0.0) == pytest.approx(0.9419, abs=1e-4)
    assert render_scale(20.0) == 0.0


def test_render_scale_monotone_and_continuous():
    s = np.linspace(0.0, 9.0, 2001)
    k = render_scale(s)
    assert np.all(np.diff(k) <= 0.0)
    assert np.max(np.abs(np.diff(k))) < 1e-2
    assert np.all((k >= 0.0) & (k <= 1.0))


def test_sigma_from_scale_inverts_and_clamps():
    s = np.linspace(0.6, 8.9, 50)
    np.testing.assert_allclose(sigma_from_scale(render_scale(s)), s, rtol=1e-10)
    assert sigma_from_scale(render_scale(0.0)) == MIN_PEAK_SIGMA
    assert sigma_from_scale(0.0) == 9.0


def test_render_zero_scale_is_noop():
    hm = Heatmap.empty(64, 48)
    render_gaussian(hm, (32, 24), 2.0, 0.0)
    assert not hm.values.any()


def test_render_peak_equals_scale_when_cell_aligned():
    hm = Heatmap.empty(64, 48, stride=4)
    render_gaussian(hm, (32, 24), (2.0, 2.0), 0.85)
    assert hm.values.max() == pytest.approx(0.85, abs=1e-15)
    assert hm.values[6, 8] == pytest.approx(0.85, abs=1e-15)


def test_render_uses_max_composition():
    a = Heatmap.empty(64, 48)
    render_gaussian(a, (32, 24), 2.0, 0.5)
    render_gaussian(a, (32, 24), 2.0, 0.85)
    b = Heatmap.empty(64, 48)
    render_gaussian(b, (32, 24), 2.0, 0.85)
    render_gaussian(b, (32, 24), 2.0, 0.5)
    assert a.values.max() == pytest.approx(0.85)
    np.testing.assert_array_equal(a.values, b.values)


def test_render_ignores_points_outside_image():
    hm = Heatmap.empty(64, 48)
    render_gaussian(hm, (-50, 10), 2.0, 0.9)
    render_gaussian(hm, (10, 500), 2.0, 0.9)
    assert not hm.values.any()


def test_render_validates_inputs():
    hm = Heatmap.empty(64, 48)
    with pytest.raises(ValueError):
        render_gaussian(hm, (10, 10), 2.0, 1.5)
    with pytest.raises(ValueError):
        render_gaussian(hm, (10, 10), 0.0, 0.5)
    with pytest.raises(ValueError):
        Heatmap(np.zeros((2, 2)), stride=0)


def test_extract_from_empty_map():
    assert extract_peaks(Heatmap.empty(64, 48)) == []
    with pytest.raises(ValueError):
        extract_peaks(Heatmap.empty(64, 48), threshold=1.0)


def test_extract_single_peak_round_trip():
    hm = Heatmap.empty(128, 96, stride=4)
    render_gaussian(hm, (50.0, 41.0), (2.0, 2.0), 0.9)
    peaks = extract_peaks(hm)
    assert len(peaks) == 1
    p = peaks[0]
    assert np.max(np.abs(p.location - [50.0, 41.0])) <= 0.25 * hm.stride
    expected = sigma_from_scale(0.9)
    assert p.sigma[0] == pytest.approx(expected, rel=0.2)


@pytest.mark.parametrize("sigma", [1.0, 2.0, 3.5, 5.0, 6.5, 8.0])
def test_round_trip_cell_aligned(sigma):
    hm = Heatmap.empty(160, 120, stride=4)
    center = np.array([80.0, 60.0])
    k = render_scale(sigma)
    render_gaussian(hm, center, (3.0, 3.0), k)
    (p,) = extract_peaks(hm, threshold=0.01)
    assert np.max(np.abs(p.location - center)) <= 0.25 * hm.stride
    assert p.confidence == pytest.approx(k, abs=1e-6)
    assert p.sigma[0] == pytest.approx(sigma, rel=1e-6)


def test_subcell_refinement_is_exact_for_gaussians():
    hm = Heatmap.empty(160, 120, stride=4)
    render_gaussian(hm, (81.3, 58.9), (3.0, 3.0), 0.7)
    (p,) = extract_peaks(hm)
    np.testing.assert_allclose(p.location, [81.3, 58.9], atol=1e-9)
    assert p.confidence == pytest.approx(0.7, abs=1e-9)


def test_two_peaks_in_descending_confidence():
    hm = Heatmap.empty(160, 120)
    render_gaussian(hm, (30, 30), 2.0, 0.6)
    render_gaussian(hm, (120, 80), 2.0, 0.9)
    peaks = extract_peaks(hm)
    assert len(peaks) == 2
    assert peaks[0].confidence > peaks[1].confidence
    np.testing.assert_allclose(peaks[0].location, [120, 80], atol=1e-9)


def test_max_peaks_limits_output():
    hm = Heatmap.empty(200, 200)
    for i in range(5):
        render_gaussian(hm, (20 + 40 * i, 100), 2.0, 0.5 + 0.05 * i)
    assert len(extract_peaks(hm, max_peaks=3)) == 3


def test_values_stay_in_unit_interval():
    rng = np.random.default_rng(0)
    hm = Heatmap.empty(160, 120)
    for _ in range(50):
        render_gaussian(hm, rng.uniform([0, 0], [160, 120]), rng.uniform(0.5, 6, 2), rng.uniform())
    assert np.all(np.isfinite(hm.values))
    assert hm.values.min() >= 0.0 and hm.values.max() <= 1.0


def test_sample_is_bilinear():
    hm = Heatmap(np.array([[0.0, 1.0], [2.0, 3.0]]), stride=2)
    assert hm.sample((1.0, 1.0)) == pytest.approx(1.5)
    assert hm.sample((2.0, 0.0)) == pytest.approx(1.0)
    assert hm.sample((10.0, 0.0)) == 0.0


def test_peak_detection_validates():
    with pytest.raises(ValueError):
        PeakDetection((0, 0), 0.0, (1, 1))
    with pytest.raises(ValueError):
        PeakDetection((0, 0), 0.5, (0, 1))
    p = PeakDetection((1, 2), 0.5, (2.0, 3.0))
    np.testing.assert_array_equal(p.var, [4.0, 9.0])


def test_pgm_round_trip(tmp_path):
    hm = Heatmap.empty(40, 20)
    render_gaussian(hm, (20, 8), 3.0, 1.0)
    path = tmp_path / "h.pgm"
    write_pgm(hm, path)
    assert path.read_bytes().startswith(b"P5\n10 5\n255\n")
    back = read_pgm(path)
    assert back.shape == hm.shape
    np.testing.assert_allclose(back, hm.values, atol=0.5 / 255 + 1e-12)
    assert math.isclose(back.max(), 1.0)
