import numpy as np
import pytest

from fwigan.source import default_t0, ricker, ricker_df


def test_ricker_peaks_at_its_delay():
    w = ricker(10.0, 1000, 0.001)

    assert w.t0 == pytest.approx(0.1)
    assert int(np.argmax(w.samples)) == 100
    assert w.samples[100] == pytest.approx(1.0, abs=1e-12)


def test_default_delay_is_snapped_to_a_sample():
    # 1/7 s is 47.6 samples of 3 ms.
    assert default_t0(7.0, 0.003) == pytest.approx(0.144)

    w = ricker(7.0, 200, 0.003)

    assert w.t0 == pytest.approx(0.144)
    assert w.samples.max() == pytest.approx(1.0, abs=1e-12)
    assert int(np.argmax(w.samples)) == 48
    assert ricker_df(7.0, 200, 0.003).t0 == w.t0


def test_ricker_has_zero_mean():
    w = ricker(10.0, 1000, 0.001, t0=0.2)

    assert abs(w.samples.sum() * w.dt) < 1e-6


def test_ricker_rejects_bad_frequencies():
    with pytest.raises(ValueError, match="Nyquist"):
        ricker(600.0, 100, 0.001)

    with pytest.raises(ValueError, match="positive"):
        ricker(0.0, 100, 0.001)

    with pytest.raises(ValueError, match="positive"):
        ricker_df(0.0, 100, 0.001)

    with pytest.raises(ValueError, match="positive"):
        ricker(-5.0, 100, 0.001)

    with pytest.raises(ValueError):
        ricker(10.0, 100, 0.001, t0=-0.1)


def test_ricker_df_matches_finite_differences():
    f, h, t0 = 8.0, 1e-5, 0.15

    fd = (ricker(f + h, 400, 0.002, t0).samples - ricker(f - h, 400, 0.002, t0).samples) / (
        2 * h
    )

    np.testing.assert_allclose(ricker_df(f, 400, 0.002, t0).samples, fd, rtol=1e-6, atol=1e-9)


def test_ricker_df_scales_inversely_with_frequency():
    """Doubling f while halving the lag halves the derivative."""
    base = ricker_df(10.0, 500, 0.001, t0=0.1)
    doubled = ricker_df(20.0, 500, 0.0005, t0=0.05)

    np.testing.assert_allclose(doubled.samples, base.samples / 2.0, rtol=1e-9, atol=1e-12)


def test_scaled_wavelet_keeps_its_timing():
    w = ricker(10.0, 200, 0.001)
    doubled = w.scaled(2.0)

    np.testing.assert_array_equal(doubled.samples, 2.0 * w.samples)
    assert (doubled.f_peak, doubled.t0, doubled.dt) == (w.f_peak, w.t0, w.dt)
    assert w.times[-1] == pytest.approx(0.199)


def test_ricker_spectrum_peaks_at_its_frequency():
    w = ricker(7.0, 2000, 0.003)

    spectrum = np.abs(np.fft.rfft(w.samples))
    freqs = np.fft.rfftfreq(w.nt, w.dt)

    assert abs(freqs[int(np.argmax(spectrum))] - 7.0) <= freqs[1]


def test_ricker_crosses_zero_where_expected():
    w = ricker(7.0, 2000, 0.003)

    tau = 1.0 / (np.sqrt(2.0) * np.pi * 7.0)
    after = np.flatnonzero((w.times > w.t0) & (w.samples <= 0.0))[0]

    assert abs(w.times[after] - (w.t0 + tau)) <= w.dt
