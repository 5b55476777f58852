"""Butterworth design, filtering, and frequency response."""

import numpy as np
import pytest

from antispoof import dsp
from antispoof.errors import ParameterError

FS = 16000

# the seven probing stopbands, in Hz
PROBE_BANDS = [
    (0.0, 100.0),
    (0.0, 800.0),
    (800.0, 2400.0),
    (2400.0, 4000.0),
    (4000.0, 5600.0),
    (5600.0, 7200.0),
    (7200.0, 8000.0),
]


# ---------------------------------------------------------------------------
# Oracle: evaluate |H| by expanding the full numerator/denominator
# polynomials from the sections and evaluating them at e^{-jw}. Independent
# of the section-by-section multiplication in dsp.freq_response.
# ---------------------------------------------------------------------------


def response_db_oracle(filt, f_hz):
    b_poly = np.array([1.0])
    a_poly = np.array([1.0])
    for b0, b1, b2, a1, a2 in filt.sections:
        b_poly = np.polynomial.polynomial.polymul(b_poly, [b0, b1, b2])
        a_poly = np.polynomial.polynomial.polymul(a_poly, [1.0, a1, a2])
    z = np.exp(-1j * 2 * np.pi * f_hz / filt.sample_rate_hz)
    num = sum(c * z**i for i, c in enumerate(b_poly))
    den = sum(c * z**i for i, c in enumerate(a_poly))
    return 20.0 * np.log10(max(abs(num / den), 1e-20))


def test_freq_response_identity_and_delay():
    ident = dsp.identity_filter(FS)
    for f in [0.0, 1234.5, 8000.0]:
        assert dsp.freq_response(ident, f) == pytest.approx(0.0, abs=1e-12)
    delay = dsp.IirFilter(
        sections=np.array([[0.0, 1.0, 0.0, 0.0, 0.0]]), kind="delay",
        sample_rate_hz=FS,
    )
    for f in [0.0, 3000.0, 8000.0]:
        assert dsp.freq_response(delay, f) == pytest.approx(0.0, abs=1e-12)


def test_freq_response_matches_polynomial_oracle():
    filt = dsp.design_bandstop(800, 2400, 10, FS)
    for f in [0.0, 500.0, 800.0, 2400.0, 4000.0, 6000.0, 8000.0]:
        assert dsp.freq_response(filt, f) == pytest.approx(
            response_db_oracle(filt, f), abs=0.5
        )


# ---------------------------------------------------------------------------
# Design properties
# ---------------------------------------------------------------------------


def test_bandstop_edges_and_center():
    filt = dsp.design_bandstop(800, 2400, 10, FS)
    assert abs(dsp.freq_response(filt, 0.0)) < 1e-6
    assert dsp.freq_response(filt, 800.0) == pytest.approx(-3.0103, abs=0.1)
    assert dsp.freq_response(filt, 2400.0) == pytest.approx(-3.0103, abs=0.1)
    center = np.sqrt(800.0 * 2400.0)
    assert dsp.freq_response(filt, center) <= -80.0


def test_degenerate_bands_become_highpass_lowpass():
    hp = dsp.design_bandstop(0, 100, 10, FS)
    assert hp.kind == "highpass"
    assert hp.order == 10
    assert abs(dsp.freq_response(hp, 8000.0)) < 1e-3
    lp = dsp.design_bandstop(7200, 8000, 10, FS)
    assert lp.kind == "lowpass"
    assert lp.order == 10
    assert abs(dsp.freq_response(lp, 0.0)) < 1e-3


def test_all_probe_bands_stable():
    for low, high in PROBE_BANDS:
        filt = dsp.design_bandstop(low, high, 10, FS)
        assert np.all(filt.pole_magnitudes() < 1.0 - 1e-9), (low, high)
        # section count follows the realized order
        assert filt.sections.shape[0] == -(-filt.order // 2)


def test_sections_ordered_by_ascending_pole_magnitude():
    filt = dsp.design_bandstop(800, 2400, 10, FS)
    mags = []
    for _, _, _, a1, a2 in filt.sections:
        mags.append(np.max(np.abs(np.roots([1.0, a1, a2]))))
    assert all(mags[i] <= mags[i + 1] + 1e-12 for i in range(len(mags) - 1))


def test_design_parameter_validation():
    with pytest.raises(ParameterError):
        dsp.design_bandstop(2400, 800, 10, FS)  # inverted
    with pytest.raises(ParameterError):
        dsp.design_bandstop(0, 9000, 10, FS)  # above Nyquist
    with pytest.raises(ParameterError):
        dsp.design_bandstop(800, 2400, 9, FS)  # odd order
    with pytest.raises(ParameterError):
        dsp.design_bandstop(0, 8000, 10, FS)  # whole spectrum


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------


def test_identity_filter_bit_exact():
    rng = np.random.default_rng(5)
    x = rng.uniform(-0.9, 0.9, 2000).astype(np.float32)
    wave = dsp.Waveform(x, FS)
    out = dsp.apply_filter(dsp.identity_filter(FS), wave)
    assert np.array_equal(out.samples, x)


def test_zero_input_zero_output():
    wave = dsp.Waveform(np.zeros(1000, dtype=np.float32), FS)
    out = dsp.apply_filter(dsp.design_bandstop(800, 2400, 10, FS), wave)
    assert np.all(out.samples == 0.0)
    assert len(out.samples) == 1000


def test_inband_sine_attenuated_60db():
    t = np.arange(FS) / FS  # 1 s
    x = np.sin(2 * np.pi * 1500.0 * t).astype(np.float32)
    out = dsp.apply_filter(
        dsp.design_bandstop(800, 2400, 10, FS), dsp.Waveform(x, FS)
    )
    skip = int(0.1 * FS)  # discard transient
    rms_in = np.sqrt(np.mean(x[skip:] ** 2))
    rms_out = np.sqrt(np.mean(out.samples[skip:] ** 2))
    assert 20 * np.log10(rms_out / rms_in) <= -60.0


def test_rate_mismatch_rejected():
    filt = dsp.design_bandstop(800, 2400, 10, FS)
    with pytest.raises(ParameterError):
        dsp.apply_filter(filt, dsp.Waveform(np.zeros(100, dtype=np.float32), 8000))


def test_filtering_linearity():
    rng = np.random.default_rng(23)
    filt = dsp.design_bandstop(800, 2400, 10, FS)
    x = rng.uniform(-0.4, 0.4, 3000).astype(np.float32)
    y = rng.uniform(-0.4, 0.4, 3000).astype(np.float32)
    a, b = 0.7, -1.3
    mix = dsp.Waveform((a * x + b * y).astype(np.float32), FS)
    lhs = dsp.apply_filter(filt, mix).samples.astype(np.float64)
    fx = dsp.apply_filter(filt, dsp.Waveform(x, FS)).samples.astype(np.float64)
    fy = dsp.apply_filter(filt, dsp.Waveform(y, FS)).samples.astype(np.float64)
    rhs = a * fx + b * fy
    scale = np.max(np.abs(rhs)) + 1e-12
    assert np.max(np.abs(lhs - rhs)) / scale < 1e-6


def test_output_length_preserved():
    rng = np.random.default_rng(2)
    for n in [1, 17, 320, 4001]:
        wave = dsp.Waveform(rng.uniform(-0.5, 0.5, n).astype(np.float32), FS)
        out = dsp.apply_filter(dsp.design_bandstop(4000, 5600, 10, FS), wave)
        assert len(out.samples) == n
