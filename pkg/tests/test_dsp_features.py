"""WAV ingestion, LFCC extraction, and delta features."""

import numpy as np
import pytest
from scipy.io import wavfile

from antispoof import dsp
from antispoof.errors import (
    InsufficientInputError,
    ParameterError,
    UnsupportedFormatError,
)


# ---------------------------------------------------------------------------
# Oracle: direct-DFT LFCC reference, written before the fast path.
# Every step is spelled out with explicit loops so it shares no code with
# dsp.extract_lfcc.
# ---------------------------------------------------------------------------


def lfcc_reference(samples, fs, cfg):
    frame_len = int(round(fs * cfg.frame_len_ms / 1000.0))
    frame_shift = int(round(fs * cfg.frame_shift_ms / 1000.0))
    n_frames = (len(samples) - frame_len) // frame_shift + 1
    n_bins = cfg.fft_size // 2 + 1
    window = np.hanning(frame_len)

    # direct DFT per frame
    power = np.zeros((n_frames, n_bins))
    for n in range(n_frames):
        frame = samples[n * frame_shift : n * frame_shift + frame_len] * window
        for k in range(n_bins):
            acc = 0.0 + 0.0j
            for t in range(frame_len):
                acc += frame[t] * np.exp(-2j * np.pi * k * t / cfg.fft_size)
            power[n, k] = abs(acc) ** 2

    # triangular filters, linear spacing
    nyq = fs / 2.0
    edges = np.linspace(0.0, nyq, cfg.n_filters + 2)
    bin_freqs = np.array([k * fs / cfg.fft_size for k in range(n_bins)])
    logeng = np.zeros((n_frames, cfg.n_filters))
    for i in range(cfg.n_filters):
        weights = np.zeros(n_bins)
        for k, f in enumerate(bin_freqs):
            if edges[i] <= f <= edges[i + 1]:
                weights[k] = (f - edges[i]) / (edges[i + 1] - edges[i])
            elif edges[i + 1] < f <= edges[i + 2]:
                weights[k] = (edges[i + 2] - f) / (edges[i + 2] - edges[i + 1])
        logeng[:, i] = np.log(np.maximum(power @ weights, 1e-10))

    # orthonormal DCT-II, first n_ceps rows
    ceps = np.zeros((n_frames, cfg.n_ceps))
    for k in range(cfg.n_ceps):
        scale = np.sqrt(1.0 / cfg.n_filters) if k == 0 else np.sqrt(2.0 / cfg.n_filters)
        basis = scale * np.cos(
            np.pi * k * (2 * np.arange(cfg.n_filters) + 1) / (2.0 * cfg.n_filters)
        )
        ceps[:, k] = logeng @ basis
    return ceps


def test_lfcc_matches_direct_dft_reference_on_sine():
    fs = 16000
    t = np.arange(int(0.2 * fs)) / fs
    wave = dsp.Waveform(np.sin(2 * np.pi * 1000.0 * t).astype(np.float32), fs)
    cfg = dsp.LfccConfig(include_deltas=False)
    got = dsp.extract_lfcc(wave, cfg).frames
    want = lfcc_reference(wave.samples.astype(np.float64), fs, cfg)
    assert got.shape == want.shape
    assert np.max(np.abs(got - want)) < 1e-4


# ---------------------------------------------------------------------------
# WAV round trips and error handling
# ---------------------------------------------------------------------------


def test_pcm16_normalization(tmp_path):
    path = tmp_path / "x.wav"
    wavfile.write(path, 16000, np.array([0, 16384, -32768], dtype=np.int16))
    wave = dsp.read_wav(path)
    assert wave.sample_rate_hz == 16000
    np.testing.assert_allclose(wave.samples, [0.0, 0.5, -1.0])


def test_silence_second(tmp_path):
    path = tmp_path / "z.wav"
    dsp.write_wav(path, dsp.Waveform(np.zeros(16000, dtype=np.float32), 16000))
    wave = dsp.read_wav(path)
    assert len(wave.samples) == 16000
    assert np.all(wave.samples == 0.0)


def test_wav_round_trip_within_quantization(tmp_path):
    rng = np.random.default_rng(11)
    for trial in range(5):
        x = rng.uniform(-0.99, 0.99, size=4000).astype(np.float32)
        path = tmp_path / f"r{trial}.wav"
        dsp.write_wav(path, dsp.Waveform(x, 16000))
        back = dsp.read_wav(path)
        assert np.max(np.abs(back.samples - x)) <= 1.0 / 32768.0


def test_multichannel_rejected(tmp_path):
    path = tmp_path / "st.wav"
    wavfile.write(path, 16000, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(UnsupportedFormatError):
        dsp.read_wav(path)


def test_malformed_header_rejected(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"RIFFgarbage-not-a-wav-file")
    with pytest.raises(dsp.FormatError):
        dsp.read_wav(path)


def test_float32_wav_supported(tmp_path):
    path = tmp_path / "f32.wav"
    x = np.linspace(-0.5, 0.5, 64, dtype=np.float32)
    wavfile.write(path, 16000, x)
    back = dsp.read_wav(path)
    np.testing.assert_array_equal(back.samples, x)


# ---------------------------------------------------------------------------
# LFCC framing and shape contracts
# ---------------------------------------------------------------------------


def test_zero_signal_framing_and_deltas():
    wave = dsp.Waveform(np.zeros(16000, dtype=np.float32), 16000)
    feats = dsp.extract_lfcc(wave)
    assert feats.n_frames == 99  # floor((16000 - 320) / 160) + 1
    assert feats.dim == 60
    # every frame identical, all delta columns exactly zero
    assert np.all(feats.frames == feats.frames[0])
    assert np.all(feats.frames[:, 20:] == 0.0)


def test_default_config_yields_60_dims():
    rng = np.random.default_rng(3)
    wave = dsp.Waveform(rng.uniform(-0.5, 0.5, 8000).astype(np.float32), 16000)
    feats = dsp.extract_lfcc(wave)
    assert feats.dim == 60
    assert feats.frame_shift_s == pytest.approx(0.010)


def test_framing_count_randomized():
    rng = np.random.default_rng(7)
    cfg = dsp.LfccConfig()
    for _ in range(25):
        n_samples = int(rng.integers(320, 50000))
        wave = dsp.Waveform(
            rng.uniform(-0.1, 0.1, n_samples).astype(np.float32), 16000
        )
        feats = dsp.extract_lfcc(wave, cfg)
        assert feats.n_frames == (n_samples - 320) // 160 + 1


def test_too_short_input_raises():
    wave = dsp.Waveform(np.zeros(100, dtype=np.float32), 16000)
    with pytest.raises(InsufficientInputError):
        dsp.extract_lfcc(wave)


def test_shift_equivariance():
    rng = np.random.default_rng(19)
    x = rng.uniform(-0.5, 0.5, 16000 + 160).astype(np.float32)
    full = dsp.extract_lfcc(dsp.Waveform(x, 16000)).frames
    shifted = dsp.extract_lfcc(dsp.Waveform(x[160:], 16000)).frames
    # interior frames (outside the delta-delta edge-replication window of 4)
    n = shifted.shape[0]
    assert np.max(np.abs(shifted[4 : n - 4] - full[5 : n + 1 - 4])) < 1e-5


def test_dct_orthonormality():
    mat = dsp.dct_matrix(20)
    np.testing.assert_allclose(mat @ mat.T, np.eye(20), atol=1e-10)


# ---------------------------------------------------------------------------
# Deltas
# ---------------------------------------------------------------------------


def test_deltas_constant_input_zero():
    x = np.full((8, 3), 2.5)
    assert np.all(dsp.compute_deltas(x) == 0.0)


def test_deltas_single_frame_zero():
    x = np.array([[1.0, -2.0, 3.0]])
    out = dsp.compute_deltas(x)
    assert out.shape == (1, 3)
    assert np.all(out == 0.0)


def test_deltas_linear_ramp_interior():
    x = np.arange(10.0)[:, None]
    out = dsp.compute_deltas(x)
    # hand evaluation: (1*(x[n+1]-x[n-1]) + 2*(x[n+2]-x[n-2])) / 10 = 1
    np.testing.assert_allclose(out[2:-2, 0], 1.0)


def test_lfcc_config_validation():
    with pytest.raises(ParameterError):
        dsp.LfccConfig(n_ceps=30, n_filters=20)
    with pytest.raises(ParameterError):
        dsp.extract_lfcc(
            dsp.Waveform(np.zeros(16000, dtype=np.float32), 16000),
            dsp.LfccConfig(fft_size=256),  # frame longer than FFT
        )
