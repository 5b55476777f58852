"""Deterministic signal processing: WAV ingestion, LFCC features, deltas,
and Butterworth band-stop filter design/application.

All functions are pure given their inputs and safe to call concurrently.
"""

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile as _wavfile
from scipy.signal import sosfilt as _sosfilt

from .errors import (
    FormatError,
    InsufficientInputError,
    ParameterError,
    UnsupportedFormatError,
)

DEFAULT_SAMPLE_RATE = 16000
PCM16_SCALE = 32768.0
LOG_FLOOR = 1e-10
DB_FLOOR = -400.0


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float32 samples in [-1, 1] plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ParameterError("waveform samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("waveform contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise ParameterError("sample rate must be positive")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class LfccConfig:
    frame_len_ms: float = 20.0
    frame_shift_ms: float = 10.0
    fft_size: int = 512
    n_filters: int = 20
    n_ceps: int = 20
    include_deltas: bool = True

    def __post_init__(self):
        if self.n_ceps > self.n_filters:
            raise ParameterError("n_ceps must not exceed n_filters")
        if self.frame_len_ms <= 0 or self.frame_shift_ms <= 0:
            raise ParameterError("frame length and shift must be positive")
        if self.fft_size < 2:
            raise ParameterError("fft_size must be >= 2")

    def frame_len(self, fs: int) -> int:
        return int(round(fs * self.frame_len_ms / 1000.0))

    def frame_shift(self, fs: int) -> int:
        return int(round(fs * self.frame_shift_ms / 1000.0))

    @property
    def feature_dim(self) -> int:
        return 3 * self.n_ceps if self.include_deltas else self.n_ceps


@dataclass(frozen=True)
class FeatureSequence:
    """N x D frame matrix (float32) plus the shift between frames in seconds."""

    frames: np.ndarray
    frame_shift_s: float

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2:
            raise ParameterError("feature frames must be an N x D matrix")
        if not np.all(np.isfinite(frames)):
            raise ParameterError("feature frames contain non-finite entries")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def read_wav(path) -> Waveform:
    """Read a mono RIFF/WAVE file (PCM16 or IEEE float32).

    PCM16 samples are normalized by 32768; float files are taken as-is.
    """
    try:
        rate, data = _wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise FormatError(f"cannot parse WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise UnsupportedFormatError(
            f"{path}: only mono WAV is supported (got {data.shape[1]} channels)"
        )
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / np.float32(PCM16_SCALE)
    elif data.dtype == np.float32:
        samples = data
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported sample format {data.dtype} "
            "(expected int16 or float32)"
        )
    return Waveform(samples=samples, sample_rate_hz=int(rate))


def write_wav(path, wave: Waveform, float32: bool = False) -> None:
    """Write a Waveform as mono PCM16 (default) or IEEE float32."""
    if float32:
        _wavfile.write(path, wave.sample_rate_hz, wave.samples.astype(np.float32))
        return
    scaled = np.round(wave.samples.astype(np.float64) * PCM16_SCALE)
    pcm = np.clip(scaled, -32768, 32767).astype(np.int16)
    _wavfile.write(path, wave.sample_rate_hz, pcm)


def dct_matrix(size: int) -> np.ndarray:
    """Orthonormal type-II DCT matrix (size x size), D @ D.T == I."""
    n = np.arange(size)
    k = n[:, None]
    mat = np.cos(np.pi * k * (2 * n[None, :] + 1) / (2.0 * size))
    mat *= np.sqrt(2.0 / size)
    mat[0, :] *= np.sqrt(0.5)
    return mat


def linear_triangular_filterbank(n_filters: int, fft_size: int, fs: int) -> np.ndarray:
    """Triangular filters spaced linearly from 0 Hz to Nyquist.

    Returns a (n_filters, fft_size//2 + 1) weight matrix evaluated at the
    FFT bin frequencies.
    """
    nyq = fs / 2.0
    edges = np.linspace(0.0, nyq, n_filters + 2)
    bin_freqs = np.linspace(0.0, nyq, fft_size // 2 + 1)
    fb = np.zeros((n_filters, bin_freqs.size))
    for i in range(n_filters):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def compute_deltas(features: np.ndarray) -> np.ndarray:
    """Regression deltas with half-window 2 and edge replication."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ParameterError("deltas need an N x D matrix with N >= 1")
    padded = np.pad(x, ((2, 2), (0, 0)), mode="edge")
    # delta_n = sum_k k * (x[n+k] - x[n-k]) / (2 * sum_k k^2),  k = 1, 2
    num = (padded[3:-1] - padded[1:-3]) + 2.0 * (padded[4:] - padded[:-4])
    return num / 10.0


def frame_count(n_samples: int, frame_len: int, frame_shift: int) -> int:
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // frame_shift + 1


def extract_lfcc(wave: Waveform, cfg: LfccConfig = LfccConfig()) -> FeatureSequence:
    """Linear frequency cepstral coefficients, optionally with deltas.

    Per frame: Hann window -> power spectrum -> linear triangular
    filterbank -> floored natural log -> orthonormal DCT-II -> first
    n_ceps coefficients (C0 included).
    """
    fs = wave.sample_rate_hz
    frame_len = cfg.frame_len(fs)
    frame_shift = cfg.frame_shift(fs)
    if frame_len > cfg.fft_size:
        raise ParameterError(
            f"frame length {frame_len} exceeds fft_size {cfg.fft_size}"
        )
    n = frame_count(len(wave.samples), frame_len, frame_shift)
    if n < 1:
        raise InsufficientInputError(
            f"waveform of {len(wave.samples)} samples is shorter than one "
            f"frame ({frame_len} samples)"
        )
    x = wave.samples.astype(np.float64)
    idx = np.arange(frame_len)[None, :] + frame_shift * np.arange(n)[:, None]
    frames = x[idx] * np.hanning(frame_len)[None, :]
    power = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)) ** 2
    fb = linear_triangular_filterbank(cfg.n_filters, cfg.fft_size, fs)
    log_energy = np.log(np.maximum(power @ fb.T, LOG_FLOOR))
    dct = dct_matrix(cfg.n_filters)
    static = log_energy @ dct[: cfg.n_ceps].T
    if cfg.include_deltas:
        d1 = compute_deltas(static)
        d2 = compute_deltas(d1)
        feats = np.concatenate([static, d1, d2], axis=1)
    else:
        feats = static
    return FeatureSequence(
        frames=feats.astype(np.float32), frame_shift_s=frame_shift / fs
    )


# ---------------------------------------------------------------------------
# Butterworth design (band-stop with high-/low-pass degenerate cases)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IirFilter:
    """Cascade of second-order sections (b0, b1, b2, a1, a2 per row)."""

    sections: np.ndarray
    kind: str = "bandstop"
    low_hz: float = 0.0
    high_hz: float = 0.0
    order: int = 0
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        sections = np.asarray(self.sections, dtype=np.float64)
        if sections.ndim != 2 or sections.shape[1] != 5:
            raise ParameterError("sections must be an (n, 5) array")
        if not np.all(np.isfinite(sections)):
            raise ParameterError("filter coefficients must be finite")
        object.__setattr__(self, "sections", sections)

    def pole_magnitudes(self) -> np.ndarray:
        mags = []
        for b0, b1, b2, a1, a2 in self.sections:
            mags.extend(np.abs(np.roots([1.0, a1, a2])))
        return np.asarray(mags)

    def as_sos(self) -> np.ndarray:
        """scipy-style (n, 6) array with a0 = 1."""
        n = self.sections.shape[0]
        sos = np.empty((n, 6))
        sos[:, 0:3] = self.sections[:, 0:3]
        sos[:, 3] = 1.0
        sos[:, 4:6] = self.sections[:, 3:5]
        return sos


def identity_filter(fs: int = DEFAULT_SAMPLE_RATE) -> IirFilter:
    return IirFilter(
        sections=np.array([[1.0, 0.0, 0.0, 0.0, 0.0]]),
        kind="identity",
        low_hz=0.0,
        high_hz=0.0,
        order=0,
        sample_rate_hz=fs,
    )


def _butterworth_prototype_pairs(order: int) -> np.ndarray:
    """Upper-half-plane poles of the unit analog low-pass prototype."""
    k = np.arange(1, order // 2 + 1)
    theta = np.pi * (2 * k + order - 1) / (2.0 * order)
    return np.exp(1j * theta)


def _prewarp(f_hz: float, fs: int) -> float:
    return 2.0 * fs * np.tan(np.pi * f_hz / fs)


def _bilinear_pole(s: complex, fs: int) -> complex:
    fs2 = 2.0 * fs
    return (fs2 + s) / (fs2 - s)


def design_bandstop(low_hz: float, high_hz: float, order: int, fs: int) -> IirFilter:
    """Butterworth band-stop between low_hz and high_hz (-3 dB edges).

    low_hz == 0 degenerates to a high-pass at high_hz; high_hz == fs/2 to a
    low-pass at low_hz, both of the same prototype order. Realized through
    the analog prototype, band transform, and bilinear transform with
    pre-warped edges; sections are paired by ascending pole magnitude.
    """
    nyq = fs / 2.0
    if not (0 <= low_hz < high_hz <= nyq):
        raise ParameterError(
            f"band edges must satisfy 0 <= low < high <= fs/2, got "
            f"({low_hz}, {high_hz}) at fs={fs}"
        )
    if order < 2 or order % 2 != 0:
        raise ParameterError("filter order must be even and >= 2")
    if low_hz == 0.0 and high_hz == nyq:
        raise ParameterError("stop band covers the entire spectrum")

    proto = _butterworth_prototype_pairs(order)
    fs2 = 2.0 * fs

    if low_hz == 0.0:
        kind = "highpass"
        wc = _prewarp(high_hz, fs)
        analog_pole_pairs = [wc / p for p in proto]
        analog_zero = 0.0 + 0.0j
        realized_order = order
    elif high_hz == nyq:
        kind = "lowpass"
        wc = _prewarp(low_hz, fs)
        analog_pole_pairs = [wc * p for p in proto]
        analog_zero = None  # zeros at infinity -> z = -1 after bilinear
        realized_order = order
    else:
        kind = "bandstop"
        w1 = _prewarp(low_hz, fs)
        w2 = _prewarp(high_hz, fs)
        w0 = np.sqrt(w1 * w2)
        bw = w2 - w1
        analog_pole_pairs = []
        for p in proto:
            half = bw / (2.0 * p)
            root = np.sqrt(half * half - w0 * w0)
            analog_pole_pairs.extend([half + root, half - root])
        analog_zero = 1j * w0
        realized_order = 2 * order

    digital_poles = [_bilinear_pole(s, fs) for s in analog_pole_pairs]
    if analog_zero is None:
        zero_d = -1.0 + 0.0j
    else:
        zero_d = _bilinear_pole(analog_zero, fs)
    # One conjugate zero pair shared by every section.
    b_section = np.array([1.0, -2.0 * zero_d.real, abs(zero_d) ** 2])

    # Overall gain: the analog gain is 1 for all three kinds; accumulate the
    # bilinear gain factor one conjugate pair at a time to stay well-scaled
    # at high order. The numerator per pair depends on where the analog
    # zeros sit (infinity for low-pass, 0 for high-pass, +-j w0 for stop).
    gain = 1.0
    for s_pole in analog_pole_pairs:
        den = abs((fs2 - s_pole) * (fs2 - np.conj(s_pole)))
        if kind == "lowpass":
            num = abs(s_pole * np.conj(s_pole))  # = wc^2 per pair
        elif kind == "highpass":
            num = fs2 * fs2
        else:
            num = abs((fs2 - analog_zero) * (fs2 + analog_zero))
        gain *= num / den

    order_idx = np.argsort([abs(p) for p in digital_poles])
    sections = np.zeros((len(digital_poles), 5))
    for row, i in enumerate(order_idx):
        d = digital_poles[i]
        sections[row, 0:3] = b_section
        sections[row, 3] = -2.0 * d.real
        sections[row, 4] = abs(d) ** 2
    sections[0, 0:3] *= gain

    filt = IirFilter(
        sections=sections,
        kind=kind,
        low_hz=float(low_hz),
        high_hz=float(high_hz),
        order=realized_order,
        sample_rate_hz=fs,
    )
    mags = filt.pole_magnitudes()
    if np.any(mags >= 1.0 - 1e-9):
        raise ParameterError(
            f"designed filter is not stable (max |pole| = {mags.max():.12f})"
        )
    return filt


def apply_filter(filt: IirFilter, wave: Waveform) -> Waveform:
    """Causal filtering through the section cascade with zero initial state."""
    if filt.sample_rate_hz != wave.sample_rate_hz:
        raise ParameterError(
            f"filter designed for {filt.sample_rate_hz} Hz cannot be applied "
            f"to a {wave.sample_rate_hz} Hz waveform"
        )
    if len(wave.samples) == 0:
        return wave
    y = _sosfilt(filt.as_sos(), wave.samples.astype(np.float64))
    return Waveform(samples=y.astype(np.float32), sample_rate_hz=wave.sample_rate_hz)


def freq_response(filt: IirFilter, f_hz: float) -> float:
    """Cascade magnitude response at f_hz, in dB (floored at -400)."""
    fs = filt.sample_rate_hz
    if not (0 <= f_hz <= fs / 2.0):
        raise ParameterError(f"frequency {f_hz} outside [0, fs/2]")
    w = 2.0 * np.pi * f_hz / fs
    z1 = np.exp(-1j * w)
    z2 = z1 * z1
    h = 1.0 + 0.0j
    for b0, b1, b2, a1, a2 in filt.sections:
        h *= (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2)
    mag = abs(h)
    if mag <= 1e-20:
        return DB_FLOOR
    return float(max(20.0 * np.log10(mag), DB_FLOOR))
