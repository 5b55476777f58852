"""Protocol ingestion, 4 s training segmentation, deterministic batching,
and the synthetic corpus generator used for desk-scale experiments.

Canonical protocol TSV: header ``trial_id<TAB>label<TAB>attack<TAB>codec<TAB>path``
with ``-`` for absent fields, UTF-8, LF line endings.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import IirFilter, Waveform, apply_filter, write_wav
from .errors import DuplicateTrialError, ParameterError, ParseError

BONAFIDE = "bonafide"
SPOOF = "spoof"
LABEL_INDEX = {BONAFIDE: 0, SPOOF: 1}
MIN_TAIL_S = 0.5
CANONICAL_HEADER = ["trial_id", "label", "attack", "codec", "path"]
SUBSETS = ("train", "dev", "eval")


@dataclass(frozen=True)
class TrialRecord:
    trial_id: str
    label: str
    attack_id: str = None
    codec_id: str = None
    audio_path: str = None

    def __post_init__(self):
        if not self.trial_id:
            raise ParseError("empty trial_id")
        if self.label not in LABEL_INDEX:
            raise ParseError(f"unknown label {self.label!r}")
        if self.label == BONAFIDE and self.attack_id is not None:
            raise ParseError(
                f"{self.trial_id}: bona fide trials cannot carry an attack tag"
            )

    @property
    def label_index(self) -> int:
        return LABEL_INDEX[self.label]


@dataclass(frozen=True)
class ProtocolSet:
    records: tuple
    subset: str = None

    def __post_init__(self):
        records = tuple(self.records)
        seen = set()
        for rec in records:
            if rec.trial_id in seen:
                raise DuplicateTrialError(f"duplicate trial_id {rec.trial_id!r}")
            seen.add(rec.trial_id)
        if self.subset is not None and self.subset not in SUBSETS:
            raise ParameterError(f"subset must be one of {SUBSETS}")
        object.__setattr__(self, "records", records)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self):
        return {rec.trial_id: rec for rec in self.records}

    def count(self, label) -> int:
        return sum(1 for rec in self.records if rec.label == label)


def _dash_to_none(value):
    return None if value == "-" else value


def _none_to_dash(value):
    return "-" if value is None else value


def parse_protocol(path, format="canonical_tsv", subset=None) -> ProtocolSet:
    """Parse a protocol file.

    asvspoof_la grammar: five whitespace-separated fields
    ``speaker trial_id - attack key`` with key in {bonafide, spoof}.
    """
    if format not in ("asvspoof_la", "canonical_tsv"):
        raise ParameterError(f"unknown protocol format {format!r}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    records = []
    if format == "asvspoof_la":
        for line_no, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 5:
                raise ParseError(
                    f"expected 5 fields, got {len(fields)}", line_no
                )
            _speaker, trial_id, _unused, attack, key = fields
            if key not in LABEL_INDEX:
                raise ParseError(f"unknown key {key!r}", line_no)
            try:
                records.append(
                    TrialRecord(
                        trial_id=trial_id,
                        label=key,
                        attack_id=_dash_to_none(attack),
                    )
                )
            except ParseError as exc:
                raise ParseError(str(exc), line_no) from exc
    else:
        if not lines or lines[0].split("\t") != CANONICAL_HEADER:
            raise ParseError(
                "canonical protocol must start with "
                + "\\t".join(CANONICAL_HEADER),
                1,
            )
        for line_no, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise ParseError(
                    f"expected 5 tab-separated fields, got {len(fields)}",
                    line_no,
                )
            trial_id, label, attack, codec, audio = fields
            if label not in LABEL_INDEX:
                raise ParseError(f"unknown label {label!r}", line_no)
            try:
                records.append(
                    TrialRecord(
                        trial_id=trial_id,
                        label=label,
                        attack_id=_dash_to_none(attack),
                        codec_id=_dash_to_none(codec),
                        audio_path=_dash_to_none(audio),
                    )
                )
            except ParseError as exc:
                raise ParseError(str(exc), line_no) from exc
    try:
        return ProtocolSet(records=tuple(records), subset=subset)
    except DuplicateTrialError:
        raise


def write_protocol(path, protocol: ProtocolSet) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(CANONICAL_HEADER) + "\n")
        for rec in protocol:
            fh.write(
                "\t".join(
                    [
                        rec.trial_id,
                        rec.label,
                        _none_to_dash(rec.attack_id),
                        _none_to_dash(rec.codec_id),
                        _none_to_dash(rec.audio_path),
                    ]
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------


def slice_bounds(total: int, max_len: int, min_tail: int):
    """Contiguous non-overlapping [start, end) chunks of at most max_len.

    A final chunk shorter than min_tail is merged into the previous one
    (when there is one), so nothing is ever dropped.
    """
    if total <= 0:
        return []
    bounds = [(s, min(s + max_len, total)) for s in range(0, total, max_len)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < min_tail:
        last = bounds.pop()
        prev = bounds.pop()
        bounds.append((prev[0], last[1]))
    return bounds


def slice_segments(wave: Waveform, max_dur_s: float = 4.0):
    """Split a trial into training segments of at most max_dur_s seconds."""
    if len(wave.samples) == 0:
        raise ParameterError("cannot slice an empty waveform")
    fs = wave.sample_rate_hz
    bounds = slice_bounds(
        len(wave.samples), int(round(max_dur_s * fs)), int(round(MIN_TAIL_S * fs))
    )
    return [Waveform(wave.samples[lo:hi], fs) for lo, hi in bounds]


def slice_frames(frames: np.ndarray, frame_shift_s: float, max_dur_s: float = 4.0):
    """Frame-level analogue of slice_segments for precomputed features."""
    n = frames.shape[-2]
    max_len = max(1, int(round(max_dur_s / frame_shift_s)))
    min_tail = max(1, int(round(MIN_TAIL_S / frame_shift_s)))
    return [frames[..., lo:hi, :] for lo, hi in slice_bounds(n, max_len, min_tail)]


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SegmentItem:
    trial_id: str
    features: np.ndarray  # (N, D) or (K, N, D)
    label: int


@dataclass(frozen=True)
class SegmentBatch:
    features: np.ndarray  # zero-padded along the frame axis
    valid_len: np.ndarray
    labels: np.ndarray
    trial_ids: tuple

    def __len__(self):
        return len(self.trial_ids)


def make_batches(items, batch_size: int, seed: int, epoch: int):
    """Seeded shuffle keyed on (seed, epoch), then fixed-size padded batches."""
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    items = list(items)
    rng = np.random.default_rng([int(seed), int(epoch)])
    order = rng.permutation(len(items))
    batches = []
    for start in range(0, len(items), batch_size):
        chunk = [items[i] for i in order[start : start + batch_size]]
        max_n = max(item.features.shape[-2] for item in chunk)
        shape0 = chunk[0].features.shape
        padded_shape = (len(chunk),) + shape0[:-2] + (max_n, shape0[-1])
        padded = np.zeros(padded_shape, dtype=np.float32)
        valid = np.zeros(len(chunk), dtype=np.int64)
        labels = np.zeros(len(chunk), dtype=np.int64)
        for i, item in enumerate(chunk):
            n = item.features.shape[-2]
            padded[i, ..., :n, :] = item.features
            valid[i] = n
            labels[i] = item.label
        batches.append(
            SegmentBatch(
                features=padded,
                valid_len=valid,
                labels=labels,
                trial_ids=tuple(item.trial_id for item in chunk),
            )
        )
    return batches


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

SYNTH_ATTACK_ID = "SYN"
SYNTH_FS = 16000
FORMANT_RANGE_HZ = (300.0, 2300.0)
FORMANT_BW_HZ = (80.0, 200.0)
N_FORMANTS = 3
ARTIFACT_DB = -20.0
ARTIFACT_SPREAD_HZ = 30.0
ARTIFACT_EDGE_MARGIN_HZ = 60.0
FADE_S = 0.05
TARGET_RMS = 0.05


def _pink_noise(rng, n):
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0)
    spectrum[1:] /= np.sqrt(freqs[1:] / freqs[1])
    spectrum[0] = 0.0
    return np.fft.irfft(spectrum, n)


def _resonator(freq_hz, bw_hz, fs):
    r = np.exp(-np.pi * bw_hz / fs)
    theta = 2.0 * np.pi * freq_hz / fs
    section = np.array([[1.0 - r, 0.0, 0.0, -2.0 * r * np.cos(theta), r * r]])
    return IirFilter(sections=section, kind="resonator", sample_rate_hz=fs)


def _base_trial(rng, fs):
    """Filtered-noise pseudo-speech: pink noise through random resonances."""
    dur = rng.uniform(2.5, 5.0)
    n = int(round(dur * fs))
    x = _pink_noise(rng, n)
    for _ in range(N_FORMANTS):
        freq = rng.uniform(*FORMANT_RANGE_HZ)
        bw = rng.uniform(*FORMANT_BW_HZ)
        wave = apply_filter(
            _resonator(freq, bw, fs),
            Waveform(x.astype(np.float32), fs),
        )
        x = wave.samples.astype(np.float64)
    x *= TARGET_RMS / (np.sqrt(np.mean(x * x)) + 1e-12)
    peak = np.max(np.abs(x))
    if peak > 0.95:
        x *= 0.95 / peak
    return x


def _artifact(rng, n, fs, band):
    """Band-limited tone cluster at -20 dB relative to the base signal RMS."""
    low, high = band
    center = rng.uniform(
        low + ARTIFACT_EDGE_MARGIN_HZ, high - ARTIFACT_EDGE_MARGIN_HZ
    )
    t = np.arange(n) / fs
    tones = np.zeros(n)
    for offset in (-ARTIFACT_SPREAD_HZ, 0.0, ARTIFACT_SPREAD_HZ):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        tones += np.cos(2.0 * np.pi * (center + offset) * t + phase)
    fade = int(round(FADE_S * fs))
    envelope = np.ones(n)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
    envelope[:fade] = ramp
    envelope[-fade:] = ramp[::-1]
    return tones * envelope


def generate_synthetic_dataset(seed, n_per_class, artifact_band, out_dir,
                               fs=SYNTH_FS) -> ProtocolSet:
    """Write a paired bonafide/spoof corpus plus canonical protocol files.

    Spoof trials reuse their pair's base signal and add a narrowband tone
    cluster inside artifact_band at -20 dB relative RMS. Trials are split
    60/20/20 by pair into protocol_{train,dev,eval}.tsv; protocol_all.tsv
    holds everything. Deterministic per seed.
    """
    low, high = artifact_band
    if not (0.0 < low < high < fs / 2.0):
        raise ParameterError(f"artifact band {artifact_band} outside (0, fs/2)")
    if n_per_class < 1:
        raise ParameterError("n_per_class must be >= 1")
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wavs"
    os.makedirs(wav_dir, exist_ok=True)

    rng = np.random.default_rng(seed)
    records = []
    width = max(4, len(str(n_per_class)))
    for i in range(n_per_class):
        base = _base_trial(rng, fs)
        artifact = _artifact(rng, len(base), fs, artifact_band)
        base_rms = np.sqrt(np.mean(base * base))
        gain = base_rms * 10.0 ** (ARTIFACT_DB / 20.0)
        spoofed = base + artifact * gain / (np.sqrt(np.mean(artifact**2)) + 1e-12)

        bona_id = f"SYN_B_{i:0{width}d}"
        spoof_id = f"SYN_S_{i:0{width}d}"
        for trial_id, samples, label, attack in (
            (bona_id, base, BONAFIDE, None),
            (spoof_id, spoofed, SPOOF, SYNTH_ATTACK_ID),
        ):
            rel = f"wavs/{trial_id}.wav"
            write_wav(
                wav_dir / f"{trial_id}.wav",
                Waveform(samples.astype(np.float32), fs),
            )
            records.append(
                TrialRecord(
                    trial_id=trial_id,
                    label=label,
                    attack_id=attack,
                    audio_path=rel,
                )
            )

    n_train = int(round(0.6 * n_per_class))
    n_dev = int(round(0.2 * n_per_class))
    splits = {"train": [], "dev": [], "eval": []}
    for i in range(n_per_class):
        if i < n_train:
            key = "train"
        elif i < n_train + n_dev:
            key = "dev"
        else:
            key = "eval"
        splits[key].extend(records[2 * i : 2 * i + 2])

    combined = ProtocolSet(records=tuple(records))
    write_protocol(out_dir / "protocol_all.tsv", combined)
    for key in SUBSETS:
        write_protocol(
            out_dir / f"protocol_{key}.tsv",
            ProtocolSet(records=tuple(splits[key]), subset=key),
        )
    return combined
