"""Band-stop probing: filter a trial subset band by band, re-score with a
trained model, and report per-band EERs and score histograms."""

from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ProtocolSet
from .dsp import apply_filter, design_bandstop
from .errors import ParameterError, UnsupportedFrontendError
from .evaluate import (
    EerResult,
    Histogram,
    ScoreSet,
    compute_eer,
    score_histogram,
    score_trials,
    write_histogram_csv,
)
from .models import score_from_logits

# stopbands studied by the probing analysis, in Hz
DEFAULT_STOPBANDS = (
    (0.0, 100.0),
    (0.0, 800.0),
    (800.0, 2400.0),
    (2400.0, 4000.0),
    (4000.0, 5600.0),
    (5600.0, 7200.0),
    (7200.0, 8000.0),
)


@dataclass(frozen=True)
class ProbeConfig:
    stopbands: tuple = DEFAULT_STOPBANDS
    order: int = 10
    subset_size: int = 0  # 0 = use the whole protocol
    seed: int = 0
    n_bins: int = 50

    def __post_init__(self):
        if self.order < 2 or self.order % 2 != 0:
            raise ParameterError("filter order must be even and >= 2")
        for low, high in self.stopbands:
            if not (0 <= low < high):
                raise ParameterError(f"bad stopband ({low}, {high})")


@dataclass(frozen=True)
class BandResult:
    band: tuple  # (low_hz, high_hz); None for the unfiltered baseline
    eer: EerResult
    histogram: Histogram
    scores: ScoreSet


@dataclass(frozen=True)
class ProbeReport:
    baseline: BandResult
    bands: "OrderedDict[tuple, BandResult]"


def subset_trials(protocol: ProtocolSet, n: int, seed: int) -> ProtocolSet:
    """Seeded stratified sample without replacement, order preserved.

    Class counts follow largest-remainder quotas, so each class lands
    within one trial of its proportional share.
    """
    records = list(protocol)
    if n > len(records):
        raise ParameterError(f"subset size {n} exceeds protocol size {len(records)}")
    if n < 1:
        raise ParameterError("subset size must be >= 1")
    if n == len(records):
        return protocol

    by_label = OrderedDict()
    for idx, rec in enumerate(records):
        by_label.setdefault(rec.label, []).append(idx)
    total = len(records)
    quotas = {
        label: n * len(idxs) / total for label, idxs in by_label.items()
    }
    counts = {label: int(np.floor(q)) for label, q in quotas.items()}
    leftover = n - sum(counts.values())
    for label in sorted(
        quotas, key=lambda lab: (-(quotas[lab] - counts[lab]), lab)
    ):
        if leftover == 0:
            break
        counts[label] += 1
        leftover -= 1

    rng = np.random.default_rng(seed)
    chosen = []
    for label, idxs in by_label.items():
        take = counts[label]
        if take > 0:
            chosen.extend(rng.choice(idxs, size=take, replace=False))
    chosen.sort()
    return ProtocolSet(
        records=tuple(records[i] for i in chosen), subset=protocol.subset
    )


def run_probe(model, protocol: ProtocolSet, cfg: ProbeConfig = ProbeConfig()) -> ProbeReport:
    """Baseline scoring plus one filtered re-scoring pass per stopband."""
    frontend = model.frontend
    if not hasattr(frontend, "wave_for_record"):
        raise UnsupportedFrontendError(
            "probing needs waveform access; this front end reads precomputed "
            "feature files. Band-stop filter the audio and re-export features "
            "with the exporter tool, then evaluate the new manifest instead."
        )
    subset = protocol
    if cfg.subset_size:
        subset = subset_trials(protocol, cfg.subset_size, cfg.seed)

    base_scores = score_trials(model, subset)
    baseline = BandResult(
        band=None,
        eer=compute_eer(base_scores, subset),
        histogram=score_histogram(base_scores, subset, cfg.n_bins),
        scores=base_scores,
    )

    bands = OrderedDict()
    filters = {}
    for band in cfg.stopbands:
        scores = OrderedDict()
        for rec in subset:
            wave = frontend.wave_for_record(rec)
            key = (band, wave.sample_rate_hz)
            if key not in filters:
                filters[key] = design_bandstop(
                    band[0], band[1], cfg.order, wave.sample_rate_hz
                )
            filtered = apply_filter(filters[key], wave)
            feats = frontend.features_from_wave(filtered)
            logits = model.graph_logits(feats.frames, train=False)
            scores[rec.trial_id] = score_from_logits(logits.data)
        score_set = ScoreSet(scores=scores, provenance=base_scores.provenance)
        bands[band] = BandResult(
            band=band,
            eer=compute_eer(score_set, subset),
            histogram=score_histogram(score_set, subset, cfg.n_bins),
            scores=score_set,
        )
    return ProbeReport(baseline=baseline, bands=bands)


def write_probe_report(out_dir, report: ProbeReport) -> None:
    """CSV bundle: bands.csv plus one histogram CSV per condition."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "bands.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("band_low,band_high,eer,threshold\n")
        fh.write(
            f",,{report.baseline.eer.eer:.6f},{report.baseline.eer.threshold:.6f}\n"
        )
        for (low, high), result in report.bands.items():
            fh.write(
                f"{low:g},{high:g},{result.eer.eer:.6f},"
                f"{result.eer.threshold:.6f}\n"
            )
    write_histogram_csv(out_dir / "hist_baseline.csv", report.baseline.histogram)
    for (low, high), result in report.bands.items():
        write_histogram_csv(
            out_dir / f"hist_{low:g}_{high:g}.csv", result.histogram
        )
