"""Score production and detection metrics: EER, normalized min t-DCF,
decomposed EER by attack/codec, and score histograms.

EER convention (normative for this package): sweep the sorted unique scores
plus one sentinel above the maximum; with Pmiss(t) = fraction of bona fide
scores below t and Pfa(t) = fraction of spoof scores at or above t, the EER
is the minimum over the sweep of (Pmiss + Pfa) / 2 and the threshold is the
first point attaining it. This keeps EER inside [0, 0.5] for every input
and makes min t-DCF with equal unit costs exactly twice the EER.
"""

from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import BONAFIDE, SPOOF
from .errors import MetricError, MissingTrialError, ParameterError, ParseError

SCORE_DECIMALS = 6


@dataclass
class ScoreSet:
    scores: "OrderedDict[str, float]"
    provenance: str = ""

    def __post_init__(self):
        for trial_id, value in self.scores.items():
            if not np.isfinite(value):
                raise ParameterError(f"non-finite score for {trial_id}")

    def __len__(self):
        return len(self.scores)

    def __getitem__(self, trial_id):
        return self.scores[trial_id]

    def __contains__(self, trial_id):
        return trial_id in self.scores


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    n_bonafide: int
    n_spoof: int


@dataclass(frozen=True)
class TdcfParams:
    """Effective per-class costs (cost x prior x ASV operating point already
    folded in, supplied via configuration)."""

    c_miss: float = 1.0
    c_fa: float = 10.0

    def __post_init__(self):
        if not (self.c_miss > 0 and np.isfinite(self.c_miss)):
            raise ParameterError("c_miss must be positive and finite")
        if not (self.c_fa > 0 and np.isfinite(self.c_fa)):
            raise ParameterError("c_fa must be positive and finite")


def write_scores(path, score_set: ScoreSet) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for trial_id, value in score_set.scores.items():
            fh.write(f"{trial_id}\t{value:.{SCORE_DECIMALS}f}\n")


def read_scores(path) -> ScoreSet:
    scores = OrderedDict()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 2:
                raise ParseError("expected 'trial_id<TAB>score'", line_no)
            trial_id, text = fields
            if trial_id in scores:
                raise ParseError(f"duplicate trial_id {trial_id!r}", line_no)
            try:
                scores[trial_id] = float(text)
            except ValueError:
                raise ParseError(f"bad score {text!r}", line_no)
    return ScoreSet(scores=scores, provenance=str(path))


def score_trials(model, protocol, jobs: int = 1) -> ScoreSet:
    """One score per trial, each computed on the whole unsliced input."""
    missing = model.missing_trials(protocol)
    if missing:
        raise MissingTrialError(missing)
    records = list(protocol)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(model.score_record, records))
    else:
        values = [model.score_record(rec) for rec in records]
    fp = model.fingerprint()
    provenance = f"{fp['frontend_kind']}+{fp['backend_kind']}|seed={fp['seed']}"
    return ScoreSet(
        scores=OrderedDict(
            (rec.trial_id, value) for rec, value in zip(records, values)
        ),
        provenance=provenance,
    )


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _split_scores(score_set, records):
    bona, spoof = [], []
    missing = []
    for rec in records:
        if rec.trial_id not in score_set:
            missing.append(rec.trial_id)
            continue
        (bona if rec.label == BONAFIDE else spoof).append(
            score_set[rec.trial_id]
        )
    if missing:
        raise MissingTrialError(missing)
    return np.asarray(bona, dtype=np.float64), np.asarray(spoof, dtype=np.float64)


def _sweep(bona, spoof):
    """Threshold grid plus Pmiss/Pfa arrays over it."""
    grid = np.unique(np.concatenate([bona, spoof]))
    grid = np.append(grid, grid[-1] + 1.0)  # sentinel above every score
    bona_sorted = np.sort(bona)
    spoof_sorted = np.sort(spoof)
    p_miss = np.searchsorted(bona_sorted, grid, side="left") / bona.size
    p_fa = (
        spoof.size - np.searchsorted(spoof_sorted, grid, side="left")
    ) / spoof.size
    return grid, p_miss, p_fa


def compute_eer(score_set: ScoreSet, protocol) -> EerResult:
    bona, spoof = _split_scores(score_set, protocol)
    if bona.size < 1 or spoof.size < 1:
        raise MetricError(
            f"EER needs both classes (got {bona.size} bona fide, "
            f"{spoof.size} spoof)"
        )
    grid, p_miss, p_fa = _sweep(bona, spoof)
    mid = (p_miss + p_fa) / 2.0
    best = int(np.argmin(mid))
    return EerResult(
        eer=float(mid[best]),
        threshold=float(grid[best]),
        n_bonafide=int(bona.size),
        n_spoof=int(spoof.size),
    )


def min_tdcf(score_set: ScoreSet, protocol, params: TdcfParams = TdcfParams()) -> float:
    bona, spoof = _split_scores(score_set, protocol)
    if bona.size < 1 or spoof.size < 1:
        raise MetricError("min t-DCF needs both classes")
    _, p_miss, p_fa = _sweep(bona, spoof)
    cost = params.c_miss * p_miss + params.c_fa * p_fa
    return float(np.min(cost) / min(params.c_miss, params.c_fa))


def decompose_eer(score_set: ScoreSet, protocol, by: str):
    """Per-attack EER (each attack pooled with all bona fide trials) or
    per-codec EER (both classes restricted to the codec)."""
    if by not in ("attack", "codec"):
        raise ParameterError("decompose_eer: `by` must be 'attack' or 'codec'")
    records = list(protocol)
    results = OrderedDict()
    if by == "attack":
        attacks = sorted(
            {r.attack_id for r in records if r.attack_id is not None}
        )
        if not attacks:
            raise MetricError("no attack tags present in the protocol")
        bona_records = [r for r in records if r.label == BONAFIDE]
        for attack in attacks:
            pool = bona_records + [
                r for r in records if r.attack_id == attack and r.label == SPOOF
            ]
            results[attack] = compute_eer(score_set, pool)
    else:
        codecs = sorted({r.codec_id for r in records if r.codec_id is not None})
        if not codecs:
            raise MetricError("no codec tags present in the protocol")
        for codec in codecs:
            pool = [r for r in records if r.codec_id == codec]
            results[codec] = compute_eer(score_set, pool)
    return results


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray  # n_bins + 1 shared bin edges
    bonafide: np.ndarray
    spoof: np.ndarray


def score_histogram(score_set: ScoreSet, protocol, n_bins: int = 50) -> Histogram:
    """Per-class counts over shared bin edges spanning all scores."""
    if n_bins < 1:
        raise ParameterError("n_bins must be >= 1")
    bona, spoof = _split_scores(score_set, protocol)
    merged = np.concatenate([bona, spoof])
    if merged.size == 0:
        raise MetricError("empty score set")
    lo, hi = float(merged.min()), float(merged.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts_b, edges = np.histogram(bona, bins=n_bins, range=(lo, hi))
    counts_s, _ = np.histogram(spoof, bins=n_bins, range=(lo, hi))
    return Histogram(edges=edges, bonafide=counts_b, spoof=counts_s)


def write_histogram_csv(path, hist: Histogram) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("edges," + ",".join(f"{e:.6f}" for e in hist.edges) + "\n")
        fh.write("bonafide," + ",".join(str(c) for c in hist.bonafide) + "\n")
        fh.write("spoof," + ",".join(str(c) for c in hist.spoof) + "\n")
