"""Run a pretrained speech encoder over WAV trials and dump per-layer
hidden states as CMFEAT files plus a manifest.

Model identifiers:
  * any HuggingFace repo id or local checkpoint directory (loaded with
    AutoModel.from_pretrained), or
  * ``random-wav2vec2:hidden=1024,layers=24[,heads=16][,ff=4096][,seed=0]``
    for a randomly initialized encoder with the standard waveform stride
    (intended for smoke tests and pipeline plumbing without downloads).

Exports run in inference mode, so two runs over the same inputs are
byte-identical. Inputs must be mono 16 kHz WAV; per-utterance mean/variance
normalization is applied before the encoder, matching the usual feature
extractor for these models.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile

from .cmfeat import (
    CmfeatError,
    read_cmfeat_header,
    read_manifest,
    write_cmfeat,
    write_manifest,
)

EXPECTED_SAMPLE_RATE = 16000


class ExportError(Exception):
    pass


@dataclass
class ExportSpec:
    model_id: str
    wav_paths: list
    out_dir: str
    layers: str = "all"  # "all" or comma-separated 1-based block indices


def _parse_random_spec(spec_text):
    options = {"hidden": 768, "layers": 12, "heads": 12, "ff": 3072, "seed": 0}
    body = spec_text.split(":", 1)[1] if ":" in spec_text else ""
    for chunk in filter(None, body.split(",")):
        key, _, value = chunk.partition("=")
        if key not in options:
            raise ExportError(f"unknown random-model option {key!r}")
        options[key] = int(value)
    return options


def load_model(model_id: str):
    """Returns (torch model in eval mode, hidden size, block count)."""
    if model_id.startswith("random-wav2vec2"):
        from transformers import Wav2Vec2Config, Wav2Vec2Model

        opts = _parse_random_spec(model_id)
        config = Wav2Vec2Config(
            hidden_size=opts["hidden"],
            num_hidden_layers=opts["layers"],
            num_attention_heads=opts["heads"],
            intermediate_size=opts["ff"],
        )
        torch.manual_seed(opts["seed"])
        model = Wav2Vec2Model(config)
    else:
        from transformers import AutoModel

        try:
            model = AutoModel.from_pretrained(model_id)
        except Exception as exc:
            raise ExportError(f"cannot load model {model_id!r}: {exc}") from exc
    model.eval()
    config = model.config
    return model, int(config.hidden_size), int(config.num_hidden_layers)


def _select_layers(layers: str, n_blocks: int):
    if layers == "all":
        return list(range(1, n_blocks + 1))
    try:
        indices = [int(x) for x in layers.split(",") if x.strip()]
    except ValueError:
        raise ExportError(f"bad layer list {layers!r}")
    if not indices:
        raise ExportError("empty layer selection")
    for i in indices:
        if not (1 <= i <= n_blocks):
            raise ExportError(
                f"layer {i} out of range (model has {n_blocks} blocks)"
            )
    return indices


def _read_wav_16k(path):
    try:
        rate, samples = wavfile.read(path)
    except Exception as exc:
        raise ExportError(f"{path}: cannot read WAV ({exc})") from exc
    if samples.ndim != 1:
        raise ExportError(f"{path}: expected mono audio")
    if rate != EXPECTED_SAMPLE_RATE:
        raise ExportError(
            f"{path}: expected {EXPECTED_SAMPLE_RATE} Hz, got {rate}"
        )
    if samples.dtype == np.int16:
        samples = samples.astype(np.float32) / 32768.0
    elif samples.dtype != np.float32:
        raise ExportError(f"{path}: unsupported sample format {samples.dtype}")
    return samples.astype(np.float32)


def hidden_states_for_wave(model, samples: np.ndarray, layer_indices):
    """(K, N, D) float32 stack of the selected transformer block outputs."""
    x = samples - samples.mean()
    std = x.std()
    if std > 0:
        x = x / std
    batch = torch.from_numpy(x.astype(np.float32)).unsqueeze(0)
    with torch.no_grad():
        out = model(batch, output_hidden_states=True)
    stack = [out.hidden_states[i][0] for i in layer_indices]
    return torch.stack(stack).numpy().astype(np.float32)


def export_features(spec: ExportSpec):
    """Write one CMFEAT per trial plus manifest.tsv; returns the entries."""
    model, dim, n_blocks = load_model(spec.model_id)
    layer_indices = _select_layers(spec.layers, n_blocks)
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for wav_path in spec.wav_paths:
        wav_path = Path(wav_path)
        trial_id = wav_path.stem
        samples = _read_wav_16k(wav_path)
        layers = hidden_states_for_wave(model, samples, layer_indices)
        if layers.shape[2] != dim:
            raise ExportError(
                f"{trial_id}: model produced dim {layers.shape[2]}, "
                f"config declares {dim}"
            )
        rel = f"{trial_id}.cmfeat"
        write_cmfeat(out_dir / rel, layers)
        entries.append((trial_id, rel))
    write_manifest(out_dir / "manifest.tsv", entries)
    return entries


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


@dataclass
class VerifyReport:
    issues: list = field(default_factory=list)
    n_checked: int = 0

    def ok(self):
        return not self.issues


def _protocol_trial_ids(path):
    """Trial ids from a canonical protocol TSV or a plain one-per-line list."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        return []
    header = lines[0].split("\t")
    if header and header[0] == "trial_id":
        return [ln.split("\t")[0] for ln in lines[1:] if ln.strip()]
    return [ln.strip() for ln in lines if ln.strip()]


def verify_manifest(manifest_path, protocol_path=None) -> VerifyReport:
    """Report missing trials, unreadable files, and K/D disagreements.

    Never raises on bad feature files; every problem lands in the report.
    """
    report = VerifyReport()
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    try:
        entries = read_manifest(manifest_path)
    except CmfeatError as exc:
        report.issues.append(str(exc))
        return report

    declared = None
    listed = set()
    for trial_id, rel in entries:
        listed.add(trial_id)
        path = root / rel
        report.n_checked += 1
        if not path.exists():
            report.issues.append(f"{trial_id}: file missing ({rel})")
            continue
        try:
            k, n, d = read_cmfeat_header(path)
            from .cmfeat import read_cmfeat

            read_cmfeat(path)  # full CRC check
        except CmfeatError as exc:
            report.issues.append(f"{trial_id}: {exc}")
            continue
        if n < 1:
            report.issues.append(f"{trial_id}: empty feature sequence")
        if declared is None:
            declared = (k, d)
        elif (k, d) != declared:
            report.issues.append(
                f"{trial_id}: K/D ({k},{d}) disagree with first file {declared}"
            )
    if protocol_path is not None:
        for trial_id in _protocol_trial_ids(protocol_path):
            if trial_id not in listed:
                report.issues.append(f"{trial_id}: not in manifest")
    return report
