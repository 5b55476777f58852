"""Front ends: LFCC, externally supplied multi-layer features (CMFEAT files),
the softmax-weighted layer combiner, and the trainable projection layer.

CMFEAT container (bit-exact contract):
    magic "CMF1" | u32 version=1 | u32 K | u32 N | u32 D
    K*N*D float32 little-endian, layer-major then row-major
    u32 CRC32 of the float payload bytes
Manifest: UTF-8 TSV with header ``trial_id<TAB>path``; paths are relative to
the manifest's directory unless a root is given.
"""

import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .dsp import FeatureSequence, LfccConfig, Waveform, extract_lfcc, read_wav
from .errors import (
    ConfigError,
    CorruptFileError,
    MissingTrialError,
    ParseError,
    ShapeError,
    UnsupportedFrontendError,
)

CMFEAT_MAGIC = b"CMF1"
CMFEAT_VERSION = 1
SSL_FRAME_SHIFT_S = 320.0 / 16000.0  # encoder stride of the feature models
FRONTEND_KINDS = ("lfcc", "external", "external_weighted")


@dataclass(frozen=True)
class MultiLayerFeatures:
    """K layer matrices sharing an (N, D) shape."""

    layers: np.ndarray  # (K, N, D) float32

    def __post_init__(self):
        arr = np.asarray(self.layers, dtype=np.float32)
        if arr.ndim != 3:
            raise ShapeError("multi-layer features must be (K, N, D)")
        if min(arr.shape) < 1:
            raise ShapeError("K, N, D must all be >= 1")
        if not np.all(np.isfinite(arr)):
            raise ShapeError("features contain non-finite entries")
        object.__setattr__(self, "layers", arr)

    @property
    def k(self):
        return self.layers.shape[0]

    @property
    def n_frames(self):
        return self.layers.shape[1]

    @property
    def dim(self):
        return self.layers.shape[2]


def write_features(path, layers) -> None:
    """Write a (K, N, D) float32 array as a CMFEAT file."""
    arr = np.ascontiguousarray(np.asarray(layers, dtype="<f4"))
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeError(f"CMFEAT payload must be (K, N, D), got {arr.shape}")
    payload = arr.tobytes(order="C")
    header = CMFEAT_MAGIC + struct.pack("<IIII", CMFEAT_VERSION, *arr.shape)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


def read_features(path) -> MultiLayerFeatures:
    """Read a CMFEAT file; truncation or CRC damage yields no partial result."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 24 or blob[:4] != CMFEAT_MAGIC:
        raise CorruptFileError(f"{path}: not a CMFEAT file")
    version, k, n, d = struct.unpack("<IIII", blob[4:20])
    if version != CMFEAT_VERSION:
        raise CorruptFileError(f"{path}: unsupported CMFEAT version {version}")
    expected = 20 + 4 * k * n * d + 4
    if len(blob) != expected:
        raise CorruptFileError(
            f"{path}: size {len(blob)} != expected {expected} for "
            f"K={k} N={n} D={d}"
        )
    payload = blob[20:-4]
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise CorruptFileError(f"{path}: CRC mismatch")
    arr = np.frombuffer(payload, dtype="<f4").reshape(k, n, d)
    return MultiLayerFeatures(layers=arr.copy())


@dataclass
class FeatureManifest:
    """trial_id -> feature-file mapping plus the declared layer geometry."""

    root: Path
    paths: "OrderedDict[str, str]"
    k: int
    d: int

    def __contains__(self, trial_id):
        return trial_id in self.paths

    def path_for(self, trial_id) -> Path:
        if trial_id not in self.paths:
            raise MissingTrialError([trial_id])
        return self.root / self.paths[trial_id]


def write_manifest(path, entries) -> None:
    """entries: iterable of (trial_id, relative_path)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("trial_id\tpath\n")
        for trial_id, rel in entries:
            fh.write(f"{trial_id}\t{rel}\n")


def load_manifest(path, root=None) -> FeatureManifest:
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    paths = OrderedDict()
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split("\t") != ["trial_id", "path"]:
        raise ParseError("manifest must start with 'trial_id<TAB>path'", 1)
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(f"expected 2 tab-separated fields, got {len(fields)}", line_no)
        trial_id, rel = fields
        if trial_id in paths:
            raise ParseError(f"duplicate trial_id {trial_id!r}", line_no)
        paths[trial_id] = rel
    missing = [tid for tid, rel in paths.items() if not (root / rel).exists()]
    if missing:
        raise MissingTrialError(missing)
    if not paths:
        raise ParseError("manifest lists no trials")
    first = read_features(root / next(iter(paths.values())))
    return FeatureManifest(root=root, paths=paths, k=first.k, d=first.dim)


def load_features(manifest: FeatureManifest, trial_id) -> MultiLayerFeatures:
    feats = read_features(manifest.path_for(trial_id))
    if feats.k != manifest.k or feats.dim != manifest.d:
        raise CorruptFileError(
            f"{trial_id}: file declares K={feats.k} D={feats.dim}, manifest "
            f"declares K={manifest.k} D={manifest.d}"
        )
    return feats


# ---------------------------------------------------------------------------
# trainable pieces
# ---------------------------------------------------------------------------


def softmax_weights(raw):
    """Effective layer weights: softmax over the raw K-vector."""
    shift = ag.constant(np.max(raw.data), dtype=raw.data.dtype)
    e = ag.exp(raw - shift)
    return e / ag.sum_(e)


def combine_layers(layers, raw_weights):
    """Softmax-weighted sum over the layer axis of (K, N, D) features."""
    if isinstance(layers, MultiLayerFeatures):
        layers = layers.layers
    data = layers if isinstance(layers, ag.Tensor) else ag.constant(layers)
    k = data.data.shape[0]
    if raw_weights.data.shape != (k,):
        raise ShapeError(
            f"need {k} layer weights, got shape {raw_weights.data.shape}"
        )
    w = ag.reshape(softmax_weights(raw_weights), (k, 1, 1))
    return ag.sum_(data * w, axis=0)


def project(features, weight, bias):
    """Frame-local affine map (N, D) -> (N, P)."""
    feats = features if isinstance(features, ag.Tensor) else ag.constant(features)
    if feats.data.shape[1] != weight.data.shape[0]:
        raise ShapeError(
            f"projection expects dim {weight.data.shape[0]}, got "
            f"{feats.data.shape[1]}"
        )
    return ag.matmul(feats, weight) + bias


# ---------------------------------------------------------------------------
# front-end handles
# ---------------------------------------------------------------------------


@dataclass
class FrontendConfig:
    kind: str = "lfcc"
    lfcc: LfccConfig = field(default_factory=LfccConfig)
    audio_root: str = ""
    manifest: str = ""
    project: bool = True
    project_dim: int = 128
    seed: int = 0


class LfccFrontend:
    """Waveform-backed front end; never projects (features go in raw)."""

    kind = "lfcc"

    def __init__(self, cfg: LfccConfig = LfccConfig(), audio_root=None):
        self.cfg = cfg
        self.audio_root = Path(audio_root) if audio_root else None
        self.feature_dim = cfg.feature_dim
        self.frame_shift_s = cfg.frame_shift_ms / 1000.0

    def trainable_params(self):
        return OrderedDict()

    def features_from_wave(self, wave: Waveform) -> FeatureSequence:
        return extract_lfcc(wave, self.cfg)

    def wave_for_record(self, record) -> Waveform:
        if record.audio_path is None:
            raise MissingTrialError([record.trial_id])
        path = Path(record.audio_path)
        if self.audio_root is not None and not path.is_absolute():
            path = self.audio_root / path
        return read_wav(path)

    def base_features(self, record) -> np.ndarray:
        return self.features_from_wave(self.wave_for_record(record)).frames

    def to_graph(self, base):
        return base if isinstance(base, ag.Tensor) else ag.constant(base)

    def featurize(self, record) -> FeatureSequence:
        return self.features_from_wave(self.wave_for_record(record))

    def state_arrays(self):
        return OrderedDict()

    def load_state(self, arrays):
        pass


class ExternalFrontend:
    """Feature-file-backed front end with optional projection and layer mix."""

    def __init__(self, manifest: FeatureManifest, weighted=False, project=True,
                 project_dim=128, seed=0, dtype=np.float32):
        self.kind = "external_weighted" if weighted else "external"
        self.manifest = manifest
        self.weighted = weighted
        self.do_project = project
        self.frame_shift_s = SSL_FRAME_SHIFT_S
        self.params = OrderedDict()
        rng = np.random.default_rng(seed)
        if weighted:
            self.params["frontend.layers.raw"] = ag.parameter(
                np.zeros(manifest.k, dtype=dtype)
            )
        if project:
            bound = 1.0 / np.sqrt(manifest.d)
            self.params["frontend.proj.w"] = ag.parameter(
                rng.uniform(-bound, bound, (manifest.d, project_dim)).astype(dtype)
            )
            self.params["frontend.proj.b"] = ag.parameter(
                np.zeros(project_dim, dtype=dtype)
            )
            self.feature_dim = project_dim
        else:
            self.feature_dim = manifest.d

    def trainable_params(self):
        return OrderedDict(self.params)

    def features_from_wave(self, wave):
        raise UnsupportedFrontendError(
            "this front end reads precomputed feature files; filter the audio "
            "and re-export features (see the exporter tool), then point the "
            "manifest at the new files"
        )

    def base_features(self, record) -> np.ndarray:
        feats = load_features(self.manifest, record.trial_id)
        if self.weighted:
            return feats.layers  # (K, N, D)
        return feats.layers[-1]  # last layer (N, D)

    def to_graph(self, base):
        if self.weighted:
            x = combine_layers(base, self.params["frontend.layers.raw"])
        else:
            x = base if isinstance(base, ag.Tensor) else ag.constant(base)
        if self.do_project:
            x = project(
                x, self.params["frontend.proj.w"], self.params["frontend.proj.b"]
            )
        return x

    def featurize(self, record) -> FeatureSequence:
        out = self.to_graph(self.base_features(record))
        return FeatureSequence(
            frames=out.data.astype(np.float32), frame_shift_s=self.frame_shift_s
        )

    def state_arrays(self):
        return OrderedDict((n, t.data) for n, t in self.params.items())

    def load_state(self, arrays):
        for name, tensor in self.params.items():
            if name not in arrays:
                raise ShapeError(f"checkpoint missing parameter {name}")
            data = np.asarray(arrays[name], dtype=tensor.data.dtype)
            if data.shape != tensor.data.shape:
                raise ShapeError(f"parameter {name}: bad shape {data.shape}")
            tensor.data = data


def make_frontend(kind, cfg: FrontendConfig):
    """Uniform front-end constructor; see FrontendConfig for the knobs."""
    if kind not in FRONTEND_KINDS:
        raise ConfigError(f"unknown frontend kind {kind!r}")
    if kind == "lfcc":
        return LfccFrontend(cfg.lfcc, audio_root=cfg.audio_root or None)
    if not cfg.manifest:
        raise ConfigError(f"frontend kind {kind!r} requires a feature manifest")
    manifest = load_manifest(cfg.manifest)
    return ExternalFrontend(
        manifest,
        weighted=(kind == "external_weighted"),
        project=cfg.project,
        project_dim=cfg.project_dim,
        seed=cfg.seed,
    )
