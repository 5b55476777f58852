"""Front end + back end assembly: one object that scores trials and exposes
a single named parameter map for the optimizer and checkpoints."""

from collections import OrderedDict
from pathlib import Path

import numpy as np

from .data import SegmentItem, slice_frames, slice_segments
from .errors import CompatibilityError, ShapeError
from .models import Backend, score_from_logits


class CmModel:
    """A countermeasure: trainable frontend pieces plus one back end."""

    def __init__(self, frontend, backend: Backend):
        if frontend.feature_dim != backend.in_dim:
            raise CompatibilityError(
                f"frontend delivers {frontend.feature_dim}-dim features but "
                f"the {backend.kind} back end expects {backend.in_dim}"
            )
        self.frontend = frontend
        self.backend = backend

    # -- parameters -----------------------------------------------------------

    def all_params(self):
        merged = OrderedDict()
        for name, tensor in self.frontend.trainable_params().items():
            merged[name] = tensor
        for name, tensor in self.backend.params.items():
            merged[f"backend.{name}"] = tensor
        return merged

    def trainable_params(self):
        merged = OrderedDict()
        for name, tensor in self.frontend.trainable_params().items():
            merged[name] = tensor
        for name in self.backend.trainable:
            merged[f"backend.{name}"] = self.backend.params[name]
        return merged

    def state_arrays(self):
        return OrderedDict((n, t.data) for n, t in self.all_params().items())

    def load_state(self, arrays):
        front = {
            n: a for n, a in arrays.items() if not n.startswith("backend.")
        }
        back = {
            n[len("backend."):]: a
            for n, a in arrays.items()
            if n.startswith("backend.")
        }
        self.frontend.load_state(front)
        self.backend.load_state(back)

    def fingerprint(self):
        return {
            "backend_kind": self.backend.kind,
            "frontend_kind": self.frontend.kind,
            "feature_dim": self.backend.in_dim,
            "seed": self.backend.seed,
        }

    # -- forward --------------------------------------------------------------

    def graph_logits(self, base_features, valid_len=None, train=False):
        """Logits Tensor for one item's base features (records on the
        ambient tape when one is active)."""
        base = np.asarray(base_features)
        n = base.shape[-2]
        if valid_len is None:
            valid_len = n
        if not (1 <= valid_len <= n):
            raise ShapeError(f"valid_len {valid_len} out of range for N={n}")
        sliced = base[..., :valid_len, :]
        x = self.frontend.to_graph(sliced)
        if x.data.shape[1] != self.backend.in_dim:
            raise CompatibilityError(
                f"features of dim {x.data.shape[1]} fed to a "
                f"{self.backend.in_dim}-dim back end"
            )
        return self.backend.forward_tensor(x, train=train)

    def score_record(self, record) -> float:
        """Detection score for a whole, unsliced trial (inference mode)."""
        base = self.frontend.base_features(record)
        logits = self.graph_logits(base, train=False)
        return score_from_logits(logits.data)

    # -- data plumbing ----------------------------------------------------------

    def training_items(self, record, max_dur_s=4.0):
        """Trial -> list of SegmentItem, slicing at the waveform level for
        audio-backed front ends and at the frame level otherwise."""
        label = record.label_index
        if hasattr(self.frontend, "wave_for_record"):
            wave = self.frontend.wave_for_record(record)
            segments = slice_segments(wave, max_dur_s)
            return [
                SegmentItem(
                    trial_id=f"{record.trial_id}#{i}",
                    features=self.frontend.features_from_wave(seg).frames,
                    label=label,
                )
                for i, seg in enumerate(segments)
            ]
        base = self.frontend.base_features(record)
        parts = slice_frames(base, self.frontend.frame_shift_s, max_dur_s)
        return [
            SegmentItem(
                trial_id=f"{record.trial_id}#{i}", features=part, label=label
            )
            for i, part in enumerate(parts)
        ]

    def missing_trials(self, protocol):
        missing = []
        for rec in protocol:
            if hasattr(self.frontend, "wave_for_record"):
                if rec.audio_path is None:
                    missing.append(rec.trial_id)
                    continue
                path = Path(rec.audio_path)
                root = getattr(self.frontend, "audio_root", None)
                if root is not None and not path.is_absolute():
                    path = root / path
                if not path.exists():
                    missing.append(rec.trial_id)
            else:
                manifest = getattr(self.frontend, "manifest", None)
                if manifest is not None and rec.trial_id not in manifest:
                    missing.append(rec.trial_id)
        return missing
