"""Adam optimizer, learning-rate halving schedule, early stopping on
development loss, and the CMCK checkpoint container.

CMCK layout: magic "CMCK" | u32 version | u32 meta_len | meta JSON |
u32 n_tensors | per tensor (u32 name_len, name, u8 dtype, u8 ndim,
u32 dims..., little-endian payload) | u32 CRC32 over everything after the
magic. Tensors are stored raw, so load -> forward is bit-exact.
"""

import json
import struct
import zlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .data import make_batches
from .errors import (
    CompatibilityError,
    CorruptFileError,
    FormatError,
    NumericFaultError,
    ParameterError,
)
from .models import Backend, cross_entropy
from .pipeline import CmModel

CMCK_MAGIC = b"CMCK"
CMCK_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 3e-4
    halve_every: int = 10
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    grad_clip: float = 5.0
    max_segment_s: float = 4.0
    desk_scale: bool = False

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ParameterError("lr0 must be positive")
        if self.patience < 1 or self.halve_every < 1:
            raise ParameterError("patience and halve_every must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ParameterError("batch_size and max_epochs must be >= 1")


def baseline_preset(**overrides) -> TrainConfig:
    """Recipe for the LFCC baseline: batch 64, lr 3e-4 halved every 10."""
    return replace(TrainConfig(lr0=3e-4, batch_size=64), **overrides)


def external_preset(desk_scale=True, **overrides) -> TrainConfig:
    """Recipe for feature-file front ends: batch 8; lr 1e-6 for fidelity
    runs, scaled x100 at desk scale where the trainable stack is tiny."""
    lr0 = 1e-4 if desk_scale else 1e-6
    return replace(
        TrainConfig(lr0=lr0, batch_size=8, desk_scale=desk_scale), **overrides
    )


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ParameterError("epoch must be >= 0")
    return cfg.lr0 * 0.5 ** (epoch // cfg.halve_every)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class OptimState:
    def __init__(self, params):
        self.m = OrderedDict(
            (n, np.zeros_like(t.data)) for n, t in params.items()
        )
        self.v = OrderedDict(
            (n, np.zeros_like(t.data)) for n, t in params.items()
        )
        self.t = 0


def adam_step(params, grads, state: OptimState, lr: float, cfg: TrainConfig):
    """One Adam update with bias correction; aborts untouched on NaN/Inf."""
    if lr < 0:
        raise ParameterError("learning rate must be >= 0")
    for name in params:
        if not np.all(np.isfinite(grads[name])):
            raise NumericFaultError(f"non-finite gradient for {name}")
    state.t += 1
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.epsilon
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    for name, tensor in params.items():
        g = grads[name].astype(tensor.data.dtype, copy=False)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / bias1
        v_hat = state.v[name] / bias2
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def clip_gradients(grads, max_norm: float):
    """Global-norm clip; returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = np.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * scale
    return norm


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    arrays: "OrderedDict[str, np.ndarray]"
    meta: dict

    @property
    def backend_kind(self):
        return self.meta["backend_kind"]


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta_blob = json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")
    body = bytearray()
    body += struct.pack("<I", CMCK_VERSION)
    body += struct.pack("<I", len(meta_blob)) + meta_blob
    body += struct.pack("<I", len(ckpt.arrays))
    for name, arr in ckpt.arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        code = _DTYPE_CODES.get(np.dtype(dtype))
        if code is None:
            raise FormatError(f"cannot serialize dtype {arr.dtype} ({name})")
        name_b = name.encode("utf-8")
        body += struct.pack("<I", len(name_b)) + name_b
        body += struct.pack("<BB", code, arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.astype(dtype, copy=False).tobytes(order="C")
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(CMCK_MAGIC)
        fh.write(bytes(body))
        fh.write(struct.pack("<I", crc))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != CMCK_MAGIC:
        raise CorruptFileError(f"{path}: not a CMCK checkpoint")
    body, trailer = blob[4:-4], blob[-4:]
    if zlib.crc32(body) & 0xFFFFFFFF != struct.unpack("<I", trailer)[0]:
        raise CorruptFileError(f"{path}: CRC mismatch")
    try:
        off = 0
        (version,) = struct.unpack_from("<I", body, off)
        off += 4
        if version != CMCK_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack_from("<I", body, off)
        off += 4
        meta = json.loads(body[off : off + meta_len].decode("utf-8"))
        off += meta_len
        (n_tensors,) = struct.unpack_from("<I", body, off)
        off += 4
        arrays = OrderedDict()
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off : off + name_len].decode("utf-8")
            off += name_len
            code, ndim = struct.unpack_from("<BB", body, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            dtype = _CODE_DTYPES[code]
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(
                body, dtype=dtype, count=count, offset=off
            ).reshape(shape)
            off += count * dtype.itemsize
            arrays[name] = arr.copy()
    except (struct.error, KeyError, ValueError, IndexError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise CorruptFileError(f"{path}: malformed checkpoint ({exc})") from exc
    return Checkpoint(arrays=arrays, meta=meta)


def checkpoint_from_model(model: CmModel, optim: OptimState, cfg: TrainConfig,
                          epoch: int, best_dev_loss: float) -> Checkpoint:
    arrays = OrderedDict(
        (n, a.copy()) for n, a in model.state_arrays().items()
    )
    for name, m in optim.m.items():
        arrays[f"opt.m.{name}"] = m.copy()
    for name, v in optim.v.items():
        arrays[f"opt.v.{name}"] = v.copy()
    meta = dict(model.fingerprint())
    meta.update(
        {
            "epoch": epoch,
            "best_dev_loss": best_dev_loss,
            "adam_t": optim.t,
            "config": asdict(cfg),
            "trainable": sorted(model.trainable_params()),
        }
    )
    return Checkpoint(arrays=arrays, meta=meta)


def restore_model(ckpt: Checkpoint, frontend) -> CmModel:
    """Rebuild a model from a checkpoint.

    The frontend must deliver the feature dim recorded at training time and
    own exactly the trainable frontend parameters the checkpoint carries
    (so a feature-file front end may stand in for the original as long as
    the shapes line up, e.g. scoring an LFCC dump without projection).
    """
    meta = ckpt.meta
    if frontend.feature_dim != meta["feature_dim"]:
        raise CompatibilityError(
            f"checkpoint expects {meta['feature_dim']}-dim features, frontend "
            f"delivers {frontend.feature_dim}"
        )
    stored_front = {
        n
        for n in ckpt.arrays
        if not n.startswith(("backend.", "opt."))
    }
    if stored_front != set(frontend.trainable_params()):
        raise CompatibilityError(
            f"checkpoint frontend parameters {sorted(stored_front)} do not "
            f"match the {frontend.kind} front end "
            f"({sorted(frontend.trainable_params())})"
        )
    backend = Backend(meta["backend_kind"], meta["feature_dim"], meta["seed"])
    model = CmModel(frontend, backend)
    model.load_state(
        {n: a for n, a in ckpt.arrays.items() if not n.startswith("opt.")}
    )
    return model


def check_backend_kind(ckpt: Checkpoint, expected_kind: str) -> None:
    if ckpt.meta["backend_kind"] != expected_kind:
        raise CompatibilityError(
            f"checkpoint holds a {ckpt.meta['backend_kind']} back end, "
            f"run expects {expected_kind}"
        )


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    dev_loss: float


def _mean_loss(losses):
    total = losses[0]
    for item in losses[1:]:
        total = total + item
    return total * (1.0 / len(losses))


def dev_loss(model: CmModel, dev_bases) -> float:
    """Mean cross-entropy over whole (unsliced) trials, inference mode."""
    total = 0.0
    for base, label in dev_bases:
        logits = model.graph_logits(base, train=False)
        total += float(cross_entropy(logits, label).data)
    return total / len(dev_bases)


def train(cfg: TrainConfig, model: CmModel, train_protocol, dev_protocol,
          log_path=None):
    """Train to best-dev-loss with early stopping; returns (ckpt, history).

    The staleness counter starts after the first epoch; training stops when
    the dev loss has not improved for cfg.patience consecutive epochs or at
    cfg.max_epochs.
    """
    if len(train_protocol) == 0 or len(dev_protocol) == 0:
        raise ParameterError("train and dev protocols must be nonempty")
    items = []
    for rec in train_protocol:
        items.extend(model.training_items(rec, cfg.max_segment_s))
    dev_bases = [
        (model.frontend.base_features(rec), rec.label_index)
        for rec in dev_protocol
    ]

    trainable = model.trainable_params()
    optim = OptimState(trainable)
    history = []
    best = None  # (dev_loss, checkpoint)
    stale = 0
    log_fh = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
    try:
        if log_fh:
            log_fh.write("epoch,lr,train_loss,dev_loss\n")
        for epoch in range(cfg.max_epochs):
            lr = lr_at_epoch(cfg, epoch)
            batches = make_batches(items, cfg.batch_size, cfg.seed, epoch)
            seen = 0
            loss_sum = 0.0
            for batch_no, batch in enumerate(batches):
                with ag.Tape() as tape:
                    losses = [
                        cross_entropy(
                            model.graph_logits(
                                batch.features[i],
                                valid_len=int(batch.valid_len[i]),
                                train=True,
                            ),
                            int(batch.labels[i]),
                        )
                        for i in range(len(batch))
                    ]
                    loss = _mean_loss(losses)
                if not np.isfinite(loss.data):
                    raise NumericFaultError(
                        f"training loss diverged at epoch {epoch}, "
                        f"batch {batch_no} (loss={loss.data})"
                    )
                grad_list = tape.backward(loss, trainable.values())
                grads = dict(zip(trainable.keys(), grad_list))
                clip_gradients(grads, cfg.grad_clip)
                adam_step(trainable, grads, optim, lr, cfg)
                loss_sum += float(loss.data) * len(batch)
                seen += len(batch)
            train_loss = loss_sum / seen
            current_dev = dev_loss(model, dev_bases)
            history.append(EpochStats(epoch, lr, train_loss, current_dev))
            if log_fh:
                log_fh.write(
                    f"{epoch},{lr:.10g},{train_loss:.8f},{current_dev:.8f}\n"
                )
            if best is None or current_dev < best[0]:
                best = (
                    current_dev,
                    checkpoint_from_model(model, optim, cfg, epoch, current_dev),
                )
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    finally:
        if log_fh:
            log_fh.close()
    return best[1], history


def train_rounds(cfg: TrainConfig, model_factory, train_protocol, dev_protocol,
                 rounds: int, out_dir=None):
    """Seeded multi-round driver: round r trains with seed cfg.seed + r.

    model_factory(seed) must build a freshly initialized CmModel.
    Returns a list of (checkpoint, history) pairs.
    """
    if rounds < 1:
        raise ParameterError("rounds must be >= 1")
    results = []
    for r in range(rounds):
        round_cfg = replace(cfg, seed=cfg.seed + r)
        model = model_factory(round_cfg.seed)
        log_path = None
        if out_dir is not None:
            log_path = Path(out_dir) / f"round{r}_epochs.csv"
        ckpt, history = train(
            round_cfg, model, train_protocol, dev_protocol, log_path=log_path
        )
        if out_dir is not None:
            save_checkpoint(ckpt, Path(out_dir) / f"round{r}.cmck")
        results.append((ckpt, history))
    return results
