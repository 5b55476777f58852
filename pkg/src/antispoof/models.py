"""Back-end architectures: GF (pool + linear), LGF (adds two BLSTM layers),
and LLGF (adds a light-CNN stack with max-feature-map activations).

Parameters live in an ordered name -> Tensor map so the optimizer and the
checkpoint container can treat every architecture uniformly. Batchnorm
running statistics are kept in the same map but excluded from the trainable
set.
"""

from collections import OrderedDict

import numpy as np

from . import autograd as ag
from .errors import ShapeError

BACKEND_KINDS = ("GF", "LGF", "LLGF")
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
LCNN_POOL_FACTOR = 16  # four 2x2 poolings along both axes


def score_from_logits(logits) -> float:
    """Detection score: bona fide logit minus spoof logit (higher = bona fide)."""
    arr = np.asarray(logits, dtype=np.float64).reshape(-1)
    if arr.shape[0] != 2:
        raise ShapeError(f"expected two logits, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("logits must be finite")
    return float(arr[0] - arr[1])


def cross_entropy(logits, label):
    """-log softmax(logits)[label], stabilized with a detached max shift.

    `logits` is a Tensor of shape (2,); `label` is 0 (bona fide) or 1 (spoof).
    """
    if label not in (0, 1):
        raise ShapeError(f"label must be 0 or 1, got {label!r}")
    shift = ag.constant(np.max(logits.data), dtype=logits.data.dtype)
    shifted = logits - shift
    lse = ag.log(ag.sum_(ag.exp(shifted))) + shift
    return lse - logits[label]


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Backend:
    """One back end: named parameter map plus the forward computation."""

    def __init__(self, kind, in_dim, seed, dtype=np.float32):
        if kind not in BACKEND_KINDS:
            raise ShapeError(f"unknown backend kind {kind!r}")
        if in_dim < 1:
            raise ShapeError("in_dim must be positive")
        self.kind = kind
        self.in_dim = int(in_dim)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.params = OrderedDict()
        self.trainable = set()
        rng = np.random.default_rng(seed)
        if kind == "LLGF":
            self._init_lcnn(rng)
            seq_dim = LCNN_CHANNELS_OUT * (in_dim // LCNN_POOL_FACTOR)
            if seq_dim == 0:
                raise ShapeError(
                    f"feature dim {in_dim} too small for the LCNN stack"
                )
        else:
            seq_dim = in_dim
        self.seq_dim = seq_dim
        if kind in ("LGF", "LLGF"):
            if seq_dim % 2 != 0:
                raise ShapeError(
                    f"BLSTM width must be even, got {seq_dim}"
                )
            self._init_blstm(rng, "lstm1", seq_dim)
            self._init_blstm(rng, "lstm2", seq_dim)
        self._add_param(
            "fc.w", _uniform(rng, (seq_dim, 2), seq_dim, self.dtype)
        )
        self._add_param("fc.b", np.zeros(2, dtype=self.dtype))

    # -- parameter bookkeeping ------------------------------------------------

    def _add_param(self, name, data, trainable=True):
        self.params[name] = ag.parameter(data) if trainable else ag.constant(data)
        if trainable:
            self.trainable.add(name)

    def _init_conv(self, rng, name, c_in, c_out, k):
        fan_in = c_in * k * k
        self._add_param(
            f"{name}.w", _uniform(rng, (c_out, c_in, k, k), fan_in, self.dtype)
        )
        self._add_param(f"{name}.b", np.zeros(c_out, dtype=self.dtype))

    def _init_bn(self, rng, name, channels):
        self._add_param(f"{name}.gamma", np.ones(channels, dtype=self.dtype))
        self._add_param(f"{name}.beta", np.zeros(channels, dtype=self.dtype))
        self._add_param(
            f"{name}.running_mean", np.zeros(channels, dtype=self.dtype), False
        )
        self._add_param(
            f"{name}.running_var", np.ones(channels, dtype=self.dtype), False
        )

    def _init_lcnn(self, rng):
        for name, c_in, c_out, k in LCNN_CONVS:
            self._init_conv(rng, name, c_in, c_out, k)
        for name, channels in LCNN_BNS:
            self._init_bn(rng, name, channels)

    def _init_blstm(self, rng, name, width):
        hidden = width // 2
        for direction in ("fw", "bw"):
            w_ih = _uniform(rng, (width, 4 * hidden), hidden, self.dtype)
            w_hh = _uniform(rng, (hidden, 4 * hidden), hidden, self.dtype)
            bias = _uniform(rng, (4 * hidden,), hidden, self.dtype)
            bias[hidden : 2 * hidden] += 1.0  # forget-gate bias
            self._add_param(f"{name}.{direction}.w_ih", w_ih)
            self._add_param(f"{name}.{direction}.w_hh", w_hh)
            self._add_param(f"{name}.{direction}.b", bias)

    def trainable_params(self):
        return OrderedDict(
            (n, t) for n, t in self.params.items() if n in self.trainable
        )

    def state_arrays(self):
        return OrderedDict((n, t.data) for n, t in self.params.items())

    def load_state(self, arrays):
        for name, tensor in self.params.items():
            if name not in arrays:
                raise ShapeError(f"checkpoint missing parameter {name}")
            data = np.asarray(arrays[name], dtype=self.dtype)
            if data.shape != tensor.data.shape:
                raise ShapeError(
                    f"parameter {name}: shape {data.shape} != "
                    f"{tensor.data.shape}"
                )
            tensor.data = data

    # -- forward --------------------------------------------------------------

    def forward(self, features, valid_len=None, train=False):
        """Logits Tensor (2,) for one (N, D) feature matrix.

        Frames beyond valid_len are dropped on entry, so padded batches and
        whole trials score identically.
        """
        feats = np.asarray(features, dtype=self.dtype)
        if feats.ndim != 2 or feats.shape[1] != self.in_dim:
            raise ShapeError(
                f"{self.kind} expects (N, {self.in_dim}) features, got "
                f"{feats.shape}"
            )
        if valid_len is None:
            valid_len = feats.shape[0]
        if not (1 <= valid_len <= feats.shape[0]):
            raise ShapeError(f"valid_len {valid_len} out of range")
        x = ag.constant(feats[:valid_len])
        return self.forward_tensor(x, train=train)

    def forward_tensor(self, x, train=False):
        """Same as forward, but takes a Tensor so a trainable frontend can
        feed its projected output straight into the graph."""
        if self.kind == "LLGF":
            x = self._lcnn(x, train)
        if self.kind in ("LGF", "LLGF"):
            x = blstm_layer(x, self.params, "lstm1")
            x = blstm_layer(x, self.params, "lstm2")
        pooled = ag.global_avg_pool(x, x.data.shape[0])
        return ag.matmul(pooled, self.params["fc.w"]) + self.params["fc.b"]

    def _lcnn(self, x, train):
        n = x.data.shape[0]
        if n < LCNN_POOL_FACTOR:
            raise ShapeError(
                f"LLGF needs at least {LCNN_POOL_FACTOR} frames, got {n}"
            )
        img = ag.reshape(x, (1, n, self.in_dim))
        for step, name in LCNN_STACK:
            if step == "conv":
                img = ag.conv2d(
                    img, self.params[f"{name}.w"], self.params[f"{name}.b"]
                )
            elif step == "mfm":
                img = ag.mfm(img)
            elif step == "pool":
                img = ag.maxpool2x2(img)
            elif step == "bn":
                img = batchnorm(img, self.params, name, train)
        channels, t_out, f_out = img.data.shape
        seq = ag.transpose(img, (1, 0, 2))
        return ag.reshape(seq, (t_out, channels * f_out))


# LCNN table: conv(name, c_in, c_out, kernel) / mfm / bn(name) / pool.
LCNN_CONVS = [
    ("b1.conv1", 1, 32, 5),
    ("b2.conv1", 16, 32, 1),
    ("b2.conv2", 16, 48, 3),
    ("b3.conv1", 24, 48, 1),
    ("b3.conv2", 24, 64, 3),
    ("b4.conv1", 32, 64, 1),
    ("b4.conv2", 32, 32, 3),
    ("b4.conv3", 16, 32, 1),
    ("b4.conv4", 16, 32, 3),
]
LCNN_BNS = [
    ("b2.bn1", 16),
    ("b2.bn2", 24),
    ("b3.bn1", 24),
    ("b4.bn1", 32),
    ("b4.bn2", 16),
    ("b4.bn3", 16),
]
LCNN_STACK = [
    ("conv", "b1.conv1"), ("mfm", None), ("pool", None),
    ("conv", "b2.conv1"), ("mfm", None), ("bn", "b2.bn1"),
    ("conv", "b2.conv2"), ("mfm", None), ("pool", None), ("bn", "b2.bn2"),
    ("conv", "b3.conv1"), ("mfm", None), ("bn", "b3.bn1"),
    ("conv", "b3.conv2"), ("mfm", None), ("pool", None),
    ("conv", "b4.conv1"), ("mfm", None), ("bn", "b4.bn1"),
    ("conv", "b4.conv2"), ("mfm", None), ("bn", "b4.bn2"),
    ("conv", "b4.conv3"), ("mfm", None), ("bn", "b4.bn3"),
    ("conv", "b4.conv4"), ("mfm", None), ("pool", None),
]
LCNN_CHANNELS_OUT = 16


def batchnorm(x, params, name, train, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel batchnorm over the spatial axes of a (C, H, W) map."""
    gamma = params[f"{name}.gamma"]
    beta = params[f"{name}.beta"]
    r_mean = params[f"{name}.running_mean"]
    r_var = params[f"{name}.running_var"]
    c = x.data.shape[0]
    if train:
        mu = ag.mean(x, axis=(1, 2), keepdims=True)
        centered = x - mu
        var = ag.mean(centered * centered, axis=(1, 2), keepdims=True)
        r_mean.data = (
            (1.0 - momentum) * r_mean.data + momentum * mu.data.reshape(-1)
        ).astype(x.data.dtype)
        r_var.data = (
            (1.0 - momentum) * r_var.data + momentum * var.data.reshape(-1)
        ).astype(x.data.dtype)
        xhat = centered / ag.sqrt(var + eps)
    else:
        mu_c = ag.constant(r_mean.data.reshape(c, 1, 1))
        sd_c = ag.constant(
            np.sqrt(r_var.data.reshape(c, 1, 1) + np.asarray(eps, x.data.dtype))
        )
        xhat = (x - mu_c) / sd_c
    gamma3 = ag.reshape(gamma, (c, 1, 1))
    beta3 = ag.reshape(beta, (c, 1, 1))
    return xhat * gamma3 + beta3


def _lstm_direction(x, w_ih, w_hh, bias, reverse):
    """One LSTM pass over an (N, D) Tensor; returns (N, H) with H = 4H/4."""
    n = x.data.shape[0]
    hidden = w_hh.data.shape[0]
    xp = ag.matmul(x, w_ih) + bias  # (N, 4H)
    h = ag.constant(np.zeros((1, hidden), dtype=x.data.dtype))
    c = ag.constant(np.zeros((1, hidden), dtype=x.data.dtype))
    steps = range(n - 1, -1, -1) if reverse else range(n)
    outputs = [None] * n
    for t in steps:
        z = xp[t : t + 1] + ag.matmul(h, w_hh)
        i_gate = ag.sigmoid(z[:, :hidden])
        f_gate = ag.sigmoid(z[:, hidden : 2 * hidden])
        g_gate = ag.tanh(z[:, 2 * hidden : 3 * hidden])
        o_gate = ag.sigmoid(z[:, 3 * hidden :])
        c = f_gate * c + i_gate * g_gate
        h = o_gate * ag.tanh(c)
        outputs[t] = h
    return ag.concat(outputs, axis=0)


def blstm_layer(x, params, prefix):
    """Bi-directional LSTM keeping the input width (D/2 per direction)."""
    d = x.data.shape[1]
    if d % 2 != 0:
        raise ShapeError(f"blstm_layer needs an even input width, got {d}")
    fw = _lstm_direction(
        x,
        params[f"{prefix}.fw.w_ih"],
        params[f"{prefix}.fw.w_hh"],
        params[f"{prefix}.fw.b"],
        reverse=False,
    )
    bw = _lstm_direction(
        x,
        params[f"{prefix}.bw.w_ih"],
        params[f"{prefix}.bw.w_hh"],
        params[f"{prefix}.bw.b"],
        reverse=True,
    )
    return ag.concat([fw, bw], axis=1)


def forward_backend(backend, features, valid_len=None, train=False):
    """Run one trial through a back end; returns (logits array, tape)."""
    with ag.Tape() as tape:
        logits = backend.forward(features, valid_len=valid_len, train=train)
    return logits.data.copy(), tape
