"""Recurrent one-step dynamics model for pushed objects.

Maps a window of consecutive observation tuples to the object increments of
the following step.  Architecture: two stacked LSTM layers (gate order
i, f, g, o), inverted dropout on each LSTM layer's output sequence in train
mode, then a two-layer dense head (tanh hidden) applied to the final
recurrent feature.  Inputs are normalized per channel with constants stored
inside the weights; the 3-channel output is produced in normalized space and
de-normalized with the constants of the increment channels.

Everything is plain float64 numpy.  The backward pass is hand-derived
backpropagation through time over the same cache the forward pass records,
and training uses Adam with bias correction.  All randomness flows through
explicit numpy Generators, so identical seeds give identical results.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

DEFAULT_DIMS = (7, 128, 64, 64, 3)

PARAM_FIELDS = (
    "lstm1_wx", "lstm1_wh", "lstm1_b",
    "lstm2_wx", "lstm2_wh", "lstm2_b",
    "fc1_w", "fc1_b", "fc2_w", "fc2_b",
)

VAL_EVERY = 100

MAGIC = b"PKWEIGH1"
FORMAT_VERSION_WEIGHTS = 1
KIND_MODEL = 1
KIND_AGENT = 2


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class ModelWeights:
    """All learnable arrays plus architecture dims and normalization."""

    dims: Tuple[int, int, int, int, int]  # (in, h1, h2, fc_hidden, out)
    norm_mean: np.ndarray  # (in,)
    norm_std: np.ndarray  # (in,)
    lstm1_wx: np.ndarray  # (4*h1, in)
    lstm1_wh: np.ndarray  # (4*h1, h1)
    lstm1_b: np.ndarray  # (4*h1,)
    lstm2_wx: np.ndarray  # (4*h2, h1)
    lstm2_wh: np.ndarray  # (4*h2, h2)
    lstm2_b: np.ndarray  # (4*h2,)
    fc1_w: np.ndarray  # (fc_hidden, h2)
    fc1_b: np.ndarray  # (fc_hidden,)
    fc2_w: np.ndarray  # (out, fc_hidden)
    fc2_b: np.ndarray  # (out,)

    def clone(self) -> "ModelWeights":
        kw = {name: getattr(self, name).copy() for name in PARAM_FIELDS}
        return ModelWeights(self.dims, self.norm_mean.copy(), self.norm_std.copy(), **kw)

    def params(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}


@dataclass(frozen=True)
class Prediction:
    """De-normalized predicted increments (dx, dy, dtheta)."""

    increments: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout: float = 0.5
    batch_size: int = 64
    max_steps: int = 3000
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.batch_size < 1 or self.max_steps < 1:
            raise ValueError("batch_size and max_steps must be positive")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")


def init_weights(dims: Tuple[int, ...], norm_mean, norm_std,
                 rng: np.random.Generator) -> ModelWeights:
    """Scaled-uniform fan-in init: |w| <= sqrt(6 / fan_in).

    Biases start at zero except the forget-gate blocks, which start at 1 so
    early training does not wash out the cell state.
    """
    din, h1, h2, hf, dout = dims
    if dout > din:
        raise ValueError("output channels must be a prefix of the input channels")
    mean = np.asarray(norm_mean, dtype=float).copy()
    std = np.asarray(norm_std, dtype=float).copy()
    if mean.shape != (din,) or std.shape != (din,):
        raise ValueError(f"normalization constants must have shape ({din},)")
    if np.any(std <= 0.0):
        raise ValueError("normalization stds must be positive")

    def uni(rows, cols, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, (rows, cols))

    def gate_bias(h):
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0  # forget gates
        return b

    return ModelWeights(
        dims=tuple(int(d) for d in dims),
        norm_mean=mean,
        norm_std=std,
        lstm1_wx=uni(4 * h1, din, din),
        lstm1_wh=uni(4 * h1, h1, h1),
        lstm1_b=gate_bias(h1),
        lstm2_wx=uni(4 * h2, h1, h1),
        lstm2_wh=uni(4 * h2, h2, h2),
        lstm2_b=gate_bias(h2),
        fc1_w=uni(hf, h2, h2),
        fc1_b=np.zeros(hf),
        fc2_w=uni(dout, hf, hf),
        fc2_b=np.zeros(dout),
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _lstm_forward(wx, wh, b, xs, masks):
    """One LSTM layer over a batch of sequences.

    xs: (B, T, din); masks: (B, T, h) inverted-dropout masks applied to the
    output sequence.  Returns the cache dict used by the backward pass.
    """
    B, T, _ = xs.shape
    h = wh.shape[1]
    i_ = np.empty((B, T, h))
    f_ = np.empty((B, T, h))
    g_ = np.empty((B, T, h))
    o_ = np.empty((B, T, h))
    c_ = np.empty((B, T, h))
    tc_ = np.empty((B, T, h))
    hs = np.empty((B, T, h))
    h_prev = np.zeros((B, h))
    c_prev = np.zeros((B, h))
    for t in range(T):
        z = xs[:, t] @ wx.T + h_prev @ wh.T + b
        i = _sigmoid(z[:, :h])
        f = _sigmoid(z[:, h:2 * h])
        g = np.tanh(z[:, 2 * h:3 * h])
        o = _sigmoid(z[:, 3 * h:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        ht = o * tc
        i_[:, t], f_[:, t], g_[:, t], o_[:, t] = i, f, g, o
        c_[:, t], tc_[:, t], hs[:, t] = c, tc, ht
        h_prev, c_prev = ht, c
    return {"x": xs, "i": i_, "f": f_, "g": g_, "o": o_, "c": c_, "tc": tc_,
            "h": hs, "m": masks, "out": hs * masks}


def _lstm_backward(wx, wh, cache, dh_out):
    """BPTT for one layer.  dh_out: (B, T, h) gradient w.r.t. raw h_t."""
    xs = cache["x"]
    B, T, _ = xs.shape
    h = wh.shape[1]
    i_, f_, g_, o_ = cache["i"], cache["f"], cache["g"], cache["o"]
    c_, tc_, hs = cache["c"], cache["tc"], cache["h"]
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * h)
    dx = np.empty_like(xs)
    dh_next = np.zeros((B, h))
    dc_next = np.zeros((B, h))
    for t in range(T - 1, -1, -1):
        i, f, g, o = i_[:, t], f_[:, t], g_[:, t], o_[:, t]
        c, tc = c_[:, t], tc_[:, t]
        c_prev = c_[:, t - 1] if t > 0 else np.zeros((B, h))
        h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, h))
        dh = dh_out[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        dwx += dz.T @ xs[:, t]
        dwh += dz.T @ h_prev
        db += dz.sum(axis=0)
        dx[:, t] = dz @ wx
        dh_next = dz @ wh
    return dx, dwx, dwh, db


def _forward_impl(w: ModelWeights, x: np.ndarray, dropout: float,
                  rng: Optional[np.random.Generator],
                  need_cache: bool) -> Tuple[np.ndarray, Optional[dict]]:
    din, h1, h2, hf, dout = w.dims
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[2] != din or x.shape[1] < 1:
        raise ValueError(f"expected input of shape (B, T>=1, {din}), got {x.shape}")
    B, T, _ = x.shape
    xn = (x - w.norm_mean) / w.norm_std
    if dropout > 0.0:
        if rng is None:
            raise ValueError("dropout requires a random generator")
        keep = 1.0 - dropout
        m1 = (rng.random((B, T, h1)) < keep) / keep
        m2 = (rng.random((B, T, h2)) < keep) / keep
    else:
        m1 = np.ones((B, T, h1))
        m2 = np.ones((B, T, h2))
    c1 = _lstm_forward(w.lstm1_wx, w.lstm1_wh, w.lstm1_b, xn, m1)
    c2 = _lstm_forward(w.lstm2_wx, w.lstm2_wh, w.lstm2_b, c1["out"], m2)
    feat = c2["out"][:, -1]
    a1 = feat @ w.fc1_w.T + w.fc1_b
    z1 = np.tanh(a1)
    y = z1 @ w.fc2_w.T + w.fc2_b
    if not need_cache:
        return y, None
    cache = {"l1": c1, "l2": c2, "feat": feat, "z1": z1, "y": y, "B": B, "T": T}
    return y, cache


def forward(w: ModelWeights, sequence, train_mode: bool = False,
            dropout: float = 0.0,
            rng: Optional[np.random.Generator] = None) -> Tuple[Prediction, dict]:
    """Run one sequence of tuples through the network.

    ``sequence`` is (T, in) with T >= 1.  In train mode inverted dropout with
    the given rate is applied to both LSTM output sequences, drawn from
    ``rng``.  Returns the de-normalized Prediction and the backward cache.
    """
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim != 2:
        raise ValueError(f"sequence must be 2-d (T, {w.dims[0]}), got shape {seq.shape}")
    rate = dropout if train_mode else 0.0
    y, cache = _forward_impl(w, seq[None], rate, rng, need_cache=True)
    dout = w.dims[4]
    pred = y[0] * w.norm_std[:dout] + w.norm_mean[:dout]
    return Prediction(pred), cache


def loss(prediction: Prediction, target, w: ModelWeights) -> float:
    """Sum of squared errors over the normalized output channels."""
    dout = w.dims[4]
    t = np.asarray(target, dtype=float)
    yn = (prediction.increments - w.norm_mean[:dout]) / w.norm_std[:dout]
    tn = (t - w.norm_mean[:dout]) / w.norm_std[:dout]
    d = yn - tn
    return float(d @ d)


def _backward_impl(w: ModelWeights, cache: dict, targets: np.ndarray) -> Dict[str, np.ndarray]:
    """Gradients of the mean (over batch) normalized SSE loss."""
    dout = w.dims[4]
    tn = (np.asarray(targets, dtype=float) - w.norm_mean[:dout]) / w.norm_std[:dout]
    if tn.ndim == 1:
        tn = tn[None]
    B = cache["B"]
    T = cache["T"]
    y, z1, feat = cache["y"], cache["z1"], cache["feat"]
    dy = 2.0 * (y - tn) / B
    g: Dict[str, np.ndarray] = {}
    g["fc2_w"] = dy.T @ z1
    g["fc2_b"] = dy.sum(axis=0)
    dz1 = dy @ w.fc2_w
    da1 = dz1 * (1.0 - z1 * z1)
    g["fc1_w"] = da1.T @ feat
    g["fc1_b"] = da1.sum(axis=0)
    dfeat = da1 @ w.fc1_w

    c2 = cache["l2"]
    h2 = w.lstm2_wh.shape[1]
    dh2 = np.zeros((B, T, h2))
    dh2[:, -1] = dfeat * c2["m"][:, -1]
    dd1, dwx2, dwh2, db2 = _lstm_backward(w.lstm2_wx, w.lstm2_wh, c2, dh2)
    g["lstm2_wx"], g["lstm2_wh"], g["lstm2_b"] = dwx2, dwh2, db2

    c1 = cache["l1"]
    dh1 = dd1 * c1["m"]
    _, dwx1, dwh1, db1 = _lstm_backward(w.lstm1_wx, w.lstm1_wh, c1, dh1)
    g["lstm1_wx"], g["lstm1_wh"], g["lstm1_b"] = dwx1, dwh1, db1
    return g


def backward(w: ModelWeights, cache: dict, target) -> Dict[str, np.ndarray]:
    """Analytic gradients for the single-sequence forward cache."""
    return _backward_impl(w, cache, np.asarray(target, dtype=float))


def predict_next(w: ModelWeights, window) -> np.ndarray:
    """De-normalized increment prediction for one history window (T, in)."""
    win = np.asarray(window, dtype=float)
    if win.ndim != 2 or win.shape[0] < 1:
        raise ValueError("history window must contain at least one tuple")
    y, _ = _forward_impl(w, win[None], 0.0, None, need_cache=False)
    dout = w.dims[4]
    return y[0] * w.norm_std[:dout] + w.norm_mean[:dout]


def predict_batch(w: ModelWeights, windows: np.ndarray) -> np.ndarray:
    """De-normalized predictions for a batch of windows (B, T, in)."""
    y, _ = _forward_impl(w, windows, 0.0, None, need_cache=False)
    dout = w.dims[4]
    return y * w.norm_std[:dout] + w.norm_mean[:dout]


# ---------------------------------------------------------------------------
# optimization

@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @staticmethod
    def for_weights(w: ModelWeights) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(a) for k, a in w.params().items()},
            v={k: np.zeros_like(a) for k, a in w.params().items()},
        )


def adam_step(w: ModelWeights, grads: Dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> None:
    """One in-place Adam update with bias correction.

    With the update eps added outside the square root, the very first step
    moves each weight by -lr * g / (|g| + eps).
    """
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, grad in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        mhat = m / bc1
        vhat = v / bc2
        getattr(w, name)[...] -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    weights: ModelWeights
    train_curve: np.ndarray  # (steps, 2): step index, batch loss
    val_curve: np.ndarray  # (k, 2): step index, validation loss
    best_step: int


def _batched_eval_loss(w: ModelWeights, X: np.ndarray, Y: np.ndarray,
                       chunk: int = 1024) -> float:
    dout = w.dims[4]
    total = 0.0
    for lo in range(0, X.shape[0], chunk):
        x = X[lo:lo + chunk]
        y, _ = _forward_impl(w, x, 0.0, None, need_cache=False)
        tn = (Y[lo:lo + chunk] - w.norm_mean[:dout]) / w.norm_std[:dout]
        d = y - tn
        total += float((d * d).sum())
    return total / X.shape[0]


def train(sequences: Sequence, cfg: TrainConfig,
          dims: Tuple[int, ...] = DEFAULT_DIMS) -> TrainResult:
    """Train a dynamics model on training sequences.

    Normalization constants come from the training split.  A held-out 10%
    validation split is evaluated every 100 steps and the weights with the
    best validation loss are returned.  Raises DivergenceError if the loss
    leaves the finite range.
    """
    n = len(sequences)
    if n < 2:
        raise ValueError("need at least 2 sequences to split off validation")
    X = np.stack([np.asarray(s.window, dtype=float) for s in sequences])
    Y = np.stack([np.asarray(s.target, dtype=float) for s in sequences])
    if X.shape[2] != dims[0]:
        raise ValueError(f"sequences have {X.shape[2]} channels, dims expect {dims[0]}")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(0.1 * n)))
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    if len(train_idx) < cfg.batch_size:
        raise ValueError(
            f"dataset too small: {len(train_idx)} training sequences for batch_size {cfg.batch_size}")
    Xt, Yt = X[train_idx], Y[train_idx]
    Xv, Yv = X[val_idx], Y[val_idx]

    flat = Xt.reshape(-1, dims[0])
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), 1e-8)
    w = init_weights(dims, mean, std, rng)
    opt = AdamState.for_weights(w)
    dout = dims[4]

    best = w.clone()
    best_loss = np.inf
    best_step = 0
    train_curve = np.zeros((cfg.max_steps, 2))
    val_points: List[Tuple[int, float]] = []
    nt = Xt.shape[0]
    for it in range(1, cfg.max_steps + 1):
        idx = rng.integers(0, nt, cfg.batch_size)
        xb = Xt[idx]
        yb = Yt[idx]
        yn, cache = _forward_impl(w, xb, cfg.dropout, rng, need_cache=True)
        tn = (yb - w.norm_mean[:dout]) / w.norm_std[:dout]
        d = yn - tn
        batch_loss = float((d * d).sum()) / cfg.batch_size
        if not np.isfinite(batch_loss):
            raise DivergenceError(f"non-finite training loss at step {it}")
        train_curve[it - 1] = (it, batch_loss)
        grads = _backward_impl(w, cache, yb)
        adam_step(w, grads, opt, cfg)
        if it % VAL_EVERY == 0 or it == cfg.max_steps:
            vl = _batched_eval_loss(w, Xv, Yv)
            if not np.isfinite(vl):
                raise DivergenceError(f"non-finite validation loss at step {it}")
            val_points.append((it, vl))
            if vl < best_loss:
                best_loss = vl
                best = w.clone()
                best_step = it
    return TrainResult(best, train_curve, np.array(val_points, dtype=float),
                       best_step)


# ---------------------------------------------------------------------------
# weights container (shared by the dynamics model and the policy agent)

def write_array_file(path, kind: int, config_hash: str, dims: Sequence[int],
                     arrays: Sequence[np.ndarray]) -> None:
    """Versioned binary container: header, u32 dims, little-endian f64 arrays."""
    h = config_hash.encode("ascii")[:16].ljust(16, b"0")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", kind, FORMAT_VERSION_WEIGHTS))
        fh.write(h)
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(struct.pack("<I", len(arrays)))
        for arr in arrays:
            a = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


def read_array_file(path, expected_kind: int):
    """Returns (dims, arrays, config_hash)."""
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a weights file")
    off = 8
    kind, version = struct.unpack_from("<II", data, off)
    off += 8
    if kind != expected_kind:
        raise ValueError(f"{path}: wrong weights kind {kind}, expected {expected_kind}")
    if version != FORMAT_VERSION_WEIGHTS:
        raise ValueError(f"{path}: unsupported weights version {version}")
    config_hash = data[off:off + 16].decode("ascii")
    off += 16
    (nd,) = struct.unpack_from("<I", data, off)
    off += 4
    dims = struct.unpack_from(f"<{nd}I", data, off)
    off += 4 * nd
    (na,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays = []
    for _ in range(na):
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        arrays.append(arr.astype(float))
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in weights file")
    return dims, arrays, config_hash


def save_weights(path, w: ModelWeights, config_hash: str = "0" * 16,
                 history: int = 0) -> None:
    """history records the window length the weights were trained with
    (0 = unknown) so downstream consumers can reject mismatched buffers."""
    arrays = ([w.norm_mean, w.norm_std, np.array([float(history)])]
              + [getattr(w, k) for k in PARAM_FIELDS])
    write_array_file(path, KIND_MODEL, config_hash, w.dims, arrays)


def load_weights(path) -> Tuple[ModelWeights, str, int]:
    dims, arrays, config_hash = read_array_file(path, KIND_MODEL)
    if len(dims) != 5 or len(arrays) != 3 + len(PARAM_FIELDS):
        raise ValueError(f"{path}: malformed model weights file")
    if arrays[2].shape != (1,):
        raise ValueError(f"{path}: malformed history marker")
    kw = dict(zip(PARAM_FIELDS, arrays[3:]))
    w = ModelWeights(tuple(int(d) for d in dims), arrays[0], arrays[1], **kw)
    return w, config_hash, int(arrays[2][0])
