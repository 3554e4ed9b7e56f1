"""Two-branch convolutional gaze-vector regressor, built from scratch.

Each branch is a small residual conv stack (3x3 kernels, stride-2
downsampling per block); branch features are concatenated and pushed
through a dense head that predicts two normalized centroids through a
logistic squashing.  Backprop, both loss terms, and Adam live here too;
everything is plain numpy with deterministic, seedable behavior.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .core import SamplePair
from .encoder import EncodedFrame

CHECKPOINT_MAGIC = b"EVGM"
CHECKPOINT_VERSION = 1

ACOS_CLAMP = 1e-7
FIXATION_NORM_EPS = 1e-6


class ModelError(Exception):
    """Bad shapes, corrupt checkpoints, or numerical divergence."""


@dataclass(frozen=True)
class NetworkSpec:
    in_channels: int = 6
    input_hw: tuple[int, int] = (64, 64)
    channels: tuple[int, ...] = (8, 16, 32, 64)
    head_hidden: int = 128

    def __post_init__(self):
        object.__setattr__(self, "input_hw", tuple(self.input_hw))
        object.__setattr__(self, "channels", tuple(self.channels))
        h, w = self.input_hw
        if h % (2 ** len(self.channels)) or w % (2 ** len(self.channels)):
            raise ModelError(f"input {h}x{w} not divisible by 2^{len(self.channels)}")

    @property
    def feature_size(self) -> int:
        h, w = self.input_hw
        f = 2 ** len(self.channels)
        return self.channels[-1] * (h // f) * (w // f)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 50
    loss_mode: str = "centroid+theta"  # or "centroid"
    theta_weight: float = 1.0
    centroid_metric: str = "l1"  # or "l2"
    lr_schedule: str = "constant"  # or "cosine"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ModelError("learning rate must be positive")
        if self.batch_size < 1:
            raise ModelError("batch size must be at least 1")
        if self.loss_mode not in ("centroid", "centroid+theta"):
            raise ModelError(f"unknown loss mode {self.loss_mode!r}")
        if self.centroid_metric not in ("l1", "l2"):
            raise ModelError(f"unknown centroid metric {self.centroid_metric!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ModelError(f"unknown lr schedule {self.lr_schedule!r}")

    def lr_at(self, epoch: int) -> float:
        """L1 gradients keep constant magnitude, so without decay Adam
        oscillates around the optimum at a floor set by the step size;
        cosine decay removes that floor."""
        if self.lr_schedule == "cosine" and self.epochs > 1:
            return self.learning_rate * 0.5 * (1.0 + np.cos(np.pi * epoch / (self.epochs - 1)))
        return self.learning_rate


# ------------------------------------------------------------- conv plumbing

_COL_CACHE: dict = {}


def _col_index(c: int, h: int, w: int, k: int, stride: int, pad: int):
    """Gather indices turning a padded (C,Hp,Wp) image into im2col columns."""
    key = (c, h, w, k, stride, pad)
    hit = _COL_CACHE.get(key)
    if hit is not None:
        return hit
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    ci = np.repeat(np.arange(c), k * k)
    ki = np.tile(np.repeat(np.arange(k), k), c)
    kj = np.tile(np.arange(k), c * k)
    oi = np.repeat(np.arange(oh), ow) * stride
    oj = np.tile(np.arange(ow), oh) * stride
    idx = (ci[:, None] * hp + ki[:, None] + oi[None, :]) * wp + kj[:, None] + oj[None, :]
    hit = (idx, oh, ow)
    _COL_CACHE[key] = hit
    return hit


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int):
    n, c, h, wd = x.shape
    o, ci, k, _ = w.shape
    if ci != c:
        raise ModelError(f"conv expects {ci} input channels, got {c}")
    idx, oh, ow = _col_index(c, h, wd, k, stride, pad)
    xpad = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = xpad.reshape(n, -1)[:, idx]  # (N, C*k*k, OH*OW)
    out = np.matmul(w.reshape(o, -1), cols) + b[:, None]
    return out.reshape(n, o, oh, ow), cols


def conv_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray,
                  x_shape: tuple, stride: int, pad: int):
    n, c, h, wd = x_shape
    o, _, k, _ = w.shape
    idx, oh, ow = _col_index(c, h, wd, k, stride, pad)
    d2 = dout.reshape(n, o, -1)
    dw = np.matmul(d2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = d2.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(o, -1).T, d2)  # (N, C*k*k, OH*OW)
    hp, wp = h + 2 * pad, wd + 2 * pad
    plane = c * hp * wp
    flat_idx = (idx.ravel()[None, :] + np.arange(n)[:, None] * plane).ravel()
    dxpad = np.bincount(flat_idx, weights=dcols.reshape(-1), minlength=n * plane)
    dxpad = dxpad.reshape(n, c, hp, wp).astype(dout.dtype, copy=False)
    dx = dxpad[:, :, pad:hp - pad, pad:wp - pad] if pad else dxpad
    return dx, dw.astype(w.dtype, copy=False), db.astype(w.dtype, copy=False)


# ------------------------------------------------------------------- network

def init_params(spec: NetworkSpec, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-uniform fan-in initialization; biases zero."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}

    def conv(name, cin, cout):
        limit = np.sqrt(6.0 / (cin * 9))
        params[f"{name}.w"] = rng.uniform(-limit, limit, (cout, cin, 3, 3)).astype(dtype)
        params[f"{name}.b"] = np.zeros(cout, dtype=dtype)

    for br in range(2):
        cin = spec.in_channels
        for i, cout in enumerate(spec.channels):
            conv(f"branch{br}.block{i}.conv_a", cin, cout)
            conv(f"branch{br}.block{i}.conv_b", cout, cout)
            cin = cout
    fin = 2 * spec.feature_size
    lim1 = np.sqrt(6.0 / fin)
    params["head.fc1.w"] = rng.uniform(-lim1, lim1, (fin, spec.head_hidden)).astype(dtype)
    params["head.fc1.b"] = np.zeros(spec.head_hidden, dtype=dtype)
    lim2 = np.sqrt(6.0 / spec.head_hidden)
    params["head.fc2.w"] = rng.uniform(-lim2, lim2, (spec.head_hidden, 4)).astype(dtype)
    params["head.fc2.b"] = np.zeros(4, dtype=dtype)
    return params


def _branch_forward(spec, params, x, br):
    caches = []
    for i in range(len(spec.channels)):
        wa = params[f"branch{br}.block{i}.conv_a.w"]
        ba = params[f"branch{br}.block{i}.conv_a.b"]
        wb = params[f"branch{br}.block{i}.conv_b.w"]
        bb = params[f"branch{br}.block{i}.conv_b.b"]
        h, cols_a = conv_forward(x, wa, ba, stride=2, pad=1)
        hr = np.maximum(h, 0)
        g, cols_b = conv_forward(hr, wb, bb, stride=1, pad=1)
        s = g + hr  # residual skip
        y = np.maximum(s, 0)
        caches.append((x.shape, cols_a, h, hr.shape, cols_b, s))
        x = y
    return x, caches


def _branch_backward(spec, params, grads, dy, caches, br):
    for i in reversed(range(len(spec.channels))):
        x_shape, cols_a, h, hr_shape, cols_b, s = caches[i]
        wa = params[f"branch{br}.block{i}.conv_a.w"]
        wb = params[f"branch{br}.block{i}.conv_b.w"]
        ds = dy * (s > 0)
        dhr, dwb, dbb = conv_backward(ds, cols_b, wb, hr_shape, stride=1, pad=1)
        dhr = dhr + ds  # skip path
        dh = dhr * (h > 0)
        dy, dwa, dba = conv_backward(dh, cols_a, wa, x_shape, stride=2, pad=1)
        grads[f"branch{br}.block{i}.conv_a.w"] = dwa
        grads[f"branch{br}.block{i}.conv_a.b"] = dba
        grads[f"branch{br}.block{i}.conv_b.w"] = dwb
        grads[f"branch{br}.block{i}.conv_b.b"] = dbb
    return dy


def forward(spec: NetworkSpec, params: dict, xa: np.ndarray, xb: np.ndarray,
            with_cache: bool = False):
    """Predict normalized centroid pairs for a batch.

    xa, xb: (N, C, H, W) tensors for the two consecutive encoded frames.
    Returns (N, 2, 2) predictions in (0, 1) after logistic squashing.
    """
    n = xa.shape[0]
    expect = (spec.in_channels, *spec.input_hw)
    if xa.shape[1:] != expect or xb.shape[1:] != expect:
        raise ModelError(f"input shape {xa.shape[1:]} does not match spec {expect}")
    fa, ca = _branch_forward(spec, params, xa, 0)
    fb, cb = _branch_forward(spec, params, xb, 1)
    feat = np.concatenate([fa.reshape(n, -1), fb.reshape(n, -1)], axis=1)
    z1 = feat @ params["head.fc1.w"] + params["head.fc1.b"]
    a1 = np.maximum(z1, 0)
    z2 = a1 @ params["head.fc2.w"] + params["head.fc2.b"]
    out = 1.0 / (1.0 + np.exp(-z2))
    pred = out.reshape(n, 2, 2)
    if not with_cache:
        return pred
    return pred, (fa.shape, fb.shape, ca, cb, feat, z1, a1, out)


def backward(spec: NetworkSpec, params: dict, cache, dpred: np.ndarray) -> dict:
    """Gradients of the loss w.r.t. every parameter, given d(loss)/d(pred)."""
    fa_shape, fb_shape, ca, cb, feat, z1, a1, out = cache
    n = dpred.shape[0]
    dz2 = dpred.reshape(n, 4) * out * (1.0 - out)
    grads: dict[str, np.ndarray] = {}
    grads["head.fc2.w"] = a1.T @ dz2
    grads["head.fc2.b"] = dz2.sum(axis=0)
    da1 = dz2 @ params["head.fc2.w"].T
    dz1 = da1 * (z1 > 0)
    grads["head.fc1.w"] = feat.T @ dz1
    grads["head.fc1.b"] = dz1.sum(axis=0)
    dfeat = dz1 @ params["head.fc1.w"].T
    half = feat.shape[1] // 2
    _branch_backward(spec, params, grads, dfeat[:, :half].reshape(fa_shape), ca, 0)
    _branch_backward(spec, params, grads, dfeat[:, half:].reshape(fb_shape), cb, 1)
    return grads


# -------------------------------------------------------------------- losses

def loss_centroid(target: np.ndarray, pred: np.ndarray, metric: str = "l1"):
    """Batch-mean distance between each target and predicted centroid.

    target, pred: (N, 2, 2).  Returns (loss, d loss / d pred).
    """
    target = np.asarray(target, dtype=pred.dtype)
    diff = pred - target
    n = pred.shape[0]
    if metric == "l1":
        loss = float(np.abs(diff).sum() / n)
        grad = np.sign(diff) / n
    else:
        norms = np.sqrt((diff ** 2).sum(axis=2, keepdims=True))
        loss = float(norms.sum() / n)
        grad = np.where(norms > 0, diff / np.where(norms > 0, norms, 1.0), 0.0) / n
    return loss, grad.astype(pred.dtype, copy=False)


def loss_theta(target: np.ndarray, pred: np.ndarray):
    """Batch-mean absolute angle between target and predicted directions.

    Directions are unit-normalized before the dot product; the dot is
    clamped away from +-1 so the gradient stays finite.  Pairs whose
    target or predicted direction is shorter than the fixation threshold
    contribute zero.  Returns (loss, d loss / d pred).
    """
    target = np.asarray(target, dtype=pred.dtype)
    n = pred.shape[0]
    dc = target[:, 1, :] - target[:, 0, :]
    dp = pred[:, 1, :] - pred[:, 0, :]
    nc = np.sqrt((dc ** 2).sum(axis=1))
    npn = np.sqrt((dp ** 2).sum(axis=1))
    valid = (nc >= FIXATION_NORM_EPS) & (npn >= FIXATION_NORM_EPS)
    nc_safe = np.where(valid, nc, 1.0)
    np_safe = np.where(valid, npn, 1.0)
    chat = dc / nc_safe[:, None]
    phat = dp / np_safe[:, None]
    u_raw = (chat * phat).sum(axis=1)
    u = np.clip(u_raw, -1.0 + ACOS_CLAMP, 1.0 - ACOS_CLAMP)
    angles = np.where(valid, np.arccos(u), 0.0)
    loss = float(angles.sum() / n)

    in_range = valid & (np.abs(u_raw) < 1.0 - ACOS_CLAMP)
    du = np.where(in_range, -1.0 / np.sqrt(np.maximum(1.0 - u * u, ACOS_CLAMP ** 2)), 0.0)
    ddp = du[:, None] * (chat - u_raw[:, None] * phat) / np_safe[:, None] / n
    grad = np.zeros_like(pred)
    grad[:, 1, :] = ddp
    grad[:, 0, :] = -ddp
    return loss, grad


def loss_and_grad(spec: NetworkSpec, params: dict, xa, xb, target,
                  cfg: TrainConfig):
    """Total loss and parameter gradients for one batch."""
    pred, cache = forward(spec, params, xa, xb, with_cache=True)
    c_loss, dpred = loss_centroid(target, pred, cfg.centroid_metric)
    loss = c_loss
    if cfg.loss_mode == "centroid+theta":
        t_loss, t_grad = loss_theta(target, pred)
        loss += cfg.theta_weight * t_loss
        dpred = dpred + cfg.theta_weight * t_grad
    grads = backward(spec, params, cache, dpred)
    return loss, grads, pred


# ---------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def adam_init(params: dict) -> AdamState:
    return AdamState({k: np.zeros_like(p) for k, p in params.items()},
                     {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig,
              lr: float | None = None) -> None:
    """Standard bias-corrected Adam update, in place."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ModelError(f"non-finite gradient in {k} at step {state.t + 1}")
    if lr is None:
        lr = cfg.learning_rate
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        p -= (lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.dtype)


# ------------------------------------------------------------ data plumbing

def downsample_input(frame: EncodedFrame, out_hw: tuple[int, int]) -> np.ndarray:
    """Area-average the encoded frame down to (6, out_h, out_w)."""
    _, h, w = frame.channels.shape
    oh, ow = out_hw
    if oh > h or ow > w:
        raise ModelError(f"cannot upsample {h}x{w} to {oh}x{ow}")
    if h % oh or w % ow:
        raise ModelError(f"output {oh}x{ow} must divide source {h}x{w}")
    return frame.channels.reshape(6, oh, h // oh, ow, w // ow).mean(axis=(2, 4))


def tensorize(pairs: list[SamplePair], spec: NetworkSpec, dtype=np.float32):
    """Stack sample pairs into batch tensors (xa, xb, targets)."""
    xa = np.stack([downsample_input(p.frame_a, spec.input_hw) for p in pairs]).astype(dtype)
    xb = np.stack([downsample_input(p.frame_b, spec.input_hw) for p in pairs]).astype(dtype)
    y = np.stack([p.target for p in pairs]).astype(dtype)
    return xa, xb, y


def predict(spec: NetworkSpec, params: dict, pairs: list[SamplePair],
            batch_size: int = 64) -> np.ndarray:
    """Normalized (N, 2, 2) predictions for a list of sample pairs."""
    xa, xb, _ = tensorize(pairs, spec)
    out = [forward(spec, params, xa[i:i + batch_size], xb[i:i + batch_size])
           for i in range(0, len(pairs), batch_size)]
    return np.concatenate(out, axis=0)


# ------------------------------------------------------------------ training

@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[tuple[int, float, float]]  # (epoch, train_loss, test_loss)
    best_epoch: int
    diverged: bool = False


def _dataset_loss(spec, params, xa, xb, y, cfg, batch_size=64):
    total, n = 0.0, xa.shape[0]
    for i in range(0, n, batch_size):
        pred = forward(spec, params, xa[i:i + batch_size], xb[i:i + batch_size])
        c_loss, _ = loss_centroid(y[i:i + batch_size], pred, cfg.centroid_metric)
        b_loss = c_loss
        if cfg.loss_mode == "centroid+theta":
            t_loss, _ = loss_theta(y[i:i + batch_size], pred)
            b_loss += cfg.theta_weight * t_loss
        total += b_loss * pred.shape[0]
    return total / n


def train(train_pairs: list[SamplePair], test_pairs: list[SamplePair] | None,
          spec: NetworkSpec, cfg: TrainConfig, losses_csv=None) -> TrainResult:
    """Seeded mini-batch training; keeps the best-by-test-loss parameters.

    Divergence (non-finite loss or gradients) aborts the run and returns
    the last good parameters with diverged=True.
    """
    if not train_pairs:
        raise ModelError("no training pairs")
    xa, xb, y = tensorize(train_pairs, spec)
    if test_pairs:
        txa, txb, ty = tensorize(test_pairs, spec)
    else:
        txa, txb, ty = xa, xb, y

    rng = np.random.default_rng(cfg.seed)
    params = init_params(spec, cfg.seed)
    state = adam_init(params)
    history: list[tuple[int, float, float]] = []
    best_loss, best_epoch = np.inf, -1
    best_params = {k: p.copy() for k, p in params.items()}
    diverged = False

    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(train_pairs))
        lr = cfg.lr_at(epoch)
        try:
            for i in range(0, len(perm), cfg.batch_size):
                sel = perm[i:i + cfg.batch_size]
                loss, grads, _ = loss_and_grad(spec, params, xa[sel], xb[sel], y[sel], cfg)
                if not np.isfinite(loss):
                    raise ModelError(f"non-finite loss at epoch {epoch}")
                adam_step(params, grads, state, cfg, lr=lr)
        except ModelError:
            diverged = True
            break
        train_loss = _dataset_loss(spec, params, xa, xb, y, cfg)
        test_loss = _dataset_loss(spec, params, txa, txb, ty, cfg)
        history.append((epoch, float(train_loss), float(test_loss)))
        if test_loss < best_loss:
            best_loss, best_epoch = test_loss, epoch
            best_params = {k: p.copy() for k, p in params.items()}

    if losses_csv is not None:
        with open(losses_csv, "w") as f:
            f.write("epoch,train_loss,test_loss\n")
            for epoch, tr, te in history:
                f.write(f"{epoch},{tr:.8g},{te:.8g}\n")
    return TrainResult(best_params, history, best_epoch, diverged)


# --------------------------------------------------------------- checkpoints

def save_checkpoint(path, spec: NetworkSpec, params: dict, state: AdamState,
                    epoch: int, rng_seed: int = 0) -> None:
    names = sorted(params)
    header = {
        "spec": {"in_channels": spec.in_channels, "input_hw": list(spec.input_hw),
                 "channels": list(spec.channels), "head_hidden": spec.head_hidden},
        "epoch": epoch,
        "adam_t": state.t,
        "rng_seed": rng_seed,
        "names": names,
        "shapes": {k: list(params[k].shape) for k in names},
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for part in (params, state.m, state.v):
            for k in names:
                f.write(part[k].astype("<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ModelError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    spec = NetworkSpec(in_channels=header["spec"]["in_channels"],
                       input_hw=tuple(header["spec"]["input_hw"]),
                       channels=tuple(header["spec"]["channels"]),
                       head_hidden=header["spec"]["head_hidden"])
    names = header["names"]
    shapes = {k: tuple(header["shapes"][k]) for k in names}
    pos = 12 + hlen
    parts = []
    for _ in range(3):
        blob = {}
        for k in names:
            count = int(np.prod(shapes[k]))
            end = pos + 4 * count
            if end > len(raw):
                raise ModelError(f"{path}: truncated checkpoint")
            blob[k] = np.frombuffer(raw[pos:end], dtype="<f4").reshape(shapes[k]).copy()
            pos = end
        parts.append(blob)
    if pos != len(raw):
        raise ModelError(f"{path}: {len(raw) - pos} trailing bytes")
    params, m, v = parts
    state = AdamState(m, v, header["adam_t"])
    return spec, params, state, header["epoch"]
