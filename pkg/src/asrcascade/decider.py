"""The trainable decision network.

Architecture, per sample: a softmax-weighted sum over the L feature
extractor layers collapses (L, T, D) to (T, D); a stem convolution maps D
to ``channels``; ``res_blocks`` residual blocks follow, each two same-padded
convolutions with per-channel time normalization and ReLU, added back onto
the block input; channel means over time feed a linear head with one
sigmoid output.

Everything is float64 and runs on (B, C, T) batches with an explicit frame
mask, so padded and unpadded evaluation agree. Normalization statistics and
pooling divide by true lengths. Convolutions replicate the edge frames
instead of padding with zeros: a time-constant input then yields
time-constant activations at every depth, so pooling a constant input
equals any single frame's activation regardless of sequence length.

The backward pass is written out analytically; `tests` verify every
parameter gradient against central finite differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import FeatureTensor
from .errors import BadMagicError, CascadeError, ShapeMismatchError, TruncatedFileError
from .rng import stream

MODEL_MAGIC = b"DCDR"
MODEL_VERSION = 1

_NORM_EPS = 1e-5  # variance floor inside block normalization


@dataclass(frozen=True)
class DeciderConfig:
    in_layers: int
    in_dims: int
    channels: int = 256
    res_blocks: int = 3
    kernel: int = 3
    seed: int = 0

    def __post_init__(self):
        if min(self.in_layers, self.in_dims, self.channels, self.res_blocks) < 1:
            raise CascadeError(f"decider config fields must be positive: {self}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise CascadeError("kernel must be a positive odd integer (same-padding symmetry)")

    def param_names(self) -> list[str]:
        names = ["layer_logits", "stem.w", "stem.b"]
        for i in range(self.res_blocks):
            for j in (1, 2):
                names += [f"block{i}.conv{j}.w", f"block{i}.conv{j}.b"]
        names += ["head.w", "head.b"]
        return names

    def param_shape(self, name: str) -> tuple[int, ...]:
        c, k = self.channels, self.kernel
        if name == "layer_logits":
            return (self.in_layers,)
        if name == "stem.w":
            return (c, self.in_dims, k)
        if name == "head.w":
            return (c,)
        if name in ("stem.b", "head.b") or name.endswith(".b"):
            return (1,) if name == "head.b" else (c,)
        return (c, c, k)


@dataclass
class DeciderModel:
    config: DeciderConfig
    params: dict[str, np.ndarray]

    def copy(self) -> "DeciderModel":
        return DeciderModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def layer_weights(self) -> np.ndarray:
        return softmax(self.params["layer_logits"])


def init_model(cfg: DeciderConfig) -> DeciderModel:
    """Seeded initialization.

    Convolutions draw He-scaled normals; layer logits start at zero (uniform
    layer weights) and the head starts at zero so the first score is exactly
    0.5 and early updates track the accumulated gradient direction.
    """
    rng = stream(cfg.seed, "decider-init")
    params: dict[str, np.ndarray] = {}
    for name in cfg.param_names():
        shape = cfg.param_shape(name)
        if name.endswith(".w") and name != "head.w":
            fan_in = shape[1] * shape[2]
            params[name] = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        else:
            params[name] = np.zeros(shape)
    return DeciderModel(config=cfg, params=params)


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / e.sum()


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep scores strictly inside (0, 1) even where float64 saturates
    np.clip(out, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0), out=out)
    return out


def bce_loss(score: float, label: int) -> float:
    """Binary cross entropy of a sigmoid score against a {0,1} label."""
    if not 0.0 < score < 1.0:
        raise CascadeError(f"score must lie strictly inside (0, 1), got {score}")
    if label not in (0, 1):
        raise CascadeError(f"label must be 0 or 1, got {label}")
    return -(label * np.log(score) + (1 - label) * np.log1p(-score))


def bce_from_logit(z: np.ndarray, label: np.ndarray) -> np.ndarray:
    # numerically stable: max(z,0) - y*z + log(1 + exp(-|z|))
    return np.maximum(z, 0.0) - label * z + np.log1p(np.exp(-np.abs(z)))


def weighted_layer_sum(features: FeatureTensor, layer_logits: np.ndarray) -> np.ndarray:
    """Softmax-weighted combination of the layer axis, (L,T,D) -> (T,D)."""
    logits = np.asarray(layer_logits, dtype=np.float64)
    if logits.shape != (features.layers,):
        raise ShapeMismatchError(
            f"expected {features.layers} layer logits, got shape {logits.shape}"
        )
    w = softmax(logits)
    return np.einsum("l,ltd->td", w, features.data)


# ---------------------------------------------------------------------------
# batched primitives; x is (B, C, T) with mask (B, T) of {0.0, 1.0}


def _fill_tail(x, lengths):
    """Replace frames beyond each sample's true length with its last valid frame."""
    t = x.shape[2]
    idx = np.minimum(np.arange(t)[None, :], lengths[:, None].astype(int) - 1)
    return np.take_along_axis(x, idx[:, None, :], axis=2)


def _conv_forward(x, w, b, mask, lengths):
    k = w.shape[2]
    pad = k // 2
    xf = _fill_tail(x, lengths)
    xp = np.concatenate(
        [np.repeat(xf[:, :, :1], pad, axis=2), xf, np.repeat(xf[:, :, -1:], pad, axis=2)],
        axis=2,
    )
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)
    y = np.einsum("oik,bitk->bot", w, windows, optimize=True)
    y += b[None, :, None]
    y *= mask[:, None, :]
    return y, windows


def _conv_backward(dy, w, windows, mask, lengths):
    dy = dy * mask[:, None, :]
    dw = np.einsum("bot,bitk->oik", dy, windows, optimize=True)
    db = dy.sum(axis=(0, 2))
    n_batch, _, t = dy.shape
    k = w.shape[2]
    pad = k // 2
    # grad wrt the padded input: full correlation with the flipped kernel
    dyp = np.pad(dy, ((0, 0), (0, 0), (k - 1, k - 1)))
    dy_windows = np.lib.stride_tricks.sliding_window_view(dyp, k, axis=2)
    dxp = np.einsum("oik,botk->bit", w[:, :, ::-1], dy_windows, optimize=True)
    # fold the replicated edge padding back onto the edge frames
    dxf = dxp[:, :, pad : pad + t].copy()
    if pad:
        dxf[:, :, 0] += dxp[:, :, :pad].sum(axis=2)
        dxf[:, :, -1] += dxp[:, :, pad + t :].sum(axis=2)
    # fold the tail fill back onto each sample's last valid frame
    m = mask[:, None, :]
    dx = dxf * m
    tail = (dxf * (1.0 - m)).sum(axis=2)
    last = lengths.astype(int) - 1
    dx[np.arange(n_batch), :, last] += tail
    return dx, dw, db


def _norm_forward(x, mask, lengths):
    n = lengths[:, None, None]
    m = mask[:, None, :]
    mu = (x * m).sum(axis=2, keepdims=True) / n
    xc = (x - mu) * m
    var = (xc * xc).sum(axis=2, keepdims=True) / n
    inv = 1.0 / np.sqrt(var + _NORM_EPS)
    y = xc * inv
    return y, (y, inv, m, n)


def _norm_backward(dy, cache):
    y, inv, m, n = cache
    dy = dy * m
    mean_dy = dy.sum(axis=2, keepdims=True) / n
    mean_dyy = (dy * y).sum(axis=2, keepdims=True) / n
    return (dy - mean_dy - y * mean_dyy) * inv * m


def _forward_batch(model: DeciderModel, feats: np.ndarray, mask: np.ndarray):
    """feats (B, L, T, D) zero-padded, mask (B, T). Returns scores and cache."""
    cfg = model.config
    p = model.params
    lengths = mask.sum(axis=1)
    lw = softmax(p["layer_logits"])
    mixed = np.einsum("l,bltd->btd", lw, feats)  # (B, T, D)
    x = np.ascontiguousarray(mixed.transpose(0, 2, 1))  # (B, D, T)
    h, stem_windows = _conv_forward(x, p["stem.w"], p["stem.b"], mask, lengths)
    blocks = []
    for i in range(cfg.res_blocks):
        a1, win1 = _conv_forward(h, p[f"block{i}.conv1.w"], p[f"block{i}.conv1.b"], mask, lengths)
        n1, ncache1 = _norm_forward(a1, mask, lengths)
        r1 = np.maximum(n1, 0.0)
        a2, win2 = _conv_forward(r1, p[f"block{i}.conv2.w"], p[f"block{i}.conv2.b"], mask, lengths)
        n2, ncache2 = _norm_forward(a2, mask, lengths)
        pre = h + n2
        h_out = np.maximum(pre, 0.0)
        blocks.append((h, win1, ncache1, n1, r1, win2, ncache2, pre))
        h = h_out
    pooled = (h * mask[:, None, :]).sum(axis=2) / lengths[:, None]  # (B, C)
    z = pooled @ p["head.w"] + p["head.b"][0]
    scores = sigmoid(z)
    if not np.all(np.isfinite(pooled)) or not np.all(np.isfinite(z)):
        raise CascadeError("non-finite activation in decider forward")
    cache = (feats, lw, stem_windows, blocks, h, pooled, z, mask, lengths)
    return scores, cache


def _backward_batch(model: DeciderModel, cache, dz: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of sum_b dz_b * z_b with respect to every parameter."""
    cfg = model.config
    p = model.params
    feats, lw, stem_windows, blocks, h_final, pooled, _, mask, lengths = cache
    grads = {name: np.zeros(cfg.param_shape(name)) for name in cfg.param_names()}

    grads["head.w"] = pooled.T @ dz
    grads["head.b"] = np.array([dz.sum()])
    dpooled = dz[:, None] * p["head.w"][None, :]  # (B, C)
    dh = dpooled[:, :, None] * (mask[:, None, :] / lengths[:, None, None])

    for i in reversed(range(cfg.res_blocks)):
        h_in, win1, ncache1, n1, r1, win2, ncache2, pre = blocks[i]
        dpre = dh * (pre > 0)
        dh = dpre  # skip path
        da2 = _norm_backward(dpre, ncache2)
        dr1, dw2, db2 = _conv_backward(da2, p[f"block{i}.conv2.w"], win2, mask, lengths)
        grads[f"block{i}.conv2.w"] = dw2
        grads[f"block{i}.conv2.b"] = db2
        dn1 = dr1 * (n1 > 0)
        da1 = _norm_backward(dn1, ncache1)
        dh_conv, dw1, db1 = _conv_backward(da1, p[f"block{i}.conv1.w"], win1, mask, lengths)
        grads[f"block{i}.conv1.w"] = dw1
        grads[f"block{i}.conv1.b"] = db1
        dh = dh + dh_conv

    dx, dws, dbs = _conv_backward(dh, p["stem.w"], stem_windows, mask, lengths)
    grads["stem.w"] = dws
    grads["stem.b"] = dbs

    dmixed = dx.transpose(0, 2, 1)  # (B, T, D)
    dlw = np.einsum("btd,bltd->l", dmixed, feats)
    grads["layer_logits"] = lw * (dlw - float(lw @ dlw))
    return grads


def _pack_single(features: FeatureTensor, cfg: DeciderConfig):
    if features.layers != cfg.in_layers or features.dims != cfg.in_dims:
        raise ShapeMismatchError(
            f"features (L={features.layers}, D={features.dims}) do not match "
            f"config (L={cfg.in_layers}, D={cfg.in_dims})"
        )
    feats = features.data[None, :, :, :]
    mask = np.ones((1, features.frames))
    return feats, mask


def forward(model: DeciderModel, features: FeatureTensor) -> float:
    """Score one utterance's features; output lies strictly inside (0, 1)."""
    feats, mask = _pack_single(features, model.config)
    scores, _ = _forward_batch(model, feats, mask)
    return float(scores[0])


def forward_loss(model: DeciderModel, features: FeatureTensor, label: int) -> float:
    """BCE(forward(model, features), label), computed stably from the logit."""
    feats, mask = _pack_single(features, model.config)
    _, cache = _forward_batch(model, feats, mask)
    z = cache[6]
    return float(bce_from_logit(z, np.array([float(label)]))[0])


def backward(model: DeciderModel, features: FeatureTensor, label: int) -> dict[str, np.ndarray]:
    """Analytic gradients of bce_loss(forward(...), label) for every parameter."""
    feats, mask = _pack_single(features, model.config)
    scores, cache = _forward_batch(model, feats, mask)
    dz = scores - float(label)
    return _backward_batch(model, cache, dz)


def batch_scores(model: DeciderModel, batch: Sequence[FeatureTensor]) -> np.ndarray:
    """Scores for a list of variable-length tensors, padded with a mask."""
    feats, mask = pad_batch(model.config, batch)
    scores, _ = _forward_batch(model, feats, mask)
    return scores


def pad_batch(cfg: DeciderConfig, batch: Sequence[FeatureTensor]):
    if not batch:
        raise CascadeError("empty batch")
    t_max = max(f.frames for f in batch)
    feats = np.zeros((len(batch), cfg.in_layers, t_max, cfg.in_dims))
    mask = np.zeros((len(batch), t_max))
    for b, f in enumerate(batch):
        if f.layers != cfg.in_layers or f.dims != cfg.in_dims:
            raise ShapeMismatchError(
                f"batch item {b}: (L={f.layers}, D={f.dims}) does not match config"
            )
        feats[b, :, : f.frames, :] = f.data
        mask[b, : f.frames] = 1.0
    return feats, mask


# ---------------------------------------------------------------------------
# model file io


def save_model(path: str | Path, model: DeciderModel) -> None:
    """DCDR file: magic, version, JSON config header, float64 LE parameters.

    Parameters are written in ``DeciderConfig.param_names()`` order:
    layer_logits, stem weight and bias, each block's two conv weight/bias
    pairs in block order, then the head weight and bias.
    """
    cfg = model.config
    header = json.dumps(
        {
            "in_layers": cfg.in_layers,
            "in_dims": cfg.in_dims,
            "channels": cfg.channels,
            "res_blocks": cfg.res_blocks,
            "kernel": cfg.kernel,
            "seed": cfg.seed,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC + bytes([MODEL_VERSION]))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name in cfg.param_names():
            arr = model.params[name]
            if arr.shape != cfg.param_shape(name):
                raise ShapeMismatchError(f"parameter {name} has shape {arr.shape}")
            fh.write(arr.astype("<f8").tobytes(order="C"))


def load_model(path: str | Path, expected: Optional[DeciderConfig] = None) -> DeciderModel:
    """Load a DCDR file; bit-exact round trip with save_model."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(5)
        if len(head) < 5 or head[:4] != MODEL_MAGIC:
            raise BadMagicError(f"{path}: not a decider model file")
        if head[4] != MODEL_VERSION:
            raise BadMagicError(f"{path}: unsupported model version {head[4]}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        cfg = DeciderConfig(**header)
        if expected is not None and (
            expected.in_layers != cfg.in_layers
            or expected.in_dims != cfg.in_dims
            or expected.channels != cfg.channels
            or expected.res_blocks != cfg.res_blocks
            or expected.kernel != cfg.kernel
        ):
            raise ShapeMismatchError(f"{path}: stored config {cfg} does not match expected {expected}")
        params = {}
        for name in cfg.param_names():
            shape = cfg.param_shape(name)
            count = int(np.prod(shape))
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise TruncatedFileError(f"{path}: truncated parameter block {name}")
            params[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise TruncatedFileError(f"{path}: trailing bytes after parameters")
    return DeciderModel(config=cfg, params=params)
