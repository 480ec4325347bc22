"""Minimal LeNet-style CNN with im2col linear layers and analog-noise injection.

All five linear layers (two convolutions, three fully connected) run as plain
matrix products against unfolded input columns, which is also how the analog
path computes them.  Noise emulating the analog MVM error is injected on the
pre-activation output of each linear layer with per-entry standard deviation
eps_l * sqrt(s_ref_l); pooling and activations stay noiseless.

Weight file format (little endian throughout):
  bytes 0:4    magic b"ARFW"
  bytes 4:8    uint32 layer count L
  bytes 8:16   reserved, zero
  next 8*L     dims table: uint32 rows, uint32 cols per layer
  payload      per layer: rows*cols float32 weights row-major, rows float32 biases
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WEIGHT_MAGIC = b"ARFW"
LAYER_SHAPES = [(6, 25), (16, 150), (120, 400), (84, 120), (10, 84)]
CONV_LAYERS = (0, 1)      # followed by 2x2 average pooling
RELU_LAYERS = (0, 1, 2, 3)


class DataMissingError(FileNotFoundError):
    """Required dataset or weight file is absent."""


class TrainingDivergenceError(RuntimeError):
    """Training failed to reach the target accuracy within max epochs."""


def im2col(feature_map: np.ndarray, kernel: int, stride: int = 1) -> np.ndarray:
    """Unfold sliding windows of one (C, H, W) map into columns (C*k*k, P)."""
    fm = np.asarray(feature_map)
    if fm.ndim == 2:
        fm = fm[None]
    if fm.ndim != 3:
        raise ValueError(f"feature map must be (C, H, W), got shape {fm.shape}")
    cols = _im2col_batch(fm[None], kernel, stride)
    return cols


def _im2col_batch(x: np.ndarray, kernel: int, stride: int = 1) -> np.ndarray:
    """(B, C, H, W) -> (C*k*k, B*P) with P output positions per image."""
    b, c, h, w = x.shape
    out_h = (h - kernel) // stride + 1
    out_w = (w - kernel) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ValueError(f"kernel {kernel} larger than map {h}x{w}")
    sb, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, (b, c, kernel, kernel, out_h, out_w),
        (sb, sc, sh, sw, sh * stride, sw * stride))
    # (C, k, k, B, P); batch kept contiguous in the column dimension
    cols = windows.transpose(1, 2, 3, 0, 4, 5).reshape(c * kernel * kernel,
                                                       b * out_h * out_w)
    return np.ascontiguousarray(cols)


def _col2im_batch(cols: np.ndarray, shape, kernel: int) -> np.ndarray:
    """Adjoint of _im2col_batch for stride 1 (overlap-add fold)."""
    b, c, h, w = shape
    out_h, out_w = h - kernel + 1, w - kernel + 1
    blocks = cols.reshape(c, kernel, kernel, b, out_h, out_w)
    x = np.zeros(shape, dtype=cols.dtype)
    for i in range(kernel):
        for j in range(kernel):
            x[:, :, i:i + out_h, j:j + out_w] += blocks[:, i, j].transpose(1, 0, 2, 3)
    return x


def _avg_pool(x: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _avg_pool_grad(d: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(d, 2, axis=2), 2, axis=3) / 4.0


@dataclass
class CnnModel:
    """Weights and biases of the five linear layers (Table-like shapes)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        shapes = [w.shape for w in self.weights]
        if shapes != LAYER_SHAPES:
            raise ValueError(f"layer shapes {shapes} != expected {LAYER_SHAPES}")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[0],):
                raise ValueError("bias shape mismatch")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("non-finite parameters")

    @classmethod
    def init_random(cls, rng: np.random.Generator) -> "CnnModel":
        weights, biases = [], []
        for m, n in LAYER_SHAPES:
            weights.append(rng.normal(0.0, np.sqrt(2.0 / n), (m, n)))
            biases.append(np.zeros(m))
        return cls(weights, biases)

    @classmethod
    def init_zero(cls) -> "CnnModel":
        return cls([np.zeros(s) for s in LAYER_SHAPES],
                   [np.zeros(s[0]) for s in LAYER_SHAPES])


@dataclass
class ForwardCache:
    cols: list        # layer inputs as columns
    mvm: list         # W @ cols, before bias and noise
    z: list           # pre-activation (bias and noise applied)
    noise_units: list # the unit-variance draws used per layer, or None
    pool_in_shape: list
    logits: np.ndarray


def forward_batch(model: CnnModel, images: np.ndarray,
                  eps: np.ndarray | None = None,
                  s_ref: np.ndarray | None = None,
                  rng: np.random.Generator | None = None,
                  keep_cache: bool = False):
    """Run (B, 32, 32) images through the network; returns (logits, cache).

    With eps given, each linear layer output entry gets independent real
    Gaussian noise of std eps_l * sqrt(s_ref_l); eps=None is the clean path
    and consumes no randomness.
    """
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    b = x.shape[0]
    act = x.reshape(b, 1, 32, 32)
    cols_list, mvm_list, z_list, noise_list, pool_shapes = [], [], [], [], []
    sides = {0: 28, 1: 10}
    for layer in range(5):
        if layer in CONV_LAYERS:
            cols = _im2col_batch(act, 5)
        else:
            cols = act.reshape(b, -1).T
        mvm = model.weights[layer] @ cols
        z = mvm + model.biases[layer][:, None]
        noise_units = None
        if eps is not None:
            noise_units = rng.standard_normal(z.shape)
            z = z + eps[layer] * np.sqrt(s_ref[layer]) * noise_units
        out = np.maximum(z, 0.0) if layer in RELU_LAYERS else z
        if layer in CONV_LAYERS:
            side = sides[layer]
            maps = out.reshape(out.shape[0], b, side, side).transpose(1, 0, 2, 3)
            pool_shapes.append(maps.shape)
            act = _avg_pool(maps)
        else:
            act = out.T
            pool_shapes.append(None)
        if keep_cache:
            cols_list.append(cols)
            mvm_list.append(mvm)
            z_list.append(z)
            noise_list.append(noise_units)
    logits = act.T  # (10, B)
    cache = None
    if keep_cache:
        cache = ForwardCache(cols_list, mvm_list, z_list, noise_list,
                             pool_shapes, logits)
    return logits, cache


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean CE in nats plus the softmax probabilities, (10, B) layout."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=0, keepdims=True)
    b = logits.shape[1]
    ce = float(-np.mean(np.log(probs[labels, np.arange(b)] + 1e-300)))
    return ce, probs


def backward_batch(model: CnnModel, cache: ForwardCache, labels: np.ndarray):
    """Gradients of the mean CE loss; also returns the per-layer deltas at
    the noise-injection points (d loss / d z_l)."""
    b = cache.logits.shape[1]
    _, probs = softmax_cross_entropy(cache.logits, labels)
    delta = probs.copy()
    delta[labels, np.arange(b)] -= 1.0
    delta /= b                                   # d loss / d logits
    grads_w, grads_b, deltas = [None] * 5, [None] * 5, [None] * 5
    for layer in range(4, -1, -1):
        if layer in RELU_LAYERS:
            delta = delta * (cache.z[layer] > 0)
        deltas[layer] = delta
        grads_w[layer] = delta @ cache.cols[layer].T
        grads_b[layer] = delta.sum(axis=1)
        if layer == 0:
            break
        d_cols = model.weights[layer].T @ delta
        if layer in CONV_LAYERS:  # only conv2 folds back, onto (B, 6, 14, 14)
            d_prev_act = _col2im_batch(d_cols, (b, 6, 14, 14), 5)
        else:
            d_prev_act = d_cols.T  # (B, features)
        prev = layer - 1
        if prev in CONV_LAYERS:
            maps_shape = cache.pool_in_shape[prev]  # (B, C, side, side)
            c_prev, side = maps_shape[1], maps_shape[2]
            d_pooled = d_prev_act.reshape(b, c_prev, side // 2, side // 2)
            d_maps = _avg_pool_grad(d_pooled)
            delta = d_maps.transpose(1, 0, 2, 3).reshape(c_prev, b * side * side)
        else:
            delta = d_prev_act.T
    return grads_w, grads_b, deltas


def calibrate_sref(model: CnnModel, calib_images: np.ndarray) -> np.ndarray:
    """Per-layer reference MVM output power: mean |W x|^2 per decoded entry."""
    if len(calib_images) < 1:
        raise ValueError("need at least one calibration sample")
    _, cache = forward_batch(model, calib_images, keep_cache=True)
    return np.array([float(np.mean(mvm ** 2)) for mvm in cache.mvm])


def _as_eps(profile) -> np.ndarray:
    """Accept either a per-layer target array or a profile object with .eps."""
    return np.asarray(getattr(profile, "eps", profile), dtype=float)


def forward_noisy(model: CnnModel, image: np.ndarray, profile,
                  s_ref: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Noise-injected logits for one image (or a batch)."""
    eps = _as_eps(profile)
    if np.all(eps == 0):
        logits, _ = forward_batch(model, image)
    else:
        logits, _ = forward_batch(model, image, eps=eps, s_ref=s_ref, rng=rng)
    return logits


def evaluate(model: CnnModel, images: np.ndarray, labels: np.ndarray,
             eps, s_ref: np.ndarray | None,
             trials: int = 1, rng: np.random.Generator | None = None,
             batch: int = 512):
    """(accuracy, cross entropy) averaged over independent noise draws."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if eps is not None:
        eps = _as_eps(eps)
    clean = eps is None or np.all(eps == 0)
    n = len(images)
    accs, ces = [], []
    for _ in range(1 if clean else trials):
        correct = 0
        ce_sum = 0.0
        for lo in range(0, n, batch):
            hi = min(lo + batch, n)
            if clean:
                logits, _ = forward_batch(model, images[lo:hi])
            else:
                logits, _ = forward_batch(model, images[lo:hi], eps=eps,
                                          s_ref=s_ref, rng=rng)
            ce, _ = softmax_cross_entropy(logits, labels[lo:hi])
            ce_sum += ce * (hi - lo)
            correct += int(np.sum(np.argmax(logits, axis=0) == labels[lo:hi]))
        accs.append(correct / n)
        ces.append(ce_sum / n)
    return float(np.mean(accs)), float(np.mean(ces))


@dataclass
class TrainConfig:
    epochs: int = 16
    batch: int = 96
    lr: float = 0.2
    lr_decay: float = 0.85
    target_accuracy: float = 0.97


def train(model: CnnModel, train_images, train_labels, eval_images,
          eval_labels, cfg: TrainConfig, rng: np.random.Generator,
          verbose: bool = False) -> float:
    """Plain mini-batch SGD on softmax CE until the eval target is reached."""
    n = len(train_images)
    lr = cfg.lr
    best = 0.0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n - cfg.batch + 1, cfg.batch):
            idx = order[lo:lo + cfg.batch]
            _, cache = forward_batch(model, train_images[idx], keep_cache=True)
            grads_w, grads_b, _ = backward_batch(model, cache, train_labels[idx])
            for layer in range(5):
                model.weights[layer] -= lr * grads_w[layer]
                model.biases[layer] -= lr * grads_b[layer]
        acc, _ = evaluate(model, eval_images, eval_labels, None, None)
        best = max(best, acc)
        if verbose:
            print(f"epoch {epoch + 1}: eval accuracy {acc:.4f}")
        if acc >= cfg.target_accuracy:
            return acc
        lr *= cfg.lr_decay
    raise TrainingDivergenceError(
        f"accuracy {best:.4f} below target {cfg.target_accuracy} "
        f"after {cfg.epochs} epochs")


def save_weights(path, model: CnnModel) -> None:
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<I", len(model.weights)))
        fh.write(b"\x00" * 8)
        for w in model.weights:
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_weights(path) -> CnnModel:
    path = Path(path)
    if not path.exists():
        raise DataMissingError(f"weight file {path} not found")
    blob = path.read_bytes()
    if blob[:4] != WEIGHT_MAGIC:
        raise ValueError(f"bad magic {blob[:4]!r} in {path}")
    n_layers = struct.unpack("<I", blob[4:8])[0]
    offset = 16
    dims = []
    for _ in range(n_layers):
        dims.append(struct.unpack("<II", blob[offset:offset + 8]))
        offset += 8
    weights, biases = [], []
    for rows, cols in dims:
        w = np.frombuffer(blob, dtype="<f4", count=rows * cols,
                          offset=offset).reshape(rows, cols)
        offset += 4 * rows * cols
        b = np.frombuffer(blob, dtype="<f4", count=rows, offset=offset)
        offset += 4 * rows
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    return CnnModel(weights, biases)


def train_or_load(dataset: dict, cfg: TrainConfig, rng: np.random.Generator,
                  weights_path=None, verbose: bool = False) -> CnnModel:
    """Load weights when the file exists, otherwise train and save them."""
    if weights_path is not None and Path(weights_path).exists():
        return load_weights(weights_path)
    for key in ("train_images", "train_labels", "eval_images", "eval_labels"):
        if key not in dataset:
            raise DataMissingError(f"dataset entry {key!r} missing")
    model = CnnModel.init_random(rng)
    train(model, dataset["train_images"], dataset["train_labels"],
          dataset["eval_images"], dataset["eval_labels"], cfg, rng,
          verbose=verbose)
    if weights_path is not None:
        save_weights(weights_path, model)
    return model
