"""
convnet.py
Compact convnet in numpy: conv 3x3 -> batchnorm -> ELU -> ceil-mode max-pool blocks,
global max-pool, dense + sigmoid outputs; binary cross-entropy loss and analytic gradients.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from config import (
    ARCH_PRESETS,
    DEFAULT_CHANNELS,
    DEFAULT_KERNEL,
    DEFAULT_POOLS,
    DEFAULT_OUTPUTS,
    DEFAULT_INPUT_SHAPE,
    ELU_ALPHA,
    BN_EPSILON,
    BN_MOMENTUM
)
from utils import TagNoiseError, ShapeError, NonFiniteActivationError, make_rng

BLOCK_TENSORS = ("conv_w", "conv_b", "bn_gain", "bn_bias", "bn_mean", "bn_var")
RUNNING_TENSORS = ("bn_mean", "bn_var")
PRECISIONS = {"f32": np.float32, "f64": np.float64}


@dataclass(frozen=True)
class ArchSpec:
    nBlocks: int = len(DEFAULT_POOLS)
    channels: tuple = DEFAULT_CHANNELS
    kernel: tuple = DEFAULT_KERNEL
    pools: tuple = DEFAULT_POOLS
    nOutputs: int = DEFAULT_OUTPUTS
    inputShape: tuple = DEFAULT_INPUT_SHAPE

    def __post_init__(self):
        channels = self.channels
        if isinstance(channels, (int, np.integer)):
            channels = (int(channels),) * self.nBlocks
        channels = tuple(int(c) for c in channels)
        pools = tuple((int(ph), int(pw)) for ph, pw in self.pools)
        kernel = tuple(int(k) for k in self.kernel)

        if self.nBlocks < 1:
            raise TagNoiseError("an architecture needs at least one block")
        if len(channels) != self.nBlocks or len(pools) != self.nBlocks:
            raise TagNoiseError(f"need {self.nBlocks} channel counts and pool sizes")
        if any(c < 1 for c in channels):
            raise TagNoiseError("channel counts must be positive")
        if any(ph < 1 or pw < 1 for ph, pw in pools):
            raise TagNoiseError("pool sizes must be positive")
        if len(kernel) != 2 or any(k < 1 or k % 2 == 0 for k in kernel):
            raise TagNoiseError("kernel sizes must be odd and positive")
        if self.nOutputs < 1:
            raise TagNoiseError("n_outputs must be at least 1")
        if len(self.inputShape) != 3 or any(int(d) < 1 for d in self.inputShape):
            raise TagNoiseError("input shape must be (channels, mel bins, frames)")

        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "pools", pools)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "inputShape", tuple(int(d) for d in self.inputShape))

    @property
    def embeddingSize(self):
        return self.channels[-1]

    def block_shapes(self):
        """(channels, height, width) after every block, ceil-mode pooling."""
        _, height, width = self.inputShape
        shapes = []
        for channels, (ph, pw) in zip(self.channels, self.pools):
            height, width = math.ceil(height / ph), math.ceil(width / pw)
            shapes.append((channels, height, width))
        return shapes


@dataclass(frozen=True)
class ModelParams:
    """tensors: name -> array; dense.w is (channels, n_outputs) so its columns are label vectors"""
    arch: ArchSpec
    tensors: dict
    tags: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [name for name in tensor_names(self.arch) if name not in self.tensors]
        if missing:
            raise TagNoiseError(f"model parameters missing tensors: {missing}")
        if self.tensors["dense.w"].shape[1] != self.arch.nOutputs:
            raise ShapeError("dense weight column count does not match n_outputs")
        if self.tags and len(self.tags) != self.arch.nOutputs:
            raise ShapeError(f"{len(self.tags)} tag names for {self.arch.nOutputs} outputs")
        object.__setattr__(self, "tags", tuple(self.tags))

    @property
    def dtype(self):
        return self.tensors["dense.w"].dtype

    def trainable(self):
        return [name for name in tensor_names(self.arch) if not name.endswith(RUNNING_TENSORS)]

    def with_tensors(self, updates):
        """Copy with some tensors replaced."""
        tensors = dict(self.tensors)
        tensors.update(updates)
        return ModelParams(self.arch, tensors, self.tags, dict(self.meta))

    def astype(self, dtype):
        tensors = {name: value.astype(dtype) for name, value in self.tensors.items()}
        return ModelParams(self.arch, tensors, self.tags, dict(self.meta))


def arch_preset(name, nOutputs=DEFAULT_OUTPUTS):
    """
    Named architecture.
    Args:
        name: 'full', 'sweep' or 'tiny'
        nOutputs: Number of tag outputs
    """
    if name not in ARCH_PRESETS:
        raise TagNoiseError(f"unknown architecture preset '{name}' (choose from {', '.join(ARCH_PRESETS)})")
    channels, pools, inputShape = ARCH_PRESETS[name]
    return ArchSpec(
        nBlocks=len(pools),
        channels=channels,
        pools=pools,
        nOutputs=nOutputs,
        inputShape=inputShape
    )

def tensor_names(arch):
    names = [f"block{b}.{kind}" for b in range(1, arch.nBlocks + 1) for kind in BLOCK_TENSORS]
    return names + ["dense.w", "dense.b"]

def init_params(arch, seed, tags=(), dtype=np.float32):
    """
    He-uniform conv and dense weights, zero biases, identity batchnorm.
    Args:
        arch: ArchSpec
        seed: Integer seed
        tags: Tag names of the outputs
        dtype: float32 or float64
    """
    rng = make_rng(seed)
    kh, kw = arch.kernel
    tensors = {}
    inChannels = arch.inputShape[0]
    for b, outChannels in enumerate(arch.channels, 1):
        limit = math.sqrt(6.0 / (inChannels * kh * kw))
        tensors[f"block{b}.conv_w"] = rng.uniform(-limit, limit, size=(outChannels, inChannels, kh, kw)).astype(dtype)
        tensors[f"block{b}.conv_b"] = np.zeros(outChannels, dtype=dtype)
        tensors[f"block{b}.bn_gain"] = np.ones(outChannels, dtype=dtype)
        tensors[f"block{b}.bn_bias"] = np.zeros(outChannels, dtype=dtype)
        tensors[f"block{b}.bn_mean"] = np.zeros(outChannels, dtype=dtype)
        tensors[f"block{b}.bn_var"] = np.ones(outChannels, dtype=dtype)
        inChannels = outChannels
    limit = math.sqrt(6.0 / inChannels)
    tensors["dense.w"] = rng.uniform(-limit, limit, size=(inChannels, arch.nOutputs)).astype(dtype)
    tensors["dense.b"] = np.zeros(arch.nOutputs, dtype=dtype)
    meta = {"init": "he_uniform", "bias_init": "zeros", "bn_init": "gain=1,bias=0", "init_seed": int(seed)}
    return ModelParams(arch=arch, tensors=tensors, tags=tuple(tags), meta=meta)

# ---- layers -----------------------------------------------------------------

def conv_forward(x, weight, bias):
    """Zero-padded stride-1 convolution as a sum of shifted tensor products."""
    n, _, height, width = x.shape
    _, _, kh, kw = weight.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((n, height, width, weight.shape[0]), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            out += np.tensordot(padded[:, :, a:a + height, b:b + width], weight[:, :, a, b], axes=([1], [1]))
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    return np.ascontiguousarray(out), padded

def conv_backward(dout, padded, weight):
    _, _, kh, kw = weight.shape
    height, width = dout.shape[2], dout.shape[3]
    ph, pw = kh // 2, kw // 2
    dweight = np.zeros_like(weight)
    dpadded = np.zeros_like(padded)
    for a in range(kh):
        for b in range(kw):
            window = padded[:, :, a:a + height, b:b + width]
            dweight[:, :, a, b] = np.tensordot(dout, window, axes=([0, 2, 3], [0, 2, 3]))
            dpadded[:, :, a:a + height, b:b + width] += np.tensordot(dout, weight[:, :, a, b], axes=([1], [0])).transpose(0, 3, 1, 2)
    dbias = dout.sum(axis=(0, 2, 3))
    dx = dpadded[:, :, ph:ph + height, pw:pw + width]
    return dx, dweight, dbias

def batchnorm_forward(x, gain, bias, runMean, runVar, mode):
    """
    Per-channel normalization over (batch, freq, time).
    Returns:
        (output, cache, running-stat update or None)
    """
    if mode == "train":
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        count = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * count / (count - 1) if count > 1 else var
        update = (
            BN_MOMENTUM * runMean + (1.0 - BN_MOMENTUM) * mean,
            BN_MOMENTUM * runVar + (1.0 - BN_MOMENTUM) * unbiased
        )
    else:
        mean, var, update = runMean, runVar, None
    invStd = 1.0 / np.sqrt(var + BN_EPSILON)
    normalized = (x - mean[None, :, None, None]) * invStd[None, :, None, None]
    out = gain[None, :, None, None] * normalized + bias[None, :, None, None]
    return out.astype(x.dtype), (normalized, invStd, gain), update

def batchnorm_backward(dout, cache):
    normalized, invStd, gain = cache
    count = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dgain = np.sum(dout * normalized, axis=(0, 2, 3))
    dbias = dout.sum(axis=(0, 2, 3))
    dnorm = dout * gain[None, :, None, None]
    sumNorm = dnorm.sum(axis=(0, 2, 3))[None, :, None, None]
    sumNormX = np.sum(dnorm * normalized, axis=(0, 2, 3))[None, :, None, None]
    dx = invStd[None, :, None, None] / count * (count * dnorm - sumNorm - normalized * sumNormX)
    return dx, dgain, dbias

def elu_forward(x, alpha=ELU_ALPHA):
    return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0)))

def elu_backward(dout, x, out, alpha=ELU_ALPHA):
    return dout * np.where(x > 0, 1.0, out + alpha)

def maxpool_forward(x, pool):
    """Ceil-mode max-pool; partial windows padded with -inf."""
    n, c, height, width = x.shape
    ph, pw = pool
    outH, outW = math.ceil(height / ph), math.ceil(width / pw)
    padded = np.pad(
        x,
        ((0, 0), (0, 0), (0, outH * ph - height), (0, outW * pw - width)),
        constant_values=-np.inf
    )
    windows = padded.reshape(n, c, outH, ph, outW, pw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, outH, outW, ph * pw)
    index = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, index[..., None], axis=-1)[..., 0]
    return out, (index, x.shape, pool)

def maxpool_backward(dout, cache):
    index, shape, (ph, pw) = cache
    n, c, height, width = shape
    outH, outW = index.shape[2], index.shape[3]
    dwindows = np.zeros((n, c, outH, outW, ph * pw), dtype=dout.dtype)
    np.put_along_axis(dwindows, index[..., None], dout[..., None], axis=-1)
    dpadded = dwindows.reshape(n, c, outH, outW, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, outH * ph, outW * pw)
    return dpadded[:, :, :height, :width]

def global_maxpool_forward(x):
    n, c = x.shape[:2]
    flat = x.reshape(n, c, -1)
    index = flat.argmax(axis=-1)
    return np.take_along_axis(flat, index[..., None], axis=-1)[..., 0], (index, x.shape)

def global_maxpool_backward(dout, cache):
    index, shape = cache
    n, c = shape[:2]
    dflat = np.zeros((n, c, shape[2] * shape[3]), dtype=dout.dtype)
    np.put_along_axis(dflat, index[..., None], dout[..., None], axis=-1)
    return dflat.reshape(shape)

def sigmoid(z):
    return special.expit(z)

# ---- network ----------------------------------------------------------------

def check_batch(arch, batch, dtype):
    """
    Validate a feature batch against the architecture input shape.
    Args:
        arch: ArchSpec
        batch: (N, C, H, W) array, or (N, H, W) for single-channel inputs
        dtype: Compute dtype
    """
    batch = np.asarray(batch)
    if batch.ndim == 3 and arch.inputShape[0] == 1:
        batch = batch[:, None]
    if batch.ndim != 4 or tuple(batch.shape[1:]) != arch.inputShape:
        raise ShapeError(f"batch shape {batch.shape} does not match (N, {', '.join(map(str, arch.inputShape))})")
    if batch.shape[0] < 1:
        raise ShapeError("empty batch")
    return batch.astype(dtype, copy=False)

def _forward(params, batch, mode):
    """Logits, backward cache and running-stat updates (train mode)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got '{mode}'")
    tensors = params.tensors
    x = check_batch(params.arch, batch, params.dtype)
    caches = []
    updates = {}

    for b, pool in enumerate(params.arch.pools, 1):
        conv, padded = conv_forward(x, tensors[f"block{b}.conv_w"], tensors[f"block{b}.conv_b"])
        normed, bnCache, update = batchnorm_forward(
            conv,
            tensors[f"block{b}.bn_gain"],
            tensors[f"block{b}.bn_bias"],
            tensors[f"block{b}.bn_mean"],
            tensors[f"block{b}.bn_var"],
            mode
        )
        activated = elu_forward(normed)
        pooled, poolCache = maxpool_forward(activated, pool)
        if not np.all(np.isfinite(pooled)):
            raise NonFiniteActivationError(b)
        if update is not None:
            updates[f"block{b}.bn_mean"] = update[0].astype(params.dtype)
            updates[f"block{b}.bn_var"] = update[1].astype(params.dtype)
        caches.append((padded, bnCache, normed, activated, poolCache))
        x = pooled

    features, globalCache = global_maxpool_forward(x)
    logits = features @ tensors["dense.w"] + tensors["dense.b"]
    return logits, (caches, globalCache, features), updates

def forward(params, batch, mode="eval"):
    """
    Per-tag probabilities in (0, 1).
    Args:
        params: ModelParams
        batch: (N, C, H, W) standardized features
        mode: 'train' uses batch statistics, 'eval' running statistics; params are never mutated
    """
    logits, _, _ = _forward(params, batch, mode)
    return sigmoid(logits)

def bce_with_logits(logits, targets):
    """
    Mean binary cross-entropy from pre-sigmoid scores and its gradient.
    Returns:
        (loss, dloss/dlogits)
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeError(f"targets shape {targets.shape} does not match outputs {logits.shape}")
    z = logits.astype(np.float64)
    loss = np.mean(np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z))))
    grad = (sigmoid(z) - targets) / z.size
    return float(loss), grad.astype(logits.dtype)

def loss(probabilities, targets):
    """
    Mean binary cross-entropy of probabilities, evaluated through their logits.
    Args:
        probabilities: (N, K) values in (0, 1)
        targets: (N, K) binary targets
    """
    p = np.clip(np.asarray(probabilities, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    logits = np.log(p) - np.log1p(-p)
    return bce_with_logits(logits, targets)[0]

def loss_and_gradients(params, batch, targets):
    """
    Train-mode loss with analytic gradients of every trainable tensor.
    Args:
        params: ModelParams
        batch: (N, C, H, W) features
        targets: (N, K) binary targets
    Returns:
        (loss, gradients by tensor name, running-stat updates by tensor name)
    """
    tensors = params.tensors
    logits, (caches, globalCache, features), updates = _forward(params, batch, "train")
    value, dlogits = bce_with_logits(logits, targets)

    grads = {
        "dense.w": features.T @ dlogits,
        "dense.b": dlogits.sum(axis=0),
    }
    dx = global_maxpool_backward(dlogits @ tensors["dense.w"].T, globalCache)

    for b in range(params.arch.nBlocks, 0, -1):
        padded, bnCache, normed, activated, poolCache = caches[b - 1]
        dx = maxpool_backward(dx, poolCache)
        dx = elu_backward(dx, normed, activated)
        dx, grads[f"block{b}.bn_gain"], grads[f"block{b}.bn_bias"] = batchnorm_backward(dx, bnCache)
        dx, grads[f"block{b}.conv_w"], grads[f"block{b}.conv_b"] = conv_backward(dx, padded, tensors[f"block{b}.conv_w"])

    grads = {name: grad.astype(params.dtype) for name, grad in grads.items()}
    return value, grads, updates

def backward(params, batch, targets):
    """
    Gradients of the mean BCE loss for every trainable tensor.
    Args:
        params: ModelParams
        batch: (N, C, H, W) features
        targets: (N, K) binary targets
    """
    return loss_and_gradients(params, batch, targets)[1]

def gradient_check(params, batch, targets, step=1e-5, names=None):
    """
    Max relative error between analytic and central-difference gradients, per tensor.
    Args:
        params: ModelParams (cast to float64 internally)
        batch: Features
        targets: Binary targets
        step: Finite-difference step
        names: Tensors to check (default: all trainable)
    """
    params = params.astype(np.float64)
    _, grads, _ = loss_and_gradients(params, batch, targets)
    errors = {}
    for name in names or params.trainable():
        tensor = params.tensors[name]
        worst = 0.0
        for position in np.ndindex(tensor.shape):
            shifted = tensor.copy()
            shifted[position] += step
            upper, _, _ = loss_and_gradients(params.with_tensors({name: shifted}), batch, targets)
            shifted[position] -= 2 * step
            lower, _, _ = loss_and_gradients(params.with_tensors({name: shifted}), batch, targets)
            numeric = (upper - lower) / (2 * step)
            analytic = float(grads[name][position])
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4))
        errors[name] = worst
    return errors
