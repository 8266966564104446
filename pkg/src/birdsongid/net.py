"""Multi-modal convolutional network with hand-written backpropagation.

The spectrogram branch is four conv(3x3, same) -> ELU -> maxpool(2x2)
blocks; the metadata branch is one dense -> ELU layer; both feed a dense
head with dropout and a softmax output. Everything is plain numpy:
forward ops cache what their backward pass needs, and gradients are
assembled explicitly in loss_and_gradients.

Convolutions are computed as a sum over the nine kernel offsets, each a
single matmul over channels, which keeps peak memory at one input-sized
slice instead of a full im2col buffer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

METADATA_SIZE = 7


@dataclass(frozen=True)
class NetworkConfig:
    num_classes: int
    conv_filters: tuple[int, int, int, int] = (64, 64, 128, 128)
    kernel_size: int = 3
    metadata_units: int = 100
    head_units: int = 512
    dropout_input: float = 0.2
    dropout_flatten: float = 0.4
    dropout_head: float = 0.4
    input_shape: tuple[int, int] = (80, 512)
    metadata_size: int = METADATA_SIZE

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if len(self.conv_filters) != 4 or any(f < 1 for f in self.conv_filters):
            raise ValueError("conv_filters must be four positive counts")
        if self.kernel_size % 2 != 1 or self.kernel_size < 1:
            raise ValueError("kernel_size must be odd (same padding)")
        for name in ("dropout_input", "dropout_flatten", "dropout_head"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} {rate} outside [0, 1)")
        if min(self.input_shape) < 1 or self.metadata_units < 1 \
                or self.head_units < 1 or self.metadata_size < 1:
            raise ValueError("layer sizes must be positive")

    def conv_output_shape(self) -> tuple[int, int]:
        """Spatial shape after the four pooling stages."""
        h, w = self.input_shape
        for _ in self.conv_filters:
            h = h // 2 if h >= 2 else h
            w = w // 2 if w >= 2 else w
        return h, w

    def flat_size(self) -> int:
        h, w = self.conv_output_shape()
        return self.conv_filters[-1] * h * w


@dataclass
class NetworkParams:
    """Learnable tensors plus per-tensor optimizer velocity, keyed by name."""

    tensors: dict[str, np.ndarray]
    velocities: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.velocities:
            self.velocities = {k: np.zeros_like(v)
                               for k, v in self.tensors.items()}
        if set(self.velocities) != set(self.tensors):
            raise ValueError("velocity keys do not match tensor keys")
        for k in self.tensors:
            if self.velocities[k].shape != self.tensors[k].shape:
                raise ValueError(f"velocity shape mismatch for {k!r}")


def _he_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator,
                dtype) -> np.ndarray:
    # Uniform on [-sqrt(6/fan_in), +sqrt(6/fan_in)] has variance 2/fan_in.
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(cfg: NetworkConfig, rng: np.random.Generator,
                dtype=np.float32) -> NetworkParams:
    """Fan-in-scaled uniform weights, zero biases, zero velocities."""
    k = cfg.kernel_size
    tensors: dict[str, np.ndarray] = {}
    in_channels = 1
    for i, filters in enumerate(cfg.conv_filters):
        fan_in = in_channels * k * k
        tensors[f"conv{i}_w"] = _he_uniform((filters, in_channels, k, k),
                                            fan_in, rng, dtype)
        tensors[f"conv{i}_b"] = np.zeros(filters, dtype=dtype)
        in_channels = filters
    tensors["meta_w"] = _he_uniform((cfg.metadata_size, cfg.metadata_units),
                                    cfg.metadata_size, rng, dtype)
    tensors["meta_b"] = np.zeros(cfg.metadata_units, dtype=dtype)
    joined = cfg.flat_size() + cfg.metadata_units
    tensors["head_w"] = _he_uniform((joined, cfg.head_units), joined, rng, dtype)
    tensors["head_b"] = np.zeros(cfg.head_units, dtype=dtype)
    tensors["out_w"] = _he_uniform((cfg.head_units, cfg.num_classes),
                                   cfg.head_units, rng, dtype)
    tensors["out_b"] = np.zeros(cfg.num_classes, dtype=dtype)
    return NetworkParams(tensors)


# ---------------------------------------------------------------------------
# Elementary ops. Each forward returns what its backward needs.

def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad_out * np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stride-1 cross-correlation with zero same-padding.

    x: (N, C, H, W); w: (F, C, k, k); b: (F,). Output (N, F, H, W).
    """
    n, c, h, wd = x.shape
    f, cw, k, k2 = w.shape
    if cw != c or k != k2:
        raise ValueError(f"kernel {w.shape} incompatible with input {x.shape}")
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty((n, f, h, wd), dtype=np.result_type(x, w))
    out[:] = b[None, :, None, None]
    for u in range(k):
        for v in range(k):
            out += np.einsum("ncij,fc->nfij", xp[:, :, u:u + h, v:v + wd],
                             w[:, :, u, v], optimize=True)
    return out


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) of conv2d under upstream grad_out."""
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for u in range(k):
        for v in range(k):
            sl = xp[:, :, u:u + h, v:v + wd]
            gw[:, :, u, v] = np.einsum("nfij,ncij->fc", grad_out, sl,
                                       optimize=True)
            gxp[:, :, u:u + h, v:v + wd] += np.einsum(
                "nfij,fc->ncij", grad_out, w[:, :, u, v], optimize=True)
    gx = gxp[:, :, pad:pad + h, pad:pad + wd]
    gb = grad_out.sum(axis=(0, 2, 3))
    return gx, gw, gb


def maxpool2d(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 stride-2 max pooling; odd trailing rows/cols dropped, spatial
    dims already at 1 pass through. Returns (output, argmax indices);
    ties route to the first (top-left-most) element of the window.
    """
    n, c, h, w = x.shape
    kh = 2 if h >= 2 else 1
    kw = 2 if w >= 2 else 1
    oh, ow = h // kh, w // kw
    windows = x[:, :, :oh * kh, :ow * kw] \
        .reshape(n, c, oh, kh, ow, kw).transpose(0, 1, 2, 4, 3, 5) \
        .reshape(n, c, oh, ow, kh * kw)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2d_backward(grad_out: np.ndarray, x_shape: tuple[int, ...],
                       idx: np.ndarray) -> np.ndarray:
    n, c, h, w = x_shape
    kh = 2 if h >= 2 else 1
    kw = 2 if w >= 2 else 1
    oh, ow = h // kh, w // kw
    windows = np.zeros((n, c, oh, ow, kh * kw), dtype=grad_out.dtype)
    np.put_along_axis(windows, idx[..., None], grad_out[..., None], axis=-1)
    gx = np.zeros((n, c, h, w), dtype=grad_out.dtype)
    gx[:, :, :oh * kh, :ow * kw] = windows \
        .reshape(n, c, oh, ow, kh, kw).transpose(0, 1, 2, 4, 3, 5) \
        .reshape(n, c, oh * kh, ow * kw)
    return gx


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def dense_backward(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return grad_out @ w.T, x.T @ grad_out, grad_out.sum(axis=0)


def dropout_mask(shape: tuple[int, ...], rate: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability rate, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x: np.ndarray, rate: float, mode: str,
            rng: np.random.Generator | None = None) -> np.ndarray:
    if mode == "infer":
        return x
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    return x * dropout_mask(x.shape, rate, rng)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, target):
    """Stable cross-entropy of softmax(logits) against integer target(s).

    1-D logits with a scalar target give (scalar loss, (K,) grad); 2-D
    logits with a target vector give per-sample losses and grads (no
    batch averaging here). grad = softmax - onehot.
    """
    single = logits.ndim == 1
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(target, dtype=int))
    if np.any(targets < 0) or np.any(targets >= z.shape[1]):
        raise ValueError("target class out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    losses = lse - shifted[rows, targets]
    grads = softmax(z)
    grads[rows, targets] -= 1.0
    if single:
        return float(losses[0]), grads[0]
    return losses, grads


def sgd_nesterov_step(params: NetworkParams, grads: dict[str, np.ndarray],
                      lr: float, momentum: float) -> NetworkParams:
    """In-place Nesterov update: v <- mu*v - lr*g; p <- p + mu*v - lr*g."""
    for key, tensor in params.tensors.items():
        g = grads[key]
        v = params.velocities[key]
        v *= momentum
        v -= lr * g
        tensor += momentum * v - lr * g
    return params


# ---------------------------------------------------------------------------
# Full network.

def _as_batches(spec, meta):
    spec = np.asarray(spec)
    meta = np.asarray(meta)
    single = spec.ndim == 2
    if single:
        spec = spec[None]
        meta = meta[None]
    if spec.ndim != 3 or meta.ndim != 2 or spec.shape[0] != meta.shape[0]:
        raise ValueError(
            f"incompatible batch shapes {spec.shape} / {meta.shape}")
    return spec, meta, single


def _forward_pass(spec: np.ndarray, meta: np.ndarray, params: NetworkParams,
                  cfg: NetworkConfig, mode: str,
                  rng: np.random.Generator | None) -> tuple[np.ndarray, dict]:
    """Logits plus every intermediate the backward pass reuses."""
    if spec.shape[1:] != cfg.input_shape:
        raise ValueError(f"spectrogram shape {spec.shape[1:]} != {cfg.input_shape}")
    if meta.shape[1] != cfg.metadata_size:
        raise ValueError(f"metadata size {meta.shape[1]} != {cfg.metadata_size}")
    t = params.tensors
    dtype = t["out_w"].dtype
    cache: dict = {"mode": mode}

    x = spec.astype(dtype)[:, None]  # (N, 1, H, W)
    x = dropout(x, cfg.dropout_input, mode, rng)
    cache["conv_in"] = []
    cache["pre_act"] = []
    cache["pool"] = []
    for i in range(4):
        z = conv2d(x, t[f"conv{i}_w"], t[f"conv{i}_b"])
        a = elu(z)
        pooled, idx = maxpool2d(a)
        cache["conv_in"].append(x)
        cache["pre_act"].append(z)
        cache["pool"].append((a.shape, idx))
        x = pooled
    flat = x.reshape(x.shape[0], -1)
    if mode == "train":
        cache["flat_mask"] = dropout_mask(flat.shape, cfg.dropout_flatten, rng)
        flat_d = flat * cache["flat_mask"]
    else:
        flat_d = flat

    m = meta.astype(dtype)
    z_meta = dense(m, t["meta_w"], t["meta_b"])
    a_meta = elu(z_meta)

    joined = np.concatenate([flat_d, a_meta], axis=1)
    z_head = dense(joined, t["head_w"], t["head_b"])
    a_head = elu(z_head)
    if mode == "train":
        cache["head_mask"] = dropout_mask(a_head.shape, cfg.dropout_head, rng)
        head_d = a_head * cache["head_mask"]
    else:
        head_d = a_head
    logits = dense(head_d, t["out_w"], t["out_b"])

    cache.update(flat=flat, meta_in=m, z_meta=z_meta, joined=joined,
                 z_head=z_head, head_d=head_d)
    return logits, cache


def forward(spec, meta, params: NetworkParams, cfg: NetworkConfig,
            mode: str = "infer",
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Class probabilities for one sample (2-D spec) or a batch (3-D)."""
    spec_b, meta_b, single = _as_batches(spec, meta)
    logits, _ = _forward_pass(spec_b, meta_b, params, cfg, mode, rng)
    probs = softmax(logits)
    return probs[0] if single else probs


def loss_and_gradients(spec, meta, labels, params: NetworkParams,
                       cfg: NetworkConfig, rng: np.random.Generator
                       ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its parameter gradients
    (train mode: all three dropout sites active)."""
    spec_b, meta_b, _ = _as_batches(spec, meta)
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    n = spec_b.shape[0]
    logits, cache = _forward_pass(spec_b, meta_b, params, cfg, "train", rng)
    losses, dlogits = softmax_cross_entropy(logits, labels)
    loss = float(np.mean(losses))
    dlogits = (dlogits / n).astype(logits.dtype)

    t = params.tensors
    grads: dict[str, np.ndarray] = {}
    g_head_d, grads["out_w"], grads["out_b"] = dense_backward(
        dlogits, cache["head_d"], t["out_w"])
    if "head_mask" in cache:
        g_head_d = g_head_d * cache["head_mask"]
    g_z_head = elu_backward(g_head_d, cache["z_head"])
    g_joined, grads["head_w"], grads["head_b"] = dense_backward(
        g_z_head, cache["joined"], t["head_w"])

    flat_size = cache["flat"].shape[1]
    g_flat = g_joined[:, :flat_size]
    g_a_meta = g_joined[:, flat_size:]
    g_z_meta = elu_backward(g_a_meta, cache["z_meta"])
    _, grads["meta_w"], grads["meta_b"] = dense_backward(
        g_z_meta, cache["meta_in"], t["meta_w"])

    if "flat_mask" in cache:
        g_flat = g_flat * cache["flat_mask"]
    last_pool_shape = (n, cfg.conv_filters[-1], *cfg.conv_output_shape())
    g = g_flat.reshape(last_pool_shape)
    for i in reversed(range(4)):
        act_shape, idx = cache["pool"][i]
        g = maxpool2d_backward(g, act_shape, idx)
        g = elu_backward(g, cache["pre_act"][i])
        g, grads[f"conv{i}_w"], grads[f"conv{i}_b"] = conv2d_backward(
            g, cache["conv_in"][i], t[f"conv{i}_w"])
    return loss, grads
