"""The learnable quality head and its hand-written reverse pass.

Input is a difference tensor shaped [feature][band][frame]. Pipeline:

    pre-weight (per feature and band)
    -> three 1x1 convolutions over the channel axis, LeakyReLU after each
    -> learned weighting over bands
    -> auto-pool over frames (softmax weights exp(alpha * h), one alpha per channel)
    -> dense 6->16, LeakyReLU -> dense 16->1 -> sigmoid

All arithmetic is float64; model files store float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DataError, NumericalError

CONV_CHANNELS = (16, 16, 6)
HIDDEN_DIM = 16
REFERENCE_PARAM_COUNT = 730
MODEL_MAGIC = b"QSTA"
MODEL_VERSION = 1
FREQ_SOFTMAX, FREQ_LINEAR = 0, 1
NO_PREWEIGHT_FLAG = 0x100
_SCORE_LO = float(np.finfo(np.float64).tiny)
_SCORE_HI = float(np.nextafter(1.0, 0.0))

PARAM_ORDER = (
    "pre_weight",
    "conv1_w", "conv1_b",
    "conv2_w", "conv2_b",
    "conv3_w", "conv3_b",
    "freq_logits",
    "alpha",
    "fc1_w", "fc1_b",
    "fc2_w", "fc2_b",
)


@dataclass(frozen=True)
class NetConfig:
    feature_count: int = 4
    band_count: int = 32
    leaky_slope: float = 0.01
    use_preweight: bool = True
    freq_weighting: int = FREQ_SOFTMAX
    frame_ms: int = 40
    conv_channels: tuple[int, int, int] = CONV_CHANNELS
    hidden_dim: int = HIDDEN_DIM

    def __post_init__(self):
        if self.feature_count not in (3, 4):
            raise DataError("feature_count must be 3 or 4")
        if tuple(self.conv_channels) != CONV_CHANNELS or self.hidden_dim != HIDDEN_DIM:
            raise DataError("conv channels are fixed at (16, 16, 6) with a 16-unit dense layer")
        if self.freq_weighting not in (FREQ_SOFTMAX, FREQ_LINEAR):
            raise DataError(f"unknown frequency weighting mode {self.freq_weighting}")
        if self.band_count < 1:
            raise DataError("band_count must be >= 1")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        f, b = self.feature_count, self.band_count
        c1, c2, c3 = self.conv_channels
        return {
            "pre_weight": (f, b),
            "conv1_w": (c1, f), "conv1_b": (c1,),
            "conv2_w": (c2, c1), "conv2_b": (c2,),
            "conv3_w": (c3, c2), "conv3_b": (c3,),
            "freq_logits": (b,),
            "alpha": (c3,),
            "fc1_w": (self.hidden_dim, c3), "fc1_b": (self.hidden_dim,),
            "fc2_w": (1, self.hidden_dim), "fc2_b": (1,),
        }

    def trainable(self) -> tuple[str, ...]:
        return PARAM_ORDER if self.use_preweight else PARAM_ORDER[1:]


@dataclass
class ModelParams:
    pre_weight: np.ndarray
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    conv3_w: np.ndarray
    conv3_b: np.ndarray
    freq_logits: np.ndarray
    alpha: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in PARAM_ORDER:
            yield name, getattr(self, name)

    def copy(self) -> ModelParams:
        return ModelParams(**{k: v.copy() for k, v in self.items()})

    @classmethod
    def zeros_like(cls, other: ModelParams) -> ModelParams:
        return cls(**{k: np.zeros_like(v) for k, v in other.items()})

    def flat(self, names=PARAM_ORDER) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in names])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for _, v in self.items())


ParamGrads = ModelParams


def param_count(config: NetConfig) -> int:
    shapes = config.shapes()
    return sum(int(np.prod(shapes[n])) for n in config.trainable())


def init_params(config: NetConfig, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases, identity-like weighting stages.

    Values are rounded to float32 so that a saved model reloads bit-identical.
    """
    rng = np.random.default_rng(seed)
    values = {}
    for name, shape in config.shapes().items():
        if name.endswith("_w"):
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            values[name] = rng.uniform(-limit, limit, size=shape)
        elif name == "pre_weight":
            values[name] = np.ones(shape)
        elif name == "freq_logits" and config.freq_weighting == FREQ_LINEAR:
            values[name] = np.full(shape, 1.0 / config.band_count)
        else:
            values[name] = np.zeros(shape)
    return quantize(ModelParams(**values))


def quantize(params: ModelParams) -> ModelParams:
    return ModelParams(**{k: v.astype(np.float32).astype(np.float64) for k, v in params.items()})


def _leaky(z, slope):
    return np.where(z > 0, z, slope * z)


def _leaky_grad(z, slope):
    return np.where(z > 0, 1.0, slope)


def _softmax(v, axis=-1):
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def auto_pool(h: np.ndarray, alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Softmax-weighted mean of ``h`` [channel][frame] along frames.

    Returns the pooled vector and the per-frame weights.
    """
    weights = _softmax(alpha[:, None] * h, axis=1)
    return np.sum(weights * h, axis=1), weights


@dataclass
class ForwardCache:
    diff: np.ndarray
    x1: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    z3: np.ndarray
    a3: np.ndarray
    band_weights: np.ndarray
    h: np.ndarray
    pool_weights: np.ndarray
    g: np.ndarray
    u: np.ndarray
    v: np.ndarray
    score: float
    config: NetConfig = field(repr=False)


def forward(diff, params: ModelParams, config: NetConfig) -> tuple[float, ForwardCache]:
    """Score in (0, 1) for one difference tensor, plus the cache for backward."""
    d = np.asarray(getattr(diff, "values", diff), dtype=np.float64)
    f, b = config.feature_count, config.band_count
    if d.ndim != 3 or d.shape[:2] != (f, b) or d.shape[2] < 1:
        raise DataError(f"difference tensor shape {d.shape} does not match ({f}, {b}, T)")
    if not np.all(np.isfinite(d)):
        raise NumericalError("non-finite features")
    slope = config.leaky_slope
    t = d.shape[2]

    x1 = d * params.pre_weight[:, :, None] if config.use_preweight else d
    flat = x1.reshape(f, b * t)
    z1 = params.conv1_w @ flat + params.conv1_b[:, None]
    a1 = _leaky(z1, slope)
    z2 = params.conv2_w @ a1 + params.conv2_b[:, None]
    a2 = _leaky(z2, slope)
    z3 = params.conv3_w @ a2 + params.conv3_b[:, None]
    a3 = _leaky(z3, slope).reshape(-1, b, t)

    if config.freq_weighting == FREQ_SOFTMAX:
        band_weights = _softmax(params.freq_logits)
    else:
        band_weights = params.freq_logits
    h = np.einsum("b,cbt->ct", band_weights, a3)
    g, pool_weights = auto_pool(h, params.alpha)

    u = params.fc1_w @ g + params.fc1_b
    v = _leaky(u, slope)
    o = float((params.fc2_w @ v + params.fc2_b)[0])
    score = 1.0 / (1.0 + np.exp(-o)) if o >= 0 else np.exp(o) / (1.0 + np.exp(o))
    # the sigmoid range is open; saturated logits round onto its endpoints
    score = min(max(score, _SCORE_LO), _SCORE_HI)
    cache = ForwardCache(d, x1, z1, a1, z2, a2, z3, a3, band_weights, h, pool_weights,
                         g, u, v, float(score), config)
    return float(score), cache


def backward(cache: ForwardCache, params: ModelParams, config: NetConfig,
             d_score: float = 1.0) -> ParamGrads:
    """Exact gradient of ``d_score * score`` with respect to every parameter."""
    if cache.config != config or cache.x1.shape[:2] != params.pre_weight.shape:
        raise DataError("forward cache does not match this model")
    slope = config.leaky_slope
    f, b, t = cache.diff.shape
    grads = ModelParams.zeros_like(params)

    do = d_score * cache.score * (1.0 - cache.score)
    grads.fc2_w = do * cache.v[None, :]
    grads.fc2_b = np.array([do])
    du = (params.fc2_w[0] * do) * _leaky_grad(cache.u, slope)
    grads.fc1_w = np.outer(du, cache.g)
    grads.fc1_b = du
    dg = params.fc1_w.T @ du

    # auto-pool: g = sum_t p_t h_t with p = softmax(alpha * h)
    h, p, g = cache.h, cache.pool_weights, cache.g
    centred = h - g[:, None]
    grads.alpha = dg * np.sum(p * h * centred, axis=1)
    dh = dg[:, None] * p * (1.0 + params.alpha[:, None] * centred)

    w = cache.band_weights
    dw = np.einsum("ct,cbt->b", dh, cache.a3)
    if config.freq_weighting == FREQ_SOFTMAX:
        grads.freq_logits = w * (dw - np.dot(w, dw))
    else:
        grads.freq_logits = dw
    da3 = (w[None, :, None] * dh[:, None, :]).reshape(-1, b * t)

    dz3 = da3 * _leaky_grad(cache.z3, slope)
    grads.conv3_w = dz3 @ cache.a2.T
    grads.conv3_b = dz3.sum(axis=1)
    dz2 = (params.conv3_w.T @ dz3) * _leaky_grad(cache.z2, slope)
    grads.conv2_w = dz2 @ cache.a1.T
    grads.conv2_b = dz2.sum(axis=1)
    dz1 = (params.conv2_w.T @ dz2) * _leaky_grad(cache.z1, slope)
    grads.conv1_w = dz1 @ cache.x1.reshape(f, b * t).T
    grads.conv1_b = dz1.sum(axis=1)
    if config.use_preweight:
        dx1 = (params.conv1_w.T @ dz1).reshape(f, b, t)
        grads.pre_weight = np.sum(dx1 * cache.diff, axis=2)
    return grads


# -- serialization ---------------------------------------------------------

def _mode_word(config: NetConfig) -> int:
    return config.freq_weighting | (0 if config.use_preweight else NO_PREWEIGHT_FLAG)


def model_bytes(params: ModelParams, config: NetConfig) -> bytes:
    header = MODEL_MAGIC + struct.pack(
        "<IIIII", MODEL_VERSION, config.feature_count, config.band_count, config.frame_ms,
        _mode_word(config),
    )
    body = params.flat(config.trainable()).astype("<f4").tobytes()
    return header + body


def save_params(params: ModelParams, config: NetConfig, path) -> None:
    Path(path).write_bytes(model_bytes(params, config))


def load_params(path, expect: NetConfig | None = None) -> tuple[ModelParams, NetConfig]:
    """Read a model file; optionally check it against an expected config."""
    raw = Path(path).read_bytes()
    if len(raw) < 24 or raw[:4] != MODEL_MAGIC:
        raise DataError("incompatible model file: bad magic")
    version, f, b, frame_ms, mode = struct.unpack("<IIIII", raw[4:24])
    if version != MODEL_VERSION:
        raise DataError(f"incompatible model file: version {version}")
    try:
        config = NetConfig(
            feature_count=f, band_count=b, frame_ms=frame_ms,
            freq_weighting=mode & 0xFF, use_preweight=not (mode & NO_PREWEIGHT_FLAG),
        )
    except DataError as exc:
        raise DataError(f"incompatible model file: {exc}") from None
    if expect is not None and (expect.feature_count, expect.band_count) != (f, b):
        raise DataError(
            f"incompatible model file: F={f}, B={b} but pipeline expects "
            f"F={expect.feature_count}, B={expect.band_count}"
        )
    flat = np.frombuffer(raw[24:], dtype="<f4").astype(np.float64)
    shapes = config.shapes()
    if flat.size != param_count(config):
        raise DataError("incompatible model file: parameter block has the wrong size")
    values, pos = {}, 0
    for name in PARAM_ORDER:
        shape = shapes[name]
        if name not in config.trainable():
            values[name] = np.ones(shape)
            continue
        n = int(np.prod(shape))
        values[name] = flat[pos:pos + n].reshape(shape).copy()
        pos += n
    return ModelParams(**values), config
