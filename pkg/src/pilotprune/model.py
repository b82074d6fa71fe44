"""Joint pilot/estimator network.

Per subcarrier, a complex reduction layer (the pilots) produces the received
pilots, noise is added, and a complex expansion layer gives a coarse
estimate. The coarse N x M estimate, split into real and imaginary planes,
is refined by a three-layer convolution stack, optionally with a non-local
attention block after the first convolution.

Internal layout: the dense branches work on (M, ., B) stacks so that each
subcarrier is one batched matmul; the convolution stack is channels-last,
(B, N, M, C), antennas along rows and subcarriers along columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import UsageError
from .pilots import PilotSet, normalize_pilots
from .pruning import PruneMask
from .tensor import Tensor, no_grad

PAPER_WIDTH = 128


@dataclass(frozen=True)
class ModelConfig:
    n_antennas: int = 8
    n_subcarriers: int = 32
    pilot_len: int = 4
    mode: str = "dp"  # dp | sp | fft
    attention: bool = False
    conv_width: int = 32
    linear_only: bool = False

    def __post_init__(self):
        if self.mode not in ("dp", "sp", "fft"):
            raise UsageError(f"unknown pilot mode {self.mode!r}")
        if min(self.n_antennas, self.n_subcarriers, self.pilot_len, self.conv_width) < 1:
            raise UsageError("model dimensions must be positive")
        if self.pilot_len > self.n_antennas and self.mode == "fft":
            raise UsageError(f"DFT pilots need L <= N, got L={self.pilot_len} N={self.n_antennas}")
        if self.linear_only and self.attention:
            raise UsageError("a linear-only model has no attention block")

    @property
    def rx_gain(self):
        # fixed receiver gain undoing the nominal per-element pilot amplitude 1/sqrt(LM)
        return float(np.sqrt(self.pilot_len * self.n_subcarriers))

    @property
    def tag(self):
        tag = self.mode + ("-attn" if self.attention else "")
        return tag + ("-linear" if self.linear_only else "")


@dataclass
class ExpansionLayer:
    q_re: Tensor  # (M, N, L)
    q_im: Tensor
    b_re: Tensor  # (M, N, 1)
    b_im: Tensor

    def params(self):
        return [self.q_re, self.q_im, self.b_re, self.b_im]


@dataclass
class ConvStack:
    weights: list  # [(k, k, C_in, C_out)] * 3
    biases: list

    def params(self):
        return [t for pair in zip(self.weights, self.biases) for t in pair]

    @property
    def width(self):
        return self.weights[0].shape[3]


@dataclass
class AttentionBlock:
    """1x1 projections phi1, phi2, psi and the output projection z, each (C, C) plus bias."""

    weights: dict
    biases: dict

    NAMES = ("phi1", "phi2", "psi", "z")

    def params(self):
        return [t for name in self.NAMES for t in (self.weights[name], self.biases[name])]

    @property
    def width(self):
        return self.weights["z"].shape[0]


@dataclass
class ModelGraph:
    config: ModelConfig
    pilots: PilotSet
    expansion: ExpansionLayer
    conv: ConvStack | None = None
    attention: AttentionBlock | None = None
    mask: PruneMask = field(default=None)

    def __post_init__(self):
        if self.mask is None:
            self.mask = PruneMask.ones(self.config.pilot_len, self.config.n_subcarriers)

    def params(self):
        out = self.pilots.params() + self.expansion.params()
        if self.conv is not None:
            out += self.conv.params()
        if self.attention is not None:
            out += self.attention.params()
        return out

    def named_params(self):
        """Every stored block (frozen pilots included) under a stable name."""
        named = {"pilots.re": self.pilots.re, "pilots.im": self.pilots.im}
        for name in ("q_re", "q_im", "b_re", "b_im"):
            named[f"expansion.{name}"] = getattr(self.expansion, name)
        if self.conv is not None:
            for i, (w, b) in enumerate(zip(self.conv.weights, self.conv.biases)):
                named[f"conv{i + 1}.weight"] = w
                named[f"conv{i + 1}.bias"] = b
        if self.attention is not None:
            for name in AttentionBlock.NAMES:
                named[f"attention.{name}.weight"] = self.attention.weights[name]
                named[f"attention.{name}.bias"] = self.attention.biases[name]
        return named


def _gauss(rng, shape, std, dtype):
    return (rng.standard_normal(shape) * std).astype(dtype)


def init_pilots(config: ModelConfig, rng, dtype=np.float32) -> PilotSet:
    if config.mode == "fft":
        from .baselines import fft_pilots

        return fft_pilots(config.pilot_len, config.n_antennas, config.n_subcarriers, dtype)
    l, n, m = config.pilot_len, config.n_antennas, config.n_subcarriers
    blocks = 1 if config.mode == "sp" else m
    std = np.sqrt(0.5 / (l * n * m))
    re = T.parameter(_gauss(rng, (blocks, l, n), std, dtype), dtype)
    im = T.parameter(_gauss(rng, (blocks, l, n), std, dtype), dtype)
    return normalize_pilots(PilotSet(re, im, config.mode, m))


def build_model(config: ModelConfig, seed=0, dtype=np.float32) -> ModelGraph:
    rng = np.random.default_rng(seed)
    l, n, m, c = config.pilot_len, config.n_antennas, config.n_subcarriers, config.conv_width
    pilots = init_pilots(config, rng, dtype)
    std = np.sqrt(0.5 / l)
    expansion = ExpansionLayer(
        T.parameter(_gauss(rng, (m, n, l), std, dtype), dtype),
        T.parameter(_gauss(rng, (m, n, l), std, dtype), dtype),
        T.parameter(_gauss(rng, (m, n, 1), std, dtype), dtype),
        T.parameter(_gauss(rng, (m, n, 1), std, dtype), dtype),
    )
    conv = attention = None
    if not config.linear_only:
        shapes = [(5, 2, c, True), (3, c, c, True), (3, c, 2, False)]
        weights, biases = [], []
        for k, cin, cout, relu_after in shapes:
            fan_in = k * k * cin
            weights.append(T.parameter(_gauss(rng, (k, k, cin, cout), np.sqrt((2.0 if relu_after else 1.0) / fan_in), dtype), dtype))
            biases.append(T.parameter(np.zeros(cout), dtype))
        conv = ConvStack(weights, biases)
        if config.attention:
            aw, ab = {}, {}
            for name in AttentionBlock.NAMES:
                # zero output projection: the block starts as the identity map
                std_a = 0.0 if name == "z" else np.sqrt(1.0 / c)
                aw[name] = T.parameter(_gauss(rng, (c, c), std_a, dtype), dtype)
                ab[name] = T.parameter(np.zeros(c), dtype)
            attention = AttentionBlock(aw, ab)
    return ModelGraph(config, pilots, expansion, conv, attention)


def _channel_planes(h, dtype):
    """Complex (B, N, M) -> constant real/imag tensors of shape (M, N, B)."""
    h = np.asarray(h)
    hr = np.ascontiguousarray(h.real.transpose(2, 1, 0), dtype=dtype)
    hi = np.ascontiguousarray(h.imag.transpose(2, 1, 0), dtype=dtype)
    return Tensor(hr), Tensor(hi)


def draw_unit_noise(rng, batch, pilot_len, n_subcarriers):
    """Standard circular complex Gaussian noise, shape (B, L, M)."""
    z = rng.standard_normal((2, batch, pilot_len, n_subcarriers))
    return (z[0] + 1j * z[1]) / np.sqrt(2.0)


def reduction_forward(h, pilots: PilotSet, mask, noise_var, rng=None, noise=None):
    """Received pilots Y = mask * (P_m h_m + n_m), as (re, im) tensors of shape (M, L, B).

    ``noise`` (complex (B, L, M), unit variance) overrides drawing from ``rng``;
    with neither, the observation is noiseless. ``noise_var`` is a scalar or a
    per-sample (B,) array.
    """
    dtype = pilots.re.dtype
    hr, hi = _channel_planes(h, dtype)
    pr, pi = pilots.re, pilots.im
    yr = T.sub(T.matmul(pr, hr), T.matmul(pi, hi))
    yi = T.add(T.matmul(pi, hr), T.matmul(pr, hi))
    batch = hr.shape[2]
    if noise is None and rng is not None:
        noise = draw_unit_noise(rng, batch, pilots.pilot_len, pilots.n_subcarriers)
    if noise is not None:
        std = np.sqrt(np.broadcast_to(np.asarray(noise_var, dtype=np.float64), (batch,)))
        n = np.asarray(noise).transpose(2, 1, 0) * std  # (M, L, B)
        yr = T.add(yr, n.real.astype(dtype))
        yi = T.add(yi, n.imag.astype(dtype))
    if mask is not None:
        m = np.asarray(mask.mask if isinstance(mask, PruneMask) else mask, dtype=dtype).T[:, :, None]
        yr, yi = T.mul(yr, m), T.mul(yi, m)
    return yr, yi


def expansion_forward(yr, yi, expansion: ExpansionLayer, gain=1.0):
    """Coarse estimate Q_m y_m + b_m as (re, im) tensors of shape (M, N, B)."""
    if gain != 1.0:
        yr, yi = yr * gain, yi * gain
    qr, qi = expansion.q_re, expansion.q_im
    hr = T.add(T.sub(T.matmul(qr, yr), T.matmul(qi, yi)), expansion.b_re)
    hi = T.add(T.add(T.matmul(qi, yr), T.matmul(qr, yi)), expansion.b_im)
    return hr, hi


def to_image(hr, hi):
    """(M, N, B) planes -> (B, N, M, 2) channels-last map."""
    return T.transpose(T.stack([hr, hi], axis=-1), (2, 1, 0, 3))


def attention_weights(f: Tensor, block: AttentionBlock):
    """Row-softmax of theta^T kappa over all S = N*M positions, (B, S, S)."""
    b, h, w, c = f.shape
    flat = T.reshape(f, (b, h * w, c))
    theta = T.add(T.matmul(flat, block.weights["phi1"]), block.biases["phi1"])
    kappa = T.add(T.matmul(flat, block.weights["phi2"]), block.biases["phi2"])
    return T.softmax(T.matmul(theta, T.transpose(kappa, (0, 2, 1))), axis=-1), flat


def attention_forward(f: Tensor, block: AttentionBlock) -> Tensor:
    """Non-local block on a (B, N, M, C) map with a residual connection."""
    b, h, w, c = f.shape
    if c != block.width:
        raise UsageError(f"attention width {block.width} does not match {c} input channels")
    a, flat = attention_weights(f, block)
    nu = T.add(T.matmul(flat, block.weights["psi"]), block.biases["psi"])
    g = T.matmul(a, nu)
    out = T.add(T.add(T.matmul(g, block.weights["z"]), block.biases["z"]), flat)
    return T.reshape(out, (b, h, w, c))


def conv_forward(x, stack: ConvStack, attention: AttentionBlock | None = None) -> Tensor:
    """Three 'same' convolutions (ReLU, ReLU, linear) on a (B, N, M, 2) map."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != 2:
        raise UsageError(f"conv stack expects 2 input planes, got {x.shape[-1]}")
    (w1, w2, w3), (b1, b2, b3) = stack.weights, stack.biases
    a = T.relu(T.conv2d(x, w1, b1))
    if attention is not None:
        a = attention_forward(a, attention)
    a = T.relu(T.conv2d(a, w2, b2))
    return T.conv2d(a, w3, b3)


def model_forward(h, graph: ModelGraph, noise_var, rng=None, noise=None, stage="final") -> Tensor:
    """Channel estimate as a (B, N, M, 2) tensor; ``stage='fc'`` stops after the expansion layers."""
    cfg = graph.config
    yr, yi = reduction_forward(h, graph.pilots, graph.mask, noise_var, rng, noise)
    hr, hi = expansion_forward(yr, yi, graph.expansion, cfg.rx_gain)
    x = to_image(hr, hi)
    if graph.conv is None or stage == "fc":
        return x
    return conv_forward(x, graph.conv, graph.attention)


def image_to_complex(x):
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    return x[..., 0].astype(np.float64) + 1j * x[..., 1].astype(np.float64)


def complex_to_image(h, dtype=np.float32):
    h = np.asarray(h)
    return np.stack([h.real, h.imag], axis=-1).astype(dtype)


def predict(graph: ModelGraph, h, noise_var, rng=None, noise=None, stage="final", chunk=128):
    """Complex (B, N, M) estimate, evaluated without recording the graph."""
    h = np.asarray(h)
    out = np.empty(h.shape, dtype=np.complex128)
    with no_grad():
        for s in range(0, h.shape[0], chunk):
            sl = slice(s, s + chunk)
            nv = noise_var if np.ndim(noise_var) == 0 else np.asarray(noise_var)[sl]
            nz = None if noise is None else noise[sl]
            out[sl] = image_to_complex(model_forward(h[sl], graph, nv, rng, nz, stage))
    return out


class ModelEstimator:
    """Adapter giving a trained graph the estimator interface used in evaluation."""

    def __init__(self, graph: ModelGraph, stage="final", name=None):
        self.graph = graph
        self.stage = stage
        self.name = name or graph.config.tag

    def estimate(self, h, noise_var, unit_noise):
        return predict(self.graph, h, noise_var, noise=unit_noise, stage=self.stage)


def conv_params_paper(width=PAPER_WIDTH):
    """Conv-stack count with (kernel area + 1) per output channel."""
    return width * (5 * 5 + 1) + width * (3 * 3 + 1) + 2 * (3 * 3 + 1)


def attention_params_paper(width=PAPER_WIDTH):
    return 4 * width * (width * 1 * 1 + 1)


def table_param_count(estimator, pilot_len, n_antennas, n_subcarriers, width=PAPER_WIDTH):
    """Trainable-parameter formulas for the compared estimators."""
    l, n, m = pilot_len, n_antennas, n_subcarriers
    c1, c2 = conv_params_paper(width), attention_params_paper(width)
    formulas = {
        "dp-attn": 2 * l * n * m + c1 + c2,
        "dp": 2 * l * n * m + c1,
        "sp": 2 * l * n + c1,
        "sp-attn": 2 * l * n + c1 + c2,
        "fft": c1,
        "fft-attn": c1 + c2,
        "lmmse": 2 * n * n * m + 2 * n * m + 1,
        "extended-lmmse": 2 * n * n * m * m + 2 * n * m + 1,
    }
    if estimator not in formulas:
        raise UsageError(f"no parameter formula for {estimator!r}")
    return formulas[estimator]


def param_count(graph: ModelGraph, formula_mode="paper"):
    cfg = graph.config
    if formula_mode == "paper":
        if cfg.linear_only:
            return 2 * cfg.pilot_len * cfg.n_antennas * (1 if cfg.mode == "sp" else cfg.n_subcarriers)
        return table_param_count(cfg.mode + ("-attn" if cfg.attention else ""), cfg.pilot_len,
                                 cfg.n_antennas, cfg.n_subcarriers, cfg.conv_width)
    if formula_mode == "actual":
        return int(sum(t.data.size for t in graph.named_params().values()))
    raise UsageError(f"formula_mode must be 'paper' or 'actual', got {formula_mode!r}")
