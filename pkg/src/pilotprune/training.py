"""End-to-end training of the pilot/estimator network and NMSE evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .channel import Dataset, reference_noise_var, snr_samples
from .errors import NumericError, UsageError
from .model import (ModelConfig, ModelGraph, build_model, complex_to_image, draw_unit_noise,
                    model_forward)
from .optim import AdamState, adam_step
from .pilots import normalize_pilots
from .pruning import PruneConfig, PruneMask, apply_schedule, regularized_loss, regularizer
from .tensor import Tensor

log = logging.getLogger(__name__)

NMSE_FLOOR_DB = -100.0


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    steps: int = 20000
    batch: int = 64
    snr_db: float = 0.0
    snr_range: tuple | None = None  # (lo, hi) dB, sampled per example
    lr: float = 1e-3
    seed: int = 0
    prune: PruneConfig | None = None
    fixed_mask: PruneMask | None = None
    trace_every: int = 50
    checkpoint_every: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.steps <= 0 or self.batch < 1:
            raise UsageError(f"steps and batch must be positive, got {self.steps}, {self.batch}")
        if self.snr_range is not None:
            lo, hi = self.snr_range
            if lo > hi:
                raise UsageError(f"SNR range low end {lo} exceeds high end {hi}")
            self.snr_range = (float(lo), float(hi))
        if self.prune is not None and self.fixed_mask is not None:
            raise UsageError("a fixed mask and a pruning schedule are mutually exclusive")
        if self.prune is not None and self.prune.total_steps != self.steps:
            raise UsageError(f"pruning schedule built for {self.prune.total_steps} steps, training runs {self.steps}")

    @property
    def n_active(self):
        """Pilot budget (active resource elements) after training."""
        cfg = self.model
        size = cfg.pilot_len * cfg.n_subcarriers
        if self.fixed_mask is not None:
            return self.fixed_mask.n_active
        if self.prune is not None:
            return size - PruneMask.ones(cfg.pilot_len, cfg.n_subcarriers, self.prune.target).final_zeros()
        return size


@dataclass
class TraceRow:
    step: int
    mse: float
    reg_term: float
    sparsity: float


@dataclass
class TrainResult:
    graph: ModelGraph
    trace: list


def mse_loss(h_batch, h_hat) -> Tensor:
    """Batch mean of ||H - H_hat||^2 over real and imaginary parts.

    Either argument may be a complex (B, N, M) array or a (B, N, M, 2) tensor.
    """
    def lift(x):
        if isinstance(x, Tensor):
            return x
        x = np.asarray(x)
        return Tensor(complex_to_image(x, np.float64) if np.iscomplexobj(x) else x)

    h_batch, h_hat = lift(h_batch), lift(h_hat)
    if h_batch.shape != h_hat.shape:
        raise UsageError(f"shape mismatch {h_batch.shape} vs {h_hat.shape}")
    return T.sum_squares(T.sub(h_hat, h_batch)) / float(h_batch.shape[0])


def _freeze_rows(graph: ModelGraph):
    if not graph.pilots.trainable:
        return None
    return graph.pilots.frozen_rows(graph.mask.mask)


def train(dataset: Dataset, config: TrainConfig, graph: ModelGraph | None = None) -> TrainResult:
    cfg = config.model
    if dataset.samples.shape[1:] != (cfg.n_antennas, cfg.n_subcarriers):
        raise UsageError(f"dataset dims {dataset.samples.shape[1:]} do not match model "
                         f"({cfg.n_antennas}, {cfg.n_subcarriers})")
    rng = np.random.default_rng(config.seed)
    if graph is None:
        graph = build_model(cfg, seed=config.seed)
    if config.fixed_mask is not None:
        graph.mask = config.fixed_mask
    pilots = graph.pilots
    if pilots.trainable:
        normalize_pilots(pilots, graph.mask.mask)

    targets = complex_to_image(dataset.samples)
    samples = dataset.samples
    n_active = config.n_active
    base_var = reference_noise_var(0.0, dataset, n_active)
    fixed_var = base_var / 10 ** (config.snr_db / 10)
    params = graph.params()
    state = AdamState.for_params(params, lr=config.lr)
    prune = config.prune
    use_reg = prune is not None and prune.reg_lambda > 0 and pilots.trainable
    trace, frozen = [], _freeze_rows(graph)

    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(dataset), config.batch)
        snr = snr_samples(rng, config.batch, config.snr_db, config.snr_range)
        noise_var = base_var / 10 ** (snr / 10) if config.snr_range is not None else fixed_var
        noise = draw_unit_noise(rng, config.batch, cfg.pilot_len, cfg.n_subcarriers)

        pred = model_forward(samples[idx], graph, noise_var, noise=noise)
        mse = mse_loss(Tensor(targets[idx]), pred)
        loss, reg_value = mse, 0.0
        if use_reg:
            reg = regularizer(pilots, graph.mask)
            reg_value = reg.item()
            loss = regularized_loss(mse, reg, prune.reg_lambda)
        for p in params:
            p.grad = None
        loss.backward()
        if not np.isfinite(loss.item()):
            raise NumericError(f"training diverged at step {step}: loss={loss.item()}")

        if frozen is not None and frozen.any():
            keep = [(t, t.data[frozen].copy()) for t in (pilots.re, pilots.im)]
        else:
            keep = []
        adam_step(state, params)
        for t, values in keep:
            t.data[frozen] = values
        if pilots.trainable:
            normalize_pilots(pilots, graph.mask.mask)

        if prune is not None:
            updated = apply_schedule(prune, step, graph.mask, pilots.phi())
            if updated is not graph.mask:
                graph.mask = updated
                frozen = _freeze_rows(graph)
                if pilots.trainable:
                    normalize_pilots(pilots, graph.mask.mask)
                log.info("step %d: mask update %d, %d zeros", step, updated.updates, updated.n_zeros)

        if step % config.trace_every == 0 or step == 1:
            trace.append(TraceRow(step, mse.item(), reg_value, graph.mask.sparsity))
        if config.checkpoint_every and config.checkpoint_path and step % config.checkpoint_every == 0:
            from .persist import write_checkpoint

            write_checkpoint(graph, config.checkpoint_path)
    return TrainResult(graph, trace)


def _estimator_pilot_len(estimator):
    if hasattr(estimator, "graph"):
        return estimator.graph.config.pilot_len
    if hasattr(estimator, "p"):
        return estimator.p.shape[1]
    return 1


def eval_noise(n_samples, pilot_len, n_subcarriers, eval_seed):
    """Unit-variance observation noise shared by every estimator with this pilot length."""
    return draw_unit_noise(np.random.default_rng(eval_seed), n_samples, pilot_len, n_subcarriers)


def to_db(x):
    return NMSE_FLOOR_DB if x <= 0 else max(NMSE_FLOOR_DB, 10.0 * np.log10(x))


def nmse(h, h_hat):
    """Ratio of summed squared errors to summed channel energy."""
    h = np.asarray(h, dtype=np.complex128)
    err = np.sum(np.abs(h - np.asarray(h_hat)) ** 2)
    return float(err / np.sum(np.abs(h) ** 2))


def evaluate_nmse(estimator, dataset: Dataset, snr_db, n_active, eval_seed=2024, noise_var=None):
    """Returns (linear NMSE, NMSE in dB) over the whole test split."""
    h = dataset.samples
    if noise_var is None:
        noise_var = reference_noise_var(snr_db, dataset, n_active)
    noise = eval_noise(len(dataset), _estimator_pilot_len(estimator), h.shape[2], eval_seed)
    value = nmse(h, estimator.estimate(h, noise_var, noise))
    return value, to_db(value)
