"""Closed-form estimators: per-subcarrier and extended LMMSE, LS, DFT pilots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .linalg import solve_hermitian
from .pilots import PilotSet

EXTENDED_MAX_DIM = 4096


@dataclass
class GaussianStats:
    mean: np.ndarray  # complex128 (d,)
    cov: np.ndarray  # complex128 (d, d)
    n_samples: int

    @property
    def dim(self):
        return self.mean.shape[0]


def estimate_mean_cov(samples) -> GaussianStats:
    """Maximum-likelihood mean and covariance (1/K normalization) of complex vectors."""
    x = np.asarray(samples, dtype=np.complex128)
    if x.ndim != 2 or x.shape[0] < 2:
        raise UsageError(f"need at least 2 samples of equal dimension, got array of shape {x.shape}")
    mu = x.mean(axis=0)
    d = x - mu
    cov = d.T @ d.conj() / x.shape[0]
    cov = 0.5 * (cov + cov.conj().T)
    return GaussianStats(mu, cov, x.shape[0])


def subcarrier_stats(dataset):
    """Statistics of h_m for every subcarrier, from a (K, N, M) dataset."""
    h = dataset.samples
    return [estimate_mean_cov(h[:, :, m]) for m in range(h.shape[2])]


def vectorize(h):
    """(K, N, M) -> (K, N*M), subcarrier-major then antenna."""
    h = np.asarray(h)
    return h.transpose(0, 2, 1).reshape(h.shape[0], -1)


def unvectorize(v, n, m):
    return np.asarray(v).reshape(-1, m, n).transpose(0, 2, 1)


def full_stats(dataset) -> GaussianStats:
    n, m = dataset.samples.shape[1:]
    if n * m > EXTENDED_MAX_DIM:
        raise UsageError(f"N*M = {n * m} exceeds the extended LMMSE limit {EXTENDED_MAX_DIM}")
    return estimate_mean_cov(vectorize(dataset.samples))


def lmmse_gain(p, stats: GaussianStats, noise_var):
    """Return (G, c) such that the LMMSE estimate is G y + c."""
    p = np.asarray(p, dtype=np.complex128)
    r_hy = stats.cov @ p.conj().T
    r_yy = p @ r_hy + noise_var * np.eye(p.shape[0])
    r_yy = 0.5 * (r_yy + r_yy.conj().T)
    g = solve_hermitian(r_yy, r_hy.conj().T).conj().T
    return g, stats.mean - g @ (p @ stats.mean)


def lmmse_per_subcarrier(y, p, stats: GaussianStats, noise_var):
    """E[h] + R_hy R_yy^-1 (y - E[y]) for one subcarrier; y is (L,) or (L, B)."""
    if noise_var < 0:
        raise UsageError(f"noise variance must be >= 0, got {noise_var}")
    g, c = lmmse_gain(p, stats, noise_var)
    y = np.asarray(y, dtype=np.complex128)
    return g @ y + (c if y.ndim == 1 else c[:, None])


def mmse_trace(p, stats: GaussianStats, noise_var):
    """Analytic LMMSE error trace(R_h - R_hy R_yy^-1 R_hy^H)."""
    p = np.asarray(p, dtype=np.complex128)
    g, _ = lmmse_gain(p, stats, noise_var)
    return float(np.real(np.trace(stats.cov - g @ p @ stats.cov)))


def ls_estimate(y, p):
    """Least-squares (pseudo-inverse) estimate."""
    return np.linalg.pinv(np.asarray(p, dtype=np.complex128)) @ np.asarray(y)


def observe(h, pilots, noise_var, unit_noise, mask=None):
    """Received pilots Y (B, L, M) = mask * (P_m h_m + sigma * n_m)."""
    p = pilots.matrices() if isinstance(pilots, PilotSet) else np.asarray(pilots)
    y = np.einsum("mln,bnm->blm", p, np.asarray(h, dtype=np.complex128))
    noise_var = np.asarray(noise_var, dtype=np.float64)
    if noise_var.ndim == 1:
        noise_var = noise_var[:, None, None]
    y = y + np.sqrt(noise_var) * unit_noise
    if mask is not None:
        y = y * np.asarray(mask)
    return y


def extended_lmmse_gain(p, stats_full: GaussianStats, noise_var, mask=None):
    """Gain over vec(H) using the block-diagonal operator diag(P_1..P_M)."""
    p = np.asarray(p, dtype=np.complex128)
    m, l, n = p.shape
    if stats_full.dim != n * m:
        raise UsageError(f"stats dimension {stats_full.dim} != N*M = {n * m}")
    if n * m > EXTENDED_MAX_DIM:
        raise UsageError(f"N*M = {n * m} exceeds the extended LMMSE limit {EXTENDED_MAX_DIM}")
    active = np.ones((l, m), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    blocks = []
    for j in range(m):
        rows = np.zeros((int(active[:, j].sum()), n * m), dtype=np.complex128)
        rows[:, j * n:(j + 1) * n] = p[j][active[:, j]]
        blocks.append(rows)
    a = np.concatenate(blocks, axis=0)
    a_r = a @ stats_full.cov
    r_yy = a_r @ a.conj().T + noise_var * np.eye(a.shape[0])
    r_yy = 0.5 * (r_yy + r_yy.conj().T)
    g = solve_hermitian(r_yy, a_r).conj().T
    return g, stats_full.mean - g @ (a @ stats_full.mean), active


def stack_observation(y, active):
    """(B, L, M) -> (B, n_active), subcarrier-major then pilot row."""
    y = np.asarray(y)
    return y.transpose(0, 2, 1)[:, active.T]


def lmmse_extended(y_stacked, p, stats_full: GaussianStats, noise_var, mask=None):
    """Extended LMMSE estimate of H from the stacked observation, shape (B, N, M)."""
    g, c, _ = extended_lmmse_gain(p, stats_full, noise_var, mask)
    y = np.atleast_2d(np.asarray(y_stacked, dtype=np.complex128))
    m, _, n = np.asarray(p).shape
    return unvectorize(y @ g.T + c, n, m)


def fft_pilots(pilot_len, n_antennas, n_subcarriers, dtype=np.float32) -> PilotSet:
    """First L rows of the unitary N-point DFT on every subcarrier, total power one."""
    if pilot_len > n_antennas:
        raise UsageError(f"pilot length {pilot_len} exceeds antenna count {n_antennas}")
    k = np.arange(pilot_len)[:, None]
    n = np.arange(n_antennas)[None, :]
    rows = np.exp(-2j * np.pi * k * n / n_antennas) / np.sqrt(n_antennas)
    p = np.broadcast_to(rows, (n_subcarriers, pilot_len, n_antennas)) / np.sqrt(pilot_len * n_subcarriers)
    return PilotSet.from_complex(p, mode="fft", dtype=dtype, trainable=False)


class LmmseEstimator:
    """Per-subcarrier LMMSE with fixed pilots; gains cached per noise variance."""

    name = "lmmse"

    def __init__(self, pilots, stats, mask=None):
        self.p = pilots.matrices() if isinstance(pilots, PilotSet) else np.asarray(pilots, dtype=np.complex128)
        self.stats = stats
        self.mask = None if mask is None else np.asarray(mask, dtype=bool)
        self._cache = {}

    def _gains(self, noise_var):
        key = float(noise_var)
        if key not in self._cache:
            gains = []
            for j, st in enumerate(self.stats):
                rows = slice(None) if self.mask is None else self.mask[:, j]
                gains.append((rows,) + lmmse_gain(self.p[j][rows], st, key))
            self._cache[key] = gains
        return self._cache[key]

    def estimate_from(self, y, noise_var):
        b, _, m = y.shape
        out = np.empty((b, self.p.shape[2], m), dtype=np.complex128)
        for j, (rows, g, c) in enumerate(self._gains(noise_var)):
            out[:, :, j] = y[:, rows, j] @ g.T + c
        return out

    def estimate(self, h, noise_var, unit_noise):
        return self.estimate_from(observe(h, self.p, noise_var, unit_noise, self.mask), noise_var)

    def analytic_mse(self, noise_var):
        total = 0.0
        for j, st in enumerate(self.stats):
            rows = slice(None) if self.mask is None else self.mask[:, j]
            total += mmse_trace(self.p[j][rows], st, noise_var)
        return total


class ExtendedLmmseEstimator:
    name = "extended-lmmse"

    def __init__(self, pilots, stats_full, mask=None):
        self.p = pilots.matrices() if isinstance(pilots, PilotSet) else np.asarray(pilots, dtype=np.complex128)
        self.stats = stats_full
        self.mask = None if mask is None else np.asarray(mask, dtype=bool)
        self._cache = {}

    def estimate_from(self, y, noise_var):
        key = float(noise_var)
        if key not in self._cache:
            self._cache[key] = extended_lmmse_gain(self.p, self.stats, key, self.mask)
        g, c, active = self._cache[key]
        m, _, n = self.p.shape
        return unvectorize(stack_observation(y, active) @ g.T + c, n, m)

    def estimate(self, h, noise_var, unit_noise):
        return self.estimate_from(observe(h, self.p, noise_var, unit_noise, self.mask), noise_var)


class OracleEstimator:
    """Returns the true channel (plumbing checks)."""

    name = "oracle"

    def estimate(self, h, noise_var, unit_noise):
        return np.asarray(h, dtype=np.complex128)


class ZeroEstimator:
    name = "zero"

    def estimate(self, h, noise_var, unit_noise):
        return np.zeros_like(np.asarray(h, dtype=np.complex128))
