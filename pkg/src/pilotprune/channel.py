"""Multipath MIMO-OFDM channel synthesis and SNR bookkeeping.

Each realization is the superposition of ``n_paths`` plane waves leaving a
half-wavelength ULA, each with a complex gain, a delay (giving a linear
phase ramp across subcarriers) and an angle of departure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError

SPLITS = {"train": 0, "test": 1}


@dataclass(frozen=True)
class ChannelConfig:
    n_antennas: int = 8
    n_subcarriers: int = 32
    n_paths: int = 4
    spacing: float = 0.5  # d / lambda
    sampling_rate: float = 20e6
    max_delay: float = 1e-7
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_antennas < 1 or self.n_subcarriers < 1 or self.n_paths < 1:
            raise UsageError(
                f"dimensions must be >= 1, got N={self.n_antennas} M={self.n_subcarriers} P={self.n_paths}"
            )
        if self.spacing <= 0:
            raise UsageError(f"antenna spacing must be positive, got {self.spacing}")
        if self.max_delay < 0:
            raise UsageError(f"max delay must be nonnegative, got {self.max_delay}")

    @property
    def shape(self):
        return (self.n_antennas, self.n_subcarriers)


@dataclass(frozen=True)
class PathSet:
    gains: np.ndarray  # complex (P,)
    delays: np.ndarray  # seconds (P,)
    angles: np.ndarray  # radians (P,), within [-pi/2, pi/2]

    def __len__(self):
        return len(self.gains)


@dataclass
class Dataset:
    config: ChannelConfig
    samples: np.ndarray  # complex64 (K, N, M)
    split: str = "train"
    seed: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex64)
        if self.samples.ndim != 3 or self.samples.shape[1:] != self.config.shape:
            raise UsageError(f"samples {self.samples.shape} do not match config dims {self.config.shape}")

    def __len__(self):
        return self.samples.shape[0]

    def subset(self, k):
        return Dataset(self.config, self.samples[:k], self.split, self.seed)


def steering_vector(phi, n_antennas, spacing=0.5):
    n = np.arange(n_antennas)
    return np.exp(-2j * np.pi * spacing * n * np.sin(phi)) / np.sqrt(n_antennas)


def sample_paths(config: ChannelConfig, rng: np.random.Generator) -> PathSet:
    p = config.n_paths
    gains = (rng.standard_normal(p) + 1j * rng.standard_normal(p)) / np.sqrt(2.0)
    delays = rng.uniform(0.0, config.max_delay, p)
    angles = rng.uniform(-np.pi / 2, np.pi / 2, p)
    return PathSet(gains, delays, angles)


def synthesize_channel(paths: PathSet, config: ChannelConfig) -> np.ndarray:
    """N x M complex matrix; column m-1 holds subcarrier m = 1..M."""
    if len(paths) != config.n_paths:
        raise UsageError(f"got {len(paths)} paths, config expects {config.n_paths}")
    n, m_count = config.shape
    m = np.arange(1, m_count + 1)
    # (P, M) frequency ramps and (N, P) array responses
    ramps = np.exp(-2j * np.pi * np.outer(paths.delays, m) * config.sampling_rate / m_count)
    steer = np.stack([steering_vector(phi, n, config.spacing) for phi in paths.angles], axis=1)
    return np.sqrt(n / config.n_paths) * (steer * paths.gains) @ ramps


def sample_rng(seed, split, index):
    """Independent stream per (seed, split, sample index)."""
    return np.random.default_rng([int(seed), SPLITS.get(split, 2), int(index)])


def generate_dataset(config: ChannelConfig, k: int, split="train", rng_seed=None) -> Dataset:
    if k < 1:
        raise UsageError(f"dataset size must be >= 1, got {k}")
    seed = config.rng_seed if rng_seed is None else rng_seed
    samples = np.empty((k,) + config.shape, dtype=np.complex64)
    for i in range(k):
        samples[i] = synthesize_channel(sample_paths(config, sample_rng(seed, split, i)), config)
    return Dataset(config, samples, split, seed)


def kronecker_covariance(n, m, antenna_corr=0.7, freq_corr=0.9):
    """Exponential-correlation Kronecker covariance of vec(H), subcarrier-major."""
    ra = antenna_corr ** np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    rf = freq_corr ** np.abs(np.subtract.outer(np.arange(m), np.arange(m)))
    return np.kron(rf, ra).astype(np.complex128)


def gaussian_dataset(config: ChannelConfig, k: int, split="train", rng_seed=None,
                     antenna_corr=0.7, freq_corr=0.9) -> Dataset:
    """Zero-mean circular Gaussian channels with a Kronecker covariance.

    Used where the exact second-order statistics must be known (LMMSE is then
    the MMSE estimator).
    """
    if k < 1:
        raise UsageError(f"dataset size must be >= 1, got {k}")
    seed = config.rng_seed if rng_seed is None else rng_seed
    n, m = config.shape
    root = np.linalg.cholesky(kronecker_covariance(n, m, antenna_corr, freq_corr))
    samples = np.empty((k, n, m), dtype=np.complex64)
    for i in range(k):
        rng = sample_rng(seed, split, i)
        w = (rng.standard_normal(n * m) + 1j * rng.standard_normal(n * m)) / np.sqrt(2.0)
        samples[i] = (root @ w).reshape(m, n).T
    return Dataset(config, samples, split, seed)


def snr_to_noise_var(snr_db, pilots, dataset: Dataset, mask=None):
    """Noise variance giving ``snr_db`` per active received pilot element.

    ``pilots`` is a PilotSet or a complex (M, L, N) array. The reference
    power is the empirical mean of |[P_m h_m]_i|^2 over the dataset, the
    subcarriers and the active pilot rows.
    """
    if len(dataset) == 0:
        raise UsageError("cannot derive a noise variance from an empty dataset")
    p = pilots.matrices() if hasattr(pilots, "matrices") else np.asarray(pilots)
    h = dataset.samples.astype(np.complex128)
    y = np.einsum("mln,knm->klm", p, h)  # (K, L, M)
    power = np.abs(y) ** 2
    if mask is not None:
        active = np.asarray(mask, dtype=bool)
        mean_power = power[:, active].mean()
    else:
        mean_power = power.mean()
    return float(mean_power / 10 ** (snr_db / 10))


def reference_noise_var(snr_db, dataset: Dataset, n_active: int):
    """Noise variance for isotropic unit-total-power pilots over ``n_active`` elements.

    Every estimator with the same pilot budget is evaluated against this
    variance, so it does not move while the pilots are being trained.
    """
    if len(dataset) == 0:
        raise UsageError("cannot derive a noise variance from an empty dataset")
    if n_active < 1:
        raise UsageError(f"need at least one active pilot element, got {n_active}")
    per_antenna = float(np.mean(np.abs(dataset.samples) ** 2))
    return per_antenna / n_active / 10 ** (snr_db / 10)


def snr_samples(rng, batch, snr_db=None, snr_range=None):
    """Per-sample SNRs (dB): fixed, or uniform over ``snr_range``."""
    if snr_range is not None:
        lo, hi = snr_range
        return rng.uniform(lo, hi, batch)
    return np.full(batch, float(snr_db))
