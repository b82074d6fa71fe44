"""Magnitude-based pilot pruning: saliency, regularizer, mask schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import UsageError

N_UPDATES = 10
SCHEDULE_FRACTIONS = tuple(0.08 * t for t in range(1, N_UPDATES + 1))
LAMBDA_GRID = (1e-3, 1e-4, 1e-5, 1e-6)


def round_half_down(x):
    # tolerance absorbs float error in products like 3 * 0.25 * 100 / 10
    return int(math.ceil(x - 0.5 - 1e-9))


@dataclass(frozen=True)
class PruneMask:
    """Binary L x M allocation; 1 = pilot transmitted, 0 = freed for data."""

    mask: np.ndarray
    target: float = 0.0
    updates: int = 0

    def __post_init__(self):
        m = np.array(self.mask, dtype=np.uint8)
        if m.ndim != 2 or not np.isin(m, (0, 1)).all():
            raise UsageError("mask must be a binary 2-D array")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @classmethod
    def ones(cls, pilot_len, n_subcarriers, target=0.0):
        return cls(np.ones((pilot_len, n_subcarriers), dtype=np.uint8), target)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def n_zeros(self):
        return int((self.mask == 0).sum())

    @property
    def n_active(self):
        return int(self.mask.sum())

    @property
    def sparsity(self):
        return self.n_zeros / self.mask.size

    def final_zeros(self):
        return round_half_down(self.target * self.mask.size)


@dataclass(frozen=True)
class PruneConfig:
    target: float = 0.0
    reg_lambda: float = 1e-6
    total_steps: int = 20000
    schedule: tuple = field(default=None)

    def __post_init__(self):
        if not 0.0 <= self.target < 1.0:
            raise UsageError(f"target sparsity must be in [0, 1), got {self.target}")
        if self.reg_lambda < 0:
            raise UsageError(f"regularization weight must be >= 0, got {self.reg_lambda}")
        if self.schedule is None:
            object.__setattr__(self, "schedule", tuple(round(self.total_steps * f) for f in SCHEDULE_FRACTIONS))
        s = self.schedule
        if len(s) != N_UPDATES or any(b <= a for a, b in zip(s, s[1:])) or s[0] < 1:
            raise UsageError(f"schedule must be {N_UPDATES} strictly increasing positive steps, got {s}")


def compute_phi(pilots):
    """Phi(i, j) = sum_n |P_j(i, n)|^2, shape (L, M)."""
    if hasattr(pilots, "phi"):
        return pilots.phi()
    p = np.asarray(pilots)
    return (np.abs(p) ** 2).sum(axis=2).T


def phi_tensor(pilots):
    """Differentiable Phi as a (blocks, L) tensor (blocks = 1 for shared pilots)."""
    return T.tsum(T.add(T.square(pilots.re), T.square(pilots.im)), axis=2)


def regularizer(pilots, mask=None):
    """sum_ij Phi(i, j) over active entries, differentiable in the pilots."""
    phi = phi_tensor(pilots)  # (blocks, L)
    if mask is None:
        weights = np.ones(pilots.re.shape[:2]) * (pilots.n_subcarriers / pilots.re.shape[0])
    else:
        mk = np.asarray(mask.mask if isinstance(mask, PruneMask) else mask, dtype=np.float64)
        weights = mk.T if pilots.mode != "sp" else mk.sum(axis=1)[None, :]
    return T.tsum(T.mul(phi, weights.astype(pilots.re.dtype)))


def regularized_loss(mse, phi_sum, reg_lambda):
    """mse + lambda * ||Phi||_1; Phi is nonnegative so the norm is a plain sum."""
    if reg_lambda < 0:
        raise UsageError(f"regularization weight must be >= 0, got {reg_lambda}")
    if reg_lambda == 0:
        return mse
    return T.add(mse, T.mul(phi_sum, float(reg_lambda)))


def select_prune_targets(phi, mask: PruneMask, k: int):
    """The k active coordinates with smallest Phi, ties broken by (i, j)."""
    phi = np.asarray(phi)
    active = np.argwhere(mask.mask == 1)
    if k > len(active):
        raise UsageError(f"cannot prune {k} entries, only {len(active)} remain")
    if k <= 0:
        return []
    values = phi[active[:, 0], active[:, 1]]
    order = np.lexsort((active[:, 1], active[:, 0], values))[:k]
    return [tuple(int(v) for v in active[i]) for i in order]


def cumulative_zeros(update, target, size):
    return round_half_down(update * target * size / N_UPDATES)


def apply_schedule(config: PruneConfig, step: int, mask: PruneMask, phi) -> PruneMask:
    """Apply every schedule point reached by ``step``; returns a new mask or the same one."""
    updates = mask.updates
    current = mask.mask.copy()
    changed = False
    while updates < N_UPDATES and step >= config.schedule[updates]:
        updates += 1
        want = cumulative_zeros(updates, config.target, current.size)
        snapshot = PruneMask(current, config.target, updates)
        for i, j in select_prune_targets(phi, snapshot, want - int((current == 0).sum())):
            current[i, j] = 0
        changed = True
    if not changed:
        return mask
    return PruneMask(current, config.target, updates)


def periodic_mask(pilot_len, n_subcarriers, period):
    """Staggered periodic removal: entry (i, j) is dropped when (i + j) % period == 0."""
    i = np.arange(pilot_len)[:, None]
    j = np.arange(n_subcarriers)[None, :]
    return PruneMask(((i + j) % period != 0).astype(np.uint8), target=1.0 / period, updates=N_UPDATES)
