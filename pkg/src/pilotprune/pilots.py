"""Pilot matrices P_1..P_M and the total-power projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, UsageError
from .tensor import Tensor

PILOT_MODES = ("dp", "sp", "fft")


@dataclass
class PilotSet:
    """Per-subcarrier L x N complex pilots held as two real parameter blocks.

    ``re``/``im`` have shape (M, L, N) for distinct pilots ('dp', 'fft') and
    (1, L, N) for shared pilots ('sp'), where every subcarrier aliases the
    single block.
    """

    re: Tensor
    im: Tensor
    mode: str
    n_subcarriers: int

    def __post_init__(self):
        if self.mode not in PILOT_MODES:
            raise UsageError(f"unknown pilot mode {self.mode!r}")
        blocks = 1 if self.mode == "sp" else self.n_subcarriers
        if self.re.shape != self.im.shape or self.re.shape[0] != blocks:
            raise UsageError(f"pilot blocks {self.re.shape} invalid for mode {self.mode} with M={self.n_subcarriers}")

    @classmethod
    def from_complex(cls, p, mode="dp", dtype=np.float32, trainable=True):
        p = np.asarray(p)
        n_sub = p.shape[0]
        if mode == "sp":
            p = p[:1]
        trainable = trainable and mode != "fft"
        re = Tensor(np.array(p.real, dtype=dtype), requires_grad=trainable)
        im = Tensor(np.array(p.imag, dtype=dtype), requires_grad=trainable)
        return cls(re, im, mode, n_sub)

    @property
    def pilot_len(self):
        return self.re.shape[1]

    @property
    def n_antennas(self):
        return self.re.shape[2]

    @property
    def trainable(self):
        return self.mode != "fft"

    def params(self):
        return [self.re, self.im] if self.trainable else []

    def views(self):
        """(M, L, N) read-only views; for 'sp' all M views share one buffer."""
        shape = (self.n_subcarriers,) + self.re.shape[1:]
        return np.broadcast_to(self.re.data, shape), np.broadcast_to(self.im.data, shape)

    def matrices(self):
        re, im = self.views()
        return re.astype(np.float64) + 1j * im.astype(np.float64)

    def phi(self):
        """Row powers: [Phi]_ij = sum_n |P_j(i, n)|^2, shape (L, M)."""
        row = (self.re.data.astype(np.float64) ** 2 + self.im.data.astype(np.float64) ** 2).sum(axis=2)
        return np.broadcast_to(row.T, (self.pilot_len, self.n_subcarriers)).copy()

    def power(self, mask=None):
        phi = self.phi()
        return float(phi.sum() if mask is None else (phi * mask).sum())

    def frozen_rows(self, mask=None):
        """Boolean (blocks, L) marking rows that feed only pruned outputs."""
        if mask is None:
            return np.zeros(self.re.shape[:2], dtype=bool)
        off = np.asarray(mask) == 0
        if self.mode == "sp":
            return off.all(axis=1)[None, :]
        return off.T.copy()

    def copy(self):
        return PilotSet(
            Tensor(self.re.data.copy(), self.re.requires_grad),
            Tensor(self.im.data.copy(), self.im.requires_grad),
            self.mode,
            self.n_subcarriers,
        )


def normalize_pilots(pilots: PilotSet, mask=None) -> PilotSet:
    """Rescale active rows in place so the active pilot power sums to one.

    Rows whose outputs are all pruned keep their values and do not count.
    """
    total = pilots.power(mask)
    if not np.isfinite(total) or total <= 0:
        raise NumericError(f"cannot normalize pilots with total power {total}")
    scale = 1.0 / np.sqrt(total)
    live = ~pilots.frozen_rows(mask)
    factor = np.where(live, scale, 1.0)[:, :, None].astype(pilots.re.dtype)
    pilots.re.data *= factor
    pilots.im.data *= factor
    return pilots
