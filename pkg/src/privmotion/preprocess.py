"""Replication padding and sliding-window sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dct import DctBasis, dct_encode
from .errors import ContractError, DimensionError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MotionWindow:
    """One sample: N observed, T target and P privileged poses (K x frames each)."""

    observed: np.ndarray
    target: np.ndarray
    privileged: np.ndarray
    frame_ms: float = 40.0

    def __post_init__(self):
        k = self.observed.shape[0]
        for part in (self.target, self.privileged):
            if part.ndim != 2 or part.shape[0] != k:
                raise DimensionError("observed, target and privileged must share the row count K")
        if self.n < 1 or self.t < 1:
            raise ContractError(f"a window needs N >= 1 and T >= 1, got N={self.n}, T={self.t}")

    @property
    def k(self) -> int:
        return self.observed.shape[0]

    @property
    def n(self) -> int:
        return self.observed.shape[1]

    @property
    def t(self) -> int:
        return self.target.shape[1]

    @property
    def p(self) -> int:
        return self.privileged.shape[1]

    @property
    def length(self) -> int:
        return self.n + self.t + self.p

    def full(self) -> np.ndarray:
        """Ground truth over all N+T+P frames."""
        return np.concatenate([self.observed, self.target, self.privileged], axis=1)

    def with_privileged(self, p: int) -> "MotionWindow":
        """Same sample keeping only the first ``p`` privileged poses."""
        if not 0 <= p <= self.p:
            raise ContractError(f"cannot keep {p} of {self.p} privileged poses")
        return MotionWindow(self.observed, self.target, self.privileged[:, :p], self.frame_ms)


def pad_observed(w: MotionWindow) -> np.ndarray:
    """Observed poses followed by the last observed pose repeated T+P times."""
    if w.n < 1:
        raise ContractError("pad_observed needs at least one observed pose")
    tail = np.repeat(w.observed[:, -1:], w.t + w.p, axis=1)
    return np.concatenate([w.observed, tail], axis=1)


def pad_privileged(w: MotionWindow) -> np.ndarray:
    """First privileged pose repeated N+T times, followed by the privileged poses."""
    if w.p < 1:
        raise ContractError("pad_privileged needs at least one privileged pose (P >= 1)")
    head = np.repeat(w.privileged[:, :1], w.n + w.t, axis=1)
    return np.concatenate([head, w.privileged], axis=1)


def make_window_samples(recording: np.ndarray, n: int, t: int, p: int, stride: int = 1,
                        frame_ms: float = 40.0) -> list[MotionWindow]:
    recording = np.asarray(recording, dtype=np.float64)
    if stride < 1:
        raise ContractError(f"stride must be at least 1, got {stride}")
    total = n + t + p
    length = recording.shape[1]
    if length < total:
        log.warning("recording with %d frames is shorter than one %d-frame window; skipped", length, total)
        return []
    windows = []
    for start in range(0, length - total + 1, stride):
        chunk = recording[:, start:start + total]
        windows.append(MotionWindow(chunk[:, :n].copy(), chunk[:, n:n + t].copy(),
                                    chunk[:, n + t:].copy(), frame_ms))
    return windows


@dataclass(frozen=True)
class EncodedBatch:
    """Stacked network inputs and targets for a list of windows."""

    h_obs: np.ndarray  # M x K x C
    h_priv: np.ndarray | None  # M x K x C, None when P = 0
    truth: np.ndarray  # M x K x (N+T+P)
    n: int
    t: int
    p: int

    def __len__(self) -> int:
        return self.truth.shape[0]


def encode_windows(windows: list[MotionWindow], coeffs: int | None = None) -> EncodedBatch:
    """DCT of both padded sequences for every window (all windows share N, T, P)."""
    if not windows:
        raise ContractError("no windows to encode")
    first = windows[0]
    for w in windows:
        if (w.k, w.n, w.t, w.p) != (first.k, first.n, first.t, first.p):
            raise DimensionError("all windows must share K, N, T and P")
    basis = DctBasis.create(first.length, coeffs)
    h_obs = dct_encode(np.stack([pad_observed(w) for w in windows]), basis)
    h_priv = None
    if first.p > 0:
        h_priv = dct_encode(np.stack([pad_privileged(w) for w in windows]), basis)
    truth = np.stack([w.full() for w in windows])
    return EncodedBatch(h_obs, h_priv, truth, first.n, first.t, first.p)
