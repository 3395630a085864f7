"""Orthonormal DCT-II along the frame axis of a pose sequence.

A sequence is a ``K x L`` matrix (one row per pose parameter, one column per
frame).  Encoding projects each row onto the first ``C`` basis rows:

    basis[k, n] = s_k * sqrt(2 / L) * cos(pi * (2n + 1) * k / (2L)),
    s_0 = 1/sqrt(2), s_k = 1 otherwise

so ``freq = seq @ basis.T`` and ``seq ~= freq @ basis`` (exact when C == L).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import tensor as tc
from .errors import ConfigError, DimensionError


@lru_cache(maxsize=None)
def _basis_matrix(length: int, coeffs: int) -> np.ndarray:
    n = np.arange(length)
    k = np.arange(coeffs)[:, None]
    basis = np.sqrt(2.0 / length) * np.cos(np.pi * (2 * n + 1) * k / (2 * length))
    basis[0] /= np.sqrt(2.0)
    basis.setflags(write=False)
    return basis


@dataclass(frozen=True)
class DctBasis:
    length: int
    coeff_count: int
    basis: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def create(cls, length: int, coeff_count: int | None = None) -> "DctBasis":
        coeff_count = length if not coeff_count else coeff_count
        if length < 1:
            raise ConfigError(f"DCT length must be positive, got {length}")
        if not 1 <= coeff_count <= length:
            raise ConfigError(f"DCT coefficient count {coeff_count} must lie in [1, {length}]")
        return cls(length, coeff_count, _basis_matrix(length, coeff_count))


def dct_encode(seq: np.ndarray, basis: DctBasis) -> np.ndarray:
    """K x L (or B x K x L) sequence -> K x C coefficients."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.shape[-1] != basis.length:
        raise DimensionError(f"sequence has {seq.shape[-1]} frames, basis expects {basis.length}")
    return seq @ basis.basis.T


def idct_decode(freq: np.ndarray, basis: DctBasis) -> np.ndarray:
    freq = np.asarray(freq, dtype=np.float64)
    if freq.shape[-1] != basis.coeff_count:
        raise DimensionError(f"got {freq.shape[-1]} coefficients, basis has {basis.coeff_count}")
    return freq @ basis.basis


def idct_node(freq: tc.Node, basis: DctBasis) -> tc.Node:
    """Differentiable :func:`idct_decode` on a graph node."""
    if freq.shape[-1] != basis.coeff_count:
        raise DimensionError(f"got {freq.shape[-1]} coefficients, basis has {basis.coeff_count}")
    return tc.matmul(freq, freq.graph.const(basis.basis))
