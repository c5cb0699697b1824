"""Orthonormal cosine transform along one axis, plus the band operators.

The transform is an explicit matrix multiply with the F x F orthonormal
cosine basis (precomputed per length, cached read-only). That keeps it
exactly linear, trivially differentiable, and energy-preserving; at desk
scale F <= 128 the O(F^2) cost is irrelevant.

Band semantics: the low band (coefficient index < partition) and high
band (index >= partition) are SCALED, never zeroed. Each operator is
meant to run on its own copy of the spectrum; downstream attention
branches consume the amplified and attenuated spectra independently.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from skelfreq.tensor import DimensionError, Tensor, mul, reshape, transpose

# Partition defaults are quoted on a 25-point axis (one index per joint of
# the standard skeleton); map_partition rescales them to other axis lengths.
REFERENCE_JOINTS = 25


@dataclass(frozen=True)
class FrequencyConfig:
    """Band partition and the two band scales.

    partition counts low-frequency coefficients: indices < partition are
    the low band, the rest the high band. low_scale attenuates the low
    band in (0, 1); high_scale amplifies the high band in
    (1, 1 + low_scale). permissive relaxes both bounds to allow the
    scale-1 identity settings used by equivalence tests.
    """

    partition: int
    low_scale: float = 0.2
    high_scale: float = 1.2
    axis: str = "temporal"
    permissive: bool = False

    def __post_init__(self):
        if not isinstance(self.partition, int) or self.partition < 1:
            raise ValueError(f"partition must be an integer >= 1, got {self.partition!r}")
        if self.axis not in ("temporal", "joint"):
            raise ValueError(f"axis must be 'temporal' or 'joint', got {self.axis!r}")
        lo, hi = self.low_scale, self.high_scale
        # the high bound is inclusive: the stock operating point is
        # exactly high_scale = 1 + low_scale (1.2 with 0.2)
        if self.permissive:
            ok = 0.0 < lo <= 1.0 and 1.0 <= hi <= 1.0 + lo
        else:
            ok = 0.0 < lo < 1.0 and 1.0 < hi <= 1.0 + lo
        if not ok:
            raise ValueError(
                f"band scales out of range: low_scale={lo} (need (0,1)), "
                f"high_scale={hi} (need (1, 1+low_scale]); permissive={self.permissive}"
            )


@dataclass(frozen=True)
class SpectralTensor:
    """A tensor whose `axis` holds cosine coefficients, index 0 = DC."""

    values: Tensor
    axis: int

    def __post_init__(self):
        if not 0 <= self.axis < self.values.ndim:
            raise DimensionError(f"spectral axis {self.axis} out of range for shape {self.values.shape}")


@lru_cache(maxsize=16)
def cosine_basis(length: int) -> np.ndarray:
    """Orthonormal cosine basis M with M[k, f] = sqrt(2/F) * w_k *
    cos(pi*(2f+1)*k / (2F)), w_0 = 1/sqrt(2), w_k = 1 otherwise.
    Rows are coefficients, columns are samples; M @ M.T == I."""
    if length < 1:
        raise DimensionError(f"transform axis must be nonempty, got length {length}")
    f = np.arange(length, dtype=np.float64)
    k = f[:, None]
    m = np.sqrt(2.0 / length) * np.cos(np.pi * (2.0 * f[None, :] + 1.0) * k / (2.0 * length))
    m[0] /= np.sqrt(2.0)
    m.setflags(write=False)
    return m


def _with_axis_last(x: Tensor, axis: int):
    """Move `axis` to the end; returns (moved, undo permutation)."""
    if axis == x.ndim - 1:
        return x, None
    perm = tuple(i for i in range(x.ndim) if i != axis) + (axis,)
    inv = tuple(int(i) for i in np.argsort(perm))
    return transpose(x, perm), inv


def _matmul_lastdim(x: Tensor, m: np.ndarray) -> Tensor:
    from skelfreq.tensor import matmul  # local to keep module import light

    shape = x.shape
    flat = reshape(x, (x.size // shape[-1], shape[-1]))
    out = matmul(flat, Tensor(m))
    return reshape(out, shape)


def dct(x: Tensor, axis: int) -> SpectralTensor:
    """Cosine coefficients of every 1-D slice along `axis`."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"dct: axis {axis} out of range for shape {x.shape}")
    axis = axis % x.ndim
    m = cosine_basis(x.shape[axis])
    moved, inv = _with_axis_last(x, axis)
    coef = _matmul_lastdim(moved, m.T)
    if inv is not None:
        coef = transpose(coef, inv)
    return SpectralTensor(coef, axis)


def idct(s: SpectralTensor) -> Tensor:
    """Signal back from coefficients; exact inverse of dct up to roundoff."""
    m = cosine_basis(s.values.shape[s.axis])
    moved, inv = _with_axis_last(s.values, s.axis)
    sig = _matmul_lastdim(moved, np.ascontiguousarray(m))
    if inv is not None:
        sig = transpose(sig, inv)
    return sig


def _check_partition(partition: int, axis_len: int) -> None:
    if not 1 <= partition < axis_len:
        raise ValueError(f"partition {partition} outside [1, {axis_len - 1}] for axis length {axis_len}")


def _scale_axis(s: SpectralTensor, scales: np.ndarray) -> SpectralTensor:
    moved, inv = _with_axis_last(s.values, s.axis)
    out = mul(moved, Tensor(scales))
    if inv is not None:
        out = transpose(out, inv)
    return SpectralTensor(out, s.axis)


def apply_high_operator(s: SpectralTensor, cfg: FrequencyConfig) -> SpectralTensor:
    """Amplify the high band: index >= partition scaled by high_scale."""
    n = s.values.shape[s.axis]
    _check_partition(cfg.partition, n)
    scales = np.ones(n)
    scales[cfg.partition :] = cfg.high_scale
    return _scale_axis(s, scales)


def apply_low_operator(s: SpectralTensor, cfg: FrequencyConfig) -> SpectralTensor:
    """Attenuate the low band: index < partition scaled by low_scale."""
    n = s.values.shape[s.axis]
    _check_partition(cfg.partition, n)
    scales = np.ones(n)
    scales[: cfg.partition] = cfg.low_scale
    return _scale_axis(s, scales)


def apply_uniform_operator(s: SpectralTensor, scale: float = 1.0) -> SpectralTensor:
    """Scale the whole spectrum uniformly (the band-free variant)."""
    n = s.values.shape[s.axis]
    return _scale_axis(s, np.full(n, float(scale)))


def map_partition(n_ref: int, axis_len: int) -> int:
    """Rescale a partition quoted on the 25-point reference axis to an
    axis of a different length, clamped so both bands stay nonempty.

    Integer arithmetic: round(n_ref/25 * axis_len) computed as
    (2*n_ref*axis_len + 25) // 50. An exact half never occurs (it would
    need 2*n_ref*axis_len to be an odd multiple of 25), so the tie
    direction is unobservable.
    """
    if not 1 <= n_ref <= REFERENCE_JOINTS:
        raise ValueError(f"reference partition {n_ref} outside [1, {REFERENCE_JOINTS}]")
    if axis_len < 2:
        raise ValueError(f"axis length {axis_len} too short to partition")
    raw = (2 * n_ref * axis_len + REFERENCE_JOINTS) // (2 * REFERENCE_JOINTS)
    return max(1, min(axis_len - 1, raw))


def band_energies(s: SpectralTensor, partition: int) -> tuple[np.ndarray, np.ndarray]:
    """Sum of squared coefficients per band, reducing the spectral axis.
    Returns (low, high) arrays shaped like the input minus that axis."""
    n = s.values.shape[s.axis]
    _check_partition(partition, n)
    sq = s.values.data ** 2
    low = np.take(sq, np.arange(partition), axis=s.axis).sum(axis=s.axis)
    high = np.take(sq, np.arange(partition, n), axis=s.axis).sum(axis=s.axis)
    return low, high
