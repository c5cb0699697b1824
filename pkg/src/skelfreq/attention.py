"""Attention blocks over joints and frames, plus map fusion.

Spatial-style blocks work on a pair of half-channel units. Each unit
owns a query/key projector; the block computes a self map from unit 1
and a mix map from unit 2's queries against unit 1's keys (keys are
shared), then sums them, so fused rows sum to 2. The frequency variants
run the same machinery on band-scaled cosine spectra of the units.

The temporal block permutes channels (an invertible group transpose),
pools over joints for its queries and keys, and gates a value projection
with sigmoid(softmax(scores)), which pins every gate entry to
(0.5, sigmoid(1)].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from skelfreq import tensor as tz
from skelfreq.frequency import (
    FrequencyConfig,
    SpectralTensor,
    apply_high_operator,
    apply_low_operator,
    apply_uniform_operator,
    dct,
)
from skelfreq.tensor import DimensionError, Tensor


@dataclass
class QKProjector:
    """Affine query/key heads applied to frame-pooled unit features."""

    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor

    @property
    def in_channels(self) -> int:
        return self.w_q.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w_q.shape[1]


@dataclass
class SpatialBlockParams:
    """One projector per half-channel unit."""

    unit1: QKProjector
    unit2: QKProjector


@dataclass
class TemporalBlockParams:
    groups: int
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor


@dataclass
class AttentionMaps:
    """Self and mix maps (each row-stochastic) and their sum."""

    self_map: Tensor
    mix_map: Tensor
    fused: Tensor


def qk_project(x_unit: Tensor, p: QKProjector) -> tuple[Tensor, Tensor]:
    """Mean-pool the unit over its last axis, then the two relu heads."""
    if x_unit.ndim != 3:
        raise DimensionError(f"qk_project expects a 3-axis unit, got {x_unit.shape}")
    if x_unit.shape[1] != p.in_channels:
        raise DimensionError(
            f"qk_project: unit has {x_unit.shape[1]} channels, projector expects {p.in_channels}"
        )
    pooled = tz.reduce_mean(x_unit, 2)
    q = tz.relu(tz.affine(pooled, p.w_q, p.b_q))
    k = tz.relu(tz.affine(pooled, p.w_k, p.b_k))
    return q, k


def mixed_attention_pair(q1: Tensor, k1: Tensor, q2: Tensor) -> AttentionMaps:
    """self = softmax(q1 k1^T / sqrt(d)), mix = softmax(q2 k1^T / sqrt(d));
    unit 1's keys are shared by both maps."""
    d = q1.shape[1]
    if k1.shape[1] != d or q2.shape[1] != d:
        raise DimensionError(f"attention dims disagree: {q1.shape}, {k1.shape}, {q2.shape}")
    inv_sqrt_d = 1.0 / math.sqrt(d)
    kt = tz.transpose(k1)
    self_map = tz.softmax_lastdim(tz.scale(tz.matmul(q1, kt), inv_sqrt_d))
    mix_map = tz.softmax_lastdim(tz.scale(tz.matmul(q2, kt), inv_sqrt_d))
    return AttentionMaps(self_map, mix_map, tz.add(self_map, mix_map))


def sab_attention(x1: Tensor, x2: Tensor, params: SpatialBlockParams) -> AttentionMaps:
    q1, k1 = qk_project(x1, params.unit1)
    q2, _ = qk_project(x2, params.unit2)
    return mixed_attention_pair(q1, k1, q2)


def sab_forward(x1: Tensor, x2: Tensor, params: SpatialBlockParams) -> Tensor:
    return sab_attention(x1, x2, params).fused


def spectral_attention(
    x1: Tensor,
    x2: Tensor,
    axis: int,
    operator: Callable[[SpectralTensor], SpectralTensor],
    params: SpatialBlockParams,
) -> AttentionMaps:
    """Shared core of the frequency blocks: transform each unit along
    `axis`, reweight the spectrum with `operator`, then run the mixed
    pair on the coefficients."""
    s1 = operator(dct(x1, axis))
    s2 = operator(dct(x2, axis))
    q1, k1 = qk_project(s1.values, params.unit1)
    q2, _ = qk_project(s2.values, params.unit2)
    return mixed_attention_pair(q1, k1, q2)


def _spectral_axis(cfg: FrequencyConfig) -> int:
    return 2 if cfg.axis == "temporal" else 0


def hfab_attention(x1: Tensor, x2: Tensor, cfg: FrequencyConfig, params: SpatialBlockParams) -> AttentionMaps:
    return spectral_attention(x1, x2, _spectral_axis(cfg), lambda s: apply_high_operator(s, cfg), params)


def hfab_forward(x1: Tensor, x2: Tensor, cfg: FrequencyConfig, params: SpatialBlockParams) -> Tensor:
    return hfab_attention(x1, x2, cfg, params).fused


def lfab_attention(x1: Tensor, x2: Tensor, cfg: FrequencyConfig, params: SpatialBlockParams) -> AttentionMaps:
    return spectral_attention(x1, x2, _spectral_axis(cfg), lambda s: apply_low_operator(s, cfg), params)


def lfab_forward(x1: Tensor, x2: Tensor, cfg: FrequencyConfig, params: SpatialBlockParams) -> Tensor:
    return lfab_attention(x1, x2, cfg, params).fused


def uniform_attention(
    x1: Tensor, x2: Tensor, axis: int, scale: float, params: SpatialBlockParams
) -> AttentionMaps:
    """Band-free spectral block: the whole spectrum scaled uniformly."""
    return spectral_attention(x1, x2, axis, lambda s: apply_uniform_operator(s, scale), params)


def apply_joint_map(joint_map: Tensor, v: Tensor) -> Tensor:
    """Mix joints: out[j] = sum_i map[j, i] * v[i] applied per frame."""
    j, c, f = v.shape
    flat = tz.reshape(v, (j, c * f))
    return tz.reshape(tz.matmul(joint_map, flat), (j, c, f))


def fuse_maps(ms: Tensor, mhf: Tensor, mlf: Tensor, v: Tensor, w_proj: Tensor, b_proj: Tensor) -> Tensor:
    """Apply the three joint maps to v, concatenate on channels, and
    project the 3x channels back down with an affine map."""
    if v.ndim != 3:
        raise DimensionError(f"fuse_maps expects v of shape (J, C, F), got {v.shape}")
    j, c, f = v.shape
    for name, m in (("spatial", ms), ("high", mhf), ("low", mlf)):
        if m.shape != (j, j):
            raise DimensionError(f"fuse_maps: {name} map {m.shape} does not match {j} joints")
    if w_proj.shape != (3 * c, c):
        raise DimensionError(f"fuse_maps: projection {w_proj.shape} does not match 3*{c} -> {c}")
    mixed = tz.concat([apply_joint_map(m, v) for m in (ms, mhf, mlf)], axis=1)
    # channels last for the affine, then back
    rows = tz.reshape(tz.transpose(mixed, (0, 2, 1)), (j * f, 3 * c))
    proj = tz.affine(rows, w_proj, b_proj)
    return tz.transpose(tz.reshape(proj, (j, f, c)), (0, 2, 1))


def channel_transform(x: Tensor, groups: int) -> Tensor:
    """Fixed permutation of the channel axis: view C as (groups, C/groups)
    and transpose the two factors. channel_transform(., C/groups) undoes it."""
    if x.ndim != 3:
        raise DimensionError(f"channel_transform expects (J, C, F), got {x.shape}")
    c = x.shape[1]
    if groups < 1 or c % groups != 0:
        raise ValueError(f"groups {groups} does not divide {c} channels")
    perm = np.arange(c).reshape(groups, c // groups).T.reshape(-1)
    return tz.permute_axis(x, perm, 1)


def temporal_gate(x_t: Tensor, params: TemporalBlockParams) -> Tensor:
    """The (F, F) gate sigmoid(softmax(q_t k_t^T / sqrt(d))): queries
    from mean-pooled joints, keys from max-pooled joints, both after the
    channel permutation. Every entry lands in (0.5, sigmoid(1)]."""
    if x_t.ndim != 3:
        raise DimensionError(f"temporal block expects (J, C, F), got {x_t.shape}")
    ct = channel_transform(x_t, params.groups)
    # (J, C, F) -> pooled (C, F) -> (F, C)
    q_in = tz.transpose(tz.reduce_mean(ct, 0))
    k_in = tz.transpose(tz.reduce_max(ct, 0))
    q_t = tz.relu(tz.affine(q_in, params.w_q, params.b_q))
    k_t = tz.relu(tz.affine(k_in, params.w_k, params.b_k))
    d = params.w_q.shape[1]
    scores = tz.scale(tz.matmul(q_t, tz.transpose(k_t)), 1.0 / math.sqrt(d))
    return tz.sigmoid(tz.softmax_lastdim(scores))


def tab_forward(x_t: Tensor, params: TemporalBlockParams) -> Tensor:
    """Temporal block: gate a per-channel value projection over frames,
    out[., ., g] = sum_f gate[g, f] * v_t[., ., f]."""
    gate = temporal_gate(x_t, params)
    j, c, f = x_t.shape
    v_rows = tz.reshape(tz.transpose(x_t, (0, 2, 1)), (j * f, c))
    v_t = tz.transpose(tz.reshape(tz.affine(v_rows, params.w_v, params.b_v), (j, f, c)), (0, 2, 1))
    flat = tz.reshape(v_t, (j * c, f))
    out = tz.matmul(flat, tz.transpose(gate))
    return tz.reshape(out, (j, c, f))
