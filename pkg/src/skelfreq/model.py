"""Model assembly: embedding, channel split, the three attention stacks,
map fusion, temporal blocks, and the classification head.

Wiring per sample: embed to (J, C_e, F), split channels into two units,
run the spatial, high-band, and low-band stacks in parallel on the same
split (within a stack, the fused map of block k re-weights both units
feeding block k+1 through u + map.u), fuse the three final maps against
a value projection of the embedded input, pass through the temporal
blocks, then global-mean-pool and classify.

When a model has no spatial or frequency blocks at all, the fusion stage
(value + projection weights) does not exist and the temporal blocks read
the embedded input directly; parameter counts reflect that.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from skelfreq import checkpoint as ckpt
from skelfreq import tensor as tz
from skelfreq.attention import (
    AttentionMaps,
    QKProjector,
    SpatialBlockParams,
    TemporalBlockParams,
    apply_joint_map,
    fuse_maps,
    hfab_attention,
    lfab_attention,
    sab_attention,
    tab_forward,
    temporal_gate,
    uniform_attention,
)
from skelfreq.frequency import FrequencyConfig, map_partition
from skelfreq.rng import PinnedRng
from skelfreq.tensor import DimensionError, Tensor

# Stock band settings, quoted on the 25-point reference axis and
# rescaled to the actual transform axis by map_partition.
DEFAULT_PARTITION_REF = 13
DEFAULT_LOW_SCALE = 0.2
DEFAULT_HIGH_SCALE = 1.2


@dataclass(frozen=True)
class ModelConfig:
    joints: int = 25
    in_channels: int = 3
    frames: int = 64
    embed_channels: int = 36
    attn_dim: int | None = None  # defaults to embed_channels // 2
    n_hfab: int = 2
    n_lfab: int = 2
    n_sab: int = 1
    n_tab: int = 1
    num_classes: int = 4
    ct_groups: int = 6
    freq: FrequencyConfig | None = None  # defaults to the stock band split
    freq_mode: str = "split"  # "split" (banded operators) or "uniform"
    uniform_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.joints < 1 or self.frames < 1 or self.in_channels < 1:
            raise ValueError(f"degenerate input dims: J={self.joints} C={self.in_channels} F={self.frames}")
        if self.embed_channels < 2 or self.embed_channels % 2 != 0:
            raise ValueError(f"embed_channels must be even and >= 2, got {self.embed_channels}")
        if self.attn_dim is None:
            object.__setattr__(self, "attn_dim", self.embed_channels // 2)
        if self.attn_dim < 1:
            raise ValueError(f"attn_dim must be positive, got {self.attn_dim}")
        for name in ("n_hfab", "n_lfab", "n_sab", "n_tab"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.ct_groups < 1 or self.embed_channels % self.ct_groups != 0:
            raise ValueError(f"ct_groups {self.ct_groups} does not divide {self.embed_channels} channels")
        if self.freq_mode not in ("split", "uniform"):
            raise ValueError(f"freq_mode must be 'split' or 'uniform', got {self.freq_mode!r}")
        if self.freq is None:
            if self.spectral_axis_len >= 2:
                object.__setattr__(
                    self,
                    "freq",
                    FrequencyConfig(
                        partition=map_partition(DEFAULT_PARTITION_REF, self.spectral_axis_len),
                        low_scale=DEFAULT_LOW_SCALE,
                        high_scale=DEFAULT_HIGH_SCALE,
                    ),
                )
            elif self.n_hfab > 0 or self.n_lfab > 0:
                raise ValueError("frequency blocks need a transform axis of length >= 2")
        elif not 1 <= self.freq.partition < self.spectral_axis_len:
            raise ValueError(
                f"partition {self.freq.partition} invalid for {self.freq.axis} axis "
                f"of length {self.spectral_axis_len}"
            )

    @property
    def spectral_axis_len(self) -> int:
        axis = self.freq.axis if self.freq is not None else "temporal"
        return self.frames if axis == "temporal" else self.joints

    @property
    def unit_channels(self) -> int:
        return self.embed_channels // 2

    @property
    def has_fusion(self) -> bool:
        return self.n_sab + self.n_hfab + self.n_lfab > 0

    def to_json(self) -> str:
        d = {
            k: getattr(self, k)
            for k in (
                "joints", "in_channels", "frames", "embed_channels", "attn_dim",
                "n_hfab", "n_lfab", "n_sab", "n_tab", "num_classes", "ct_groups",
                "freq_mode", "uniform_scale", "seed",
            )
        }
        if self.freq is not None:
            d["freq"] = {
                "partition": self.freq.partition,
                "low_scale": self.freq.low_scale,
                "high_scale": self.freq.high_scale,
                "axis": self.freq.axis,
                "permissive": self.freq.permissive,
            }
        else:
            d["freq"] = None
        return json.dumps(d, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ModelConfig":
        d = json.loads(text)
        freq = d.pop("freq", None)
        if freq is not None:
            freq = FrequencyConfig(**freq)
        return ModelConfig(freq=freq, **d)


# ---------------------------------------------------------------------------
# parameters


def _glorot_limit(shape: tuple[int, ...]) -> float:
    fan_in, fan_out = shape[0], shape[1]
    return math.sqrt(6.0 / (fan_in + fan_out))


def _param_specs(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Stable (name, shape, kind) listing; kind is weight/bias/table.
    Order defines both the init draw order and checkpoint layout."""
    ce, c2, d = cfg.embed_channels, cfg.unit_channels, cfg.attn_dim
    specs: list[tuple[str, tuple[int, ...], str]] = [
        ("embed.weight", (cfg.in_channels, ce), "weight"),
        ("embed.bias", (ce,), "bias"),
        ("embed.joint_table", (cfg.joints, ce), "table"),
        ("embed.frame_table", (cfg.frames, ce), "table"),
    ]

    def projector(prefix: str) -> None:
        for head in ("query", "key"):
            specs.append((f"{prefix}.{head}.weight", (c2, d), "weight"))
            specs.append((f"{prefix}.{head}.bias", (d,), "bias"))

    for kind, count in (("sab", cfg.n_sab), ("hfab", cfg.n_hfab), ("lfab", cfg.n_lfab)):
        for i in range(count):
            projector(f"{kind}{i}.u1")
            projector(f"{kind}{i}.u2")
    if cfg.has_fusion:
        specs.append(("fuse.value.weight", (ce, ce), "weight"))
        specs.append(("fuse.value.bias", (ce,), "bias"))
        specs.append(("fuse.proj.weight", (3 * ce, ce), "weight"))
        specs.append(("fuse.proj.bias", (ce,), "bias"))
    for i in range(cfg.n_tab):
        specs.append((f"tab{i}.query.weight", (ce, d), "weight"))
        specs.append((f"tab{i}.query.bias", (d,), "bias"))
        specs.append((f"tab{i}.key.weight", (ce, d), "weight"))
        specs.append((f"tab{i}.key.bias", (d,), "bias"))
        specs.append((f"tab{i}.value.weight", (ce, ce), "weight"))
        specs.append((f"tab{i}.value.bias", (ce,), "bias"))
    specs.append(("head.weight", (ce, cfg.num_classes), "weight"))
    specs.append(("head.bias", (cfg.num_classes,), "bias"))
    return specs


@dataclass
class ModelParams:
    """Named parameter tensors plus typed views into block structures."""

    config: ModelConfig
    tensors: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def all_tensors(self) -> list[Tensor]:
        return list(self.tensors.values())

    def projector(self, prefix: str) -> QKProjector:
        t = self.tensors
        return QKProjector(
            t[f"{prefix}.query.weight"], t[f"{prefix}.query.bias"],
            t[f"{prefix}.key.weight"], t[f"{prefix}.key.bias"],
        )

    def spatial_block(self, kind: str, index: int) -> SpatialBlockParams:
        return SpatialBlockParams(
            self.projector(f"{kind}{index}.u1"), self.projector(f"{kind}{index}.u2")
        )

    def temporal_block(self, index: int) -> TemporalBlockParams:
        t = self.tensors
        return TemporalBlockParams(
            self.config.ct_groups,
            t[f"tab{index}.query.weight"], t[f"tab{index}.query.bias"],
            t[f"tab{index}.key.weight"], t[f"tab{index}.key.bias"],
            t[f"tab{index}.value.weight"], t[f"tab{index}.value.bias"],
        )


def count_parameters(cfg: ModelConfig) -> int:
    return sum(math.prod(shape) for _, shape, _ in _param_specs(cfg))


def init_params(cfg: ModelConfig, seed: int | None = None) -> ModelParams:
    """Deterministic Glorot-uniform weights; biases and tables zero."""
    rng = PinnedRng(cfg.seed if seed is None else seed)
    tensors: dict[str, Tensor] = {}
    for name, shape, kind in _param_specs(cfg):
        if kind == "weight":
            lim = _glorot_limit(shape)
            data = (rng.uniforms(math.prod(shape)) * 2.0 - 1.0).reshape(shape) * lim
        else:
            data = np.zeros(shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(cfg, tensors)


def dump_model_bytes(params: ModelParams) -> bytes:
    arrays = {name: t.data for name, t in params.named()}
    return ckpt.dump_with_header(params.config.to_json(), arrays, dtype="f64")


def save_model(path, params: ModelParams) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_model_bytes(params))


def parse_model_bytes(buf: bytes) -> ModelParams:
    header, arrays = ckpt.parse_with_header(buf)
    cfg = ModelConfig.from_json(header)
    expected = {name: shape for name, shape, _ in _param_specs(cfg)}
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise ckpt.CheckpointError(f"parameter names mismatch: missing {missing}, unexpected {extra}")
    tensors = {}
    for name, shape, _ in _param_specs(cfg):
        arr = arrays[name]
        if arr.shape != shape:
            raise ckpt.CheckpointError(f"{name}: stored shape {arr.shape}, config wants {shape}")
        tensors[name] = Tensor(arr, requires_grad=True)
    return ModelParams(cfg, tensors)


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        return parse_model_bytes(fh.read())


# ---------------------------------------------------------------------------
# forward


def embed(x: Tensor, params: ModelParams) -> Tensor:
    """(J, C_in, F) -> (J, C_e, F): per-frame channel affine plus the
    per-joint and per-frame embedding tables."""
    cfg = params.config
    if x.shape != (cfg.joints, cfg.in_channels, cfg.frames):
        raise DimensionError(
            f"embed: input {x.shape} does not match (J={cfg.joints}, C={cfg.in_channels}, F={cfg.frames})"
        )
    j, f, ce = cfg.joints, cfg.frames, cfg.embed_channels
    rows = tz.reshape(tz.transpose(x, (0, 2, 1)), (j * f, cfg.in_channels))
    e = tz.reshape(tz.affine(rows, params["embed.weight"], params["embed.bias"]), (j, f, ce))
    e = tz.add(e, params["embed.frame_table"])  # (F, C_e) broadcast over joints
    e = tz.transpose(e, (1, 0, 2))
    e = tz.add(e, params["embed.joint_table"])  # (J, C_e) broadcast over frames
    return tz.transpose(e, (1, 2, 0))


def channel_split(x: Tensor) -> tuple[Tensor, Tensor]:
    """Halve the channel axis; concat(parts, 1) reconstructs x exactly."""
    if x.ndim != 3 or x.shape[1] % 2 != 0:
        raise DimensionError(f"channel_split needs an even channel axis, got {x.shape}")
    half = x.shape[1] // 2
    parts = tz.split(x, 1, [half, half])
    return parts[0], parts[1]


def _block_attention(kind: str, index: int, x1: Tensor, x2: Tensor, params: ModelParams) -> AttentionMaps:
    cfg = params.config
    block = params.spatial_block(kind, index)
    if kind == "sab":
        return sab_attention(x1, x2, block)
    if cfg.freq_mode == "uniform":
        axis = 2 if (cfg.freq is None or cfg.freq.axis == "temporal") else 0
        return uniform_attention(x1, x2, axis, cfg.uniform_scale, block)
    if kind == "hfab":
        return hfab_attention(x1, x2, cfg.freq, block)
    return lfab_attention(x1, x2, cfg.freq, block)


def run_stack(
    kind: str,
    x1: Tensor,
    x2: Tensor,
    params: ModelParams,
    trace: dict | None = None,
) -> Tensor:
    """Run every block of one kind sequentially. The fused map of block
    k re-weights both units feeding block k+1 (u + map.u); the returned
    map is the last block's fused output, or zeros for an empty stack."""
    cfg = params.config
    count = {"sab": cfg.n_sab, "hfab": cfg.n_hfab, "lfab": cfg.n_lfab}[kind]
    if count == 0:
        return Tensor(np.zeros((cfg.joints, cfg.joints)))
    fused = None
    for i in range(count):
        if fused is not None:
            x1 = tz.add(x1, apply_joint_map(fused, x1))
            x2 = tz.add(x2, apply_joint_map(fused, x2))
        maps = _block_attention(kind, i, x1, x2, params)
        if trace is not None:
            trace[f"{kind}{i}.self"] = maps.self_map.data
            trace[f"{kind}{i}.mix"] = maps.mix_map.data
            trace[f"{kind}{i}.fused"] = maps.fused.data
        fused = maps.fused
    return fused


def _value_projection(e: Tensor, params: ModelParams) -> Tensor:
    cfg = params.config
    j, ce, f = e.shape
    rows = tz.reshape(tz.transpose(e, (0, 2, 1)), (j * f, ce))
    v = tz.affine(rows, params["fuse.value.weight"], params["fuse.value.bias"])
    return tz.transpose(tz.reshape(v, (j, f, ce)), (0, 2, 1))


def forward_sample(x: Tensor, params: ModelParams, trace: dict | None = None) -> Tensor:
    """Logits (1, num_classes) for one (J, C_in, F) sample."""
    cfg = params.config
    e = embed(x, params)
    if cfg.has_fusion:
        x1, x2 = channel_split(e)
        ms = run_stack("sab", x1, x2, params, trace)
        mhf = run_stack("hfab", x1, x2, params, trace)
        mlf = run_stack("lfab", x1, x2, params, trace)
        v = _value_projection(e, params)
        x_t = fuse_maps(ms, mhf, mlf, v, params["fuse.proj.weight"], params["fuse.proj.bias"])
    else:
        x_t = e
    for i in range(cfg.n_tab):
        block = params.temporal_block(i)
        if trace is not None:
            trace[f"tab{i}.gate"] = temporal_gate(x_t, block).data
        x_t = tab_forward(x_t, block)
    pooled = tz.reduce_mean(tz.reduce_mean(x_t, 2), 0)
    logits = tz.affine(tz.reshape(pooled, (1, cfg.embed_channels)), params["head.weight"], params["head.bias"])
    return logits


def forward(batch, params: ModelParams) -> Tensor:
    """Logits (B, num_classes); the batch axis is an outer loop, so
    results are batch-size invariant."""
    cfg = params.config
    if isinstance(batch, Tensor):
        data = batch
    else:
        data = Tensor(np.asarray(batch, dtype=np.float64))
    if data.ndim != 4 or data.shape[1:] != (cfg.joints, cfg.in_channels, cfg.frames):
        raise DimensionError(
            f"forward: batch {data.shape} does not match (B, {cfg.joints}, {cfg.in_channels}, {cfg.frames})"
        )
    rows = []
    for b in range(data.shape[0]):
        sample = tz.reshape(tz.narrow(data, 0, b, 1), (cfg.joints, cfg.in_channels, cfg.frames))
        rows.append(forward_sample(sample, params))
    return tz.concat(rows, 0)
