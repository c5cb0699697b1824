"""Model assembly: shape contracts, step-through oracle, parameter
accounting, init determinism, and the operator-identity equivalence."""

import math

import numpy as np
import pytest

from skelfreq import tensor as T
from skelfreq.attention import (
    fuse_maps,
    hfab_forward,
    lfab_forward,
    sab_forward,
    tab_forward,
)
from skelfreq.frequency import FrequencyConfig
from skelfreq.model import (
    ModelConfig,
    ModelParams,
    channel_split,
    count_parameters,
    embed,
    forward,
    forward_sample,
    init_params,
    load_model,
    run_stack,
    save_model,
)
from skelfreq.tensor import DimensionError, Tensor


def tiny_config(**over):
    base = dict(
        joints=4, in_channels=2, frames=6, embed_channels=8, num_classes=3,
        ct_groups=2, n_hfab=1, n_lfab=1, n_sab=1, n_tab=1, seed=5,
    )
    base.update(over)
    return ModelConfig(**base)


def rand(shape, seed):
    return np.random.default_rng(seed).normal(0.0, 1.0, size=shape)


def randomized_params(cfg, seed=0):
    """init_params plus noise on biases/tables so nothing is degenerate."""
    params = init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1000)
    for name, t in params.named():
        if name.endswith(".bias") or name.endswith("_table"):
            t.data[...] = rng.normal(0.0, 0.3, size=t.shape)
    return params


# ---------------------------------------------------------------------------
# config


def test_config_defaults_resolve():
    cfg = ModelConfig()
    assert cfg.attn_dim == 18
    assert cfg.freq is not None
    assert cfg.freq.partition == 33  # stock 13 on a 25-point axis, rescaled to 64 frames
    assert cfg.freq.low_scale == 0.2 and cfg.freq.high_scale == 1.2


def test_config_validation():
    with pytest.raises(ValueError, match="even"):
        ModelConfig(embed_channels=7)
    with pytest.raises(ValueError, match="ct_groups"):
        ModelConfig(embed_channels=8, ct_groups=3)
    with pytest.raises(ValueError, match="n_sab"):
        ModelConfig(n_sab=-1)
    with pytest.raises(ValueError, match="partition"):
        ModelConfig(frames=8, freq=FrequencyConfig(partition=8))
    with pytest.raises(ValueError, match="freq_mode"):
        ModelConfig(freq_mode="banded")


def test_config_json_round_trip():
    cfg = tiny_config(freq_mode="uniform", uniform_scale=0.5)
    back = ModelConfig.from_json(cfg.to_json())
    assert back == cfg


# ---------------------------------------------------------------------------
# embed / split


def test_embed_shape_contract():
    cfg = ModelConfig()
    params = init_params(cfg, 1)
    out = embed(Tensor(rand((25, 3, 64), 2)), params)
    assert out.shape == (25, 36, 64)


def test_embed_zero_input_zero_tables_gives_bias_only():
    cfg = tiny_config()
    params = init_params(cfg, 3)  # biases and tables start at zero
    params["embed.bias"].data[...] = rand((8,), 4)
    out = embed(Tensor(np.zeros((4, 2, 6))), params)
    want = np.tile(params["embed.bias"].data[None, :, None], (4, 1, 6))
    assert np.array_equal(out.data, want)


def test_embed_matches_composition_oracle_bitwise():
    cfg = tiny_config()
    params = randomized_params(cfg, 6)
    x = rand((4, 2, 6), 7)
    got = embed(Tensor(x), params).data
    rows = x.transpose(0, 2, 1).reshape(4 * 6, 2)
    e = (rows @ params["embed.weight"].data + params["embed.bias"].data).reshape(4, 6, 8)
    e = e + params["embed.frame_table"].data
    e = e.transpose(1, 0, 2) + params["embed.joint_table"].data
    want = e.transpose(1, 2, 0)
    assert np.array_equal(got, want)


def test_embed_shape_mismatch():
    params = init_params(tiny_config(), 8)
    with pytest.raises(DimensionError, match="embed"):
        embed(Tensor(np.zeros((4, 3, 6))), params)


def test_channel_split_round_trip_bitwise():
    x = rand((5, 10, 3), 9)
    x1, x2 = channel_split(Tensor(x))
    assert x1.shape == (5, 5, 3) and x2.shape == (5, 5, 3)
    assert np.array_equal(T.concat([x1, x2], 1).data, x)
    assert np.array_equal(x1.data, x[:, :5, :])
    assert np.array_equal(x2.data, x[:, 5:, :])


def test_channel_split_two_channels():
    x1, x2 = channel_split(Tensor(rand((3, 2, 4), 10)))
    assert x1.shape == (3, 1, 4) and x2.shape == (3, 1, 4)


def test_channel_split_odd_rejected():
    with pytest.raises(DimensionError, match="even"):
        channel_split(Tensor(np.zeros((3, 5, 4))))


# ---------------------------------------------------------------------------
# forward


def test_forward_shape_and_single_class():
    cfg = tiny_config(num_classes=1)
    params = init_params(cfg, 11)
    out = forward(rand((3, 4, 2, 6), 12), params)
    assert out.shape == (3, 1)


def test_forward_identical_inputs_identical_rows():
    cfg = tiny_config()
    params = randomized_params(cfg, 13)
    x = rand((4, 2, 6), 14)
    batch = np.stack([x, x + 1.0, x])
    out = forward(batch, params).data
    assert np.array_equal(out[0], out[2])
    assert not np.array_equal(out[0], out[1])


def test_forward_batch_invariance():
    cfg = tiny_config()
    params = randomized_params(cfg, 15)
    batch = rand((4, 4, 2, 6), 16)
    whole = forward(batch, params).data
    for b in range(4):
        solo = forward(batch[b : b + 1], params).data
        assert np.array_equal(solo[0], whole[b])


def test_forward_step_through_oracle():
    """Re-evaluate the whole tiny model out of the block primitives that
    have their own oracles, checking the assembly wiring itself."""
    cfg = tiny_config(n_hfab=2, n_lfab=1, n_sab=1, n_tab=2)
    params = randomized_params(cfg, 17)
    x = Tensor(rand((4, 2, 6), 18))
    got = forward_sample(x, params).data

    e = embed(x, params)
    x1, x2 = channel_split(e)
    # spatial stack: single block
    ms = sab_forward(x1, x2, params.spatial_block("sab", 0))
    # high stack: two blocks with residual re-weighting in between
    from skelfreq.attention import apply_joint_map

    h0 = hfab_forward(x1, x2, cfg.freq, params.spatial_block("hfab", 0))
    h_x1 = T.add(x1, apply_joint_map(h0, x1))
    h_x2 = T.add(x2, apply_joint_map(h0, x2))
    mhf = hfab_forward(h_x1, h_x2, cfg.freq, params.spatial_block("hfab", 1))
    mlf = lfab_forward(x1, x2, cfg.freq, params.spatial_block("lfab", 0))
    j, ce, f = e.shape
    rows = T.reshape(T.transpose(e, (0, 2, 1)), (j * f, ce))
    v = T.transpose(
        T.reshape(T.affine(rows, params["fuse.value.weight"], params["fuse.value.bias"]), (j, f, ce)),
        (0, 2, 1),
    )
    x_t = fuse_maps(ms, mhf, mlf, v, params["fuse.proj.weight"], params["fuse.proj.bias"])
    x_t = tab_forward(x_t, params.temporal_block(0))
    x_t = tab_forward(x_t, params.temporal_block(1))
    pooled = x_t.data.mean(axis=2).mean(axis=0)
    want = pooled @ params["head.weight"].data + params["head.bias"].data
    assert np.max(np.abs(got[0] - want)) < 1e-9


def test_empty_stack_returns_zero_map():
    cfg = tiny_config(n_lfab=0)
    params = randomized_params(cfg, 19)
    x1 = Tensor(rand((4, 4, 6), 20))
    out = run_stack("lfab", x1, x1, params)
    assert np.array_equal(out.data, np.zeros((4, 4)))


def test_no_spatial_blocks_skips_fusion():
    cfg = tiny_config(n_sab=0, n_hfab=0, n_lfab=0)
    assert not cfg.has_fusion
    params = init_params(cfg, 21)
    assert "fuse.value.weight" not in params.tensors
    out = forward(rand((2, 4, 2, 6), 22), params)
    assert out.shape == (2, 3)


def test_head_row_permutation_permutes_logits():
    cfg = tiny_config(num_classes=5)
    params = randomized_params(cfg, 23)
    x = rand((1, 4, 2, 6), 24)
    base = forward(x, params).data[0]
    perm = np.array([3, 0, 4, 2, 1])
    params["head.weight"].data[...] = params["head.weight"].data[:, perm]
    params["head.bias"].data[...] = params["head.bias"].data[perm]
    permuted = forward(x, params).data[0]
    assert np.max(np.abs(permuted - base[perm])) < 1e-12
    assert np.argmax(permuted) == np.argmax(base[perm])


def test_trace_collects_every_block():
    cfg = tiny_config(n_hfab=2)
    params = randomized_params(cfg, 25)
    trace = {}
    forward_sample(Tensor(rand((4, 2, 6), 26)), params, trace=trace)
    keys = set(trace)
    assert {"sab0.fused", "hfab0.fused", "hfab1.fused", "lfab0.fused", "tab0.gate"} <= keys
    assert trace["tab0.gate"].shape == (6, 6)
    assert trace["sab0.self"].shape == (4, 4)


# ---------------------------------------------------------------------------
# operator-identity equivalence (split h=l=1 vs uniform baseline)


def test_identity_band_scales_match_uniform_model_bitwise():
    freq_id = FrequencyConfig(partition=3, low_scale=1.0, high_scale=1.0, permissive=True)
    cfg_split = tiny_config(freq=freq_id, freq_mode="split")
    cfg_uniform = tiny_config(freq=freq_id, freq_mode="uniform", uniform_scale=1.0)
    p_split = init_params(cfg_split, 27)
    p_uniform = init_params(cfg_uniform, 27)
    for name, t in p_split.named():
        assert np.array_equal(t.data, p_uniform[name].data)
    batch = rand((3, 4, 2, 6), 28)
    out_split = forward(batch, p_split).data
    out_uniform = forward(batch, p_uniform).data
    assert np.array_equal(out_split, out_uniform)


# ---------------------------------------------------------------------------
# parameter accounting


def test_count_closed_form_no_blocks():
    cfg = tiny_config(n_sab=0, n_hfab=0, n_lfab=0, n_tab=0)
    j, f, cin, ce, k = 4, 6, 2, 8, 3
    closed = j * ce + f * ce + (cin * ce + ce) + (ce * k + k)
    assert count_parameters(cfg) == closed


def test_count_matches_init_enumeration():
    for cfg in (tiny_config(), tiny_config(n_sab=0), ModelConfig(), tiny_config(n_tab=3)):
        params = init_params(cfg, 29)
        total = sum(t.size for _, t in params.named())
        assert count_parameters(cfg) == total


def test_count_grows_superlinearly_in_width():
    small = count_parameters(tiny_config(embed_channels=8, attn_dim=4))
    big = count_parameters(tiny_config(embed_channels=16, attn_dim=8))
    assert big > 2 * small  # affine-dominated: roughly quadratic


def test_default_vs_wide_uniform_variant_ratio():
    v2 = ModelConfig()
    v1_style = ModelConfig(n_hfab=7, n_lfab=0, n_sab=7, n_tab=1, freq_mode="uniform")
    ratio = count_parameters(v2) / count_parameters(v1_style)
    assert ratio <= 0.65


# ---------------------------------------------------------------------------
# init


def test_init_deterministic_and_seed_sensitive():
    cfg = tiny_config()
    a = init_params(cfg, 31)
    b = init_params(cfg, 31)
    c = init_params(cfg, 32)
    for name, t in a.named():
        assert np.array_equal(t.data, b[name].data)
    assert any(not np.array_equal(t.data, c[name].data) for name, t in a.named())


def test_init_biases_and_tables_zero_weights_bounded():
    cfg = ModelConfig()
    params = init_params(cfg, 33)
    for name, t in params.named():
        if name.endswith(".bias") or name.endswith("_table"):
            assert np.count_nonzero(t.data) == 0
        else:
            fan_in, fan_out = t.shape
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            assert np.abs(t.data).max() <= lim
            assert np.abs(t.data).max() > 0.5 * lim  # actually fills the range


def test_init_weight_moments():
    # one wide layer gives enough draws for tight uniform-moment bounds
    cfg = ModelConfig(embed_channels=100, ct_groups=10, frames=100)
    w = init_params(cfg, 34)["fuse.proj.weight"]
    lim = math.sqrt(6.0 / (300 + 100))
    flat = w.data.reshape(-1)
    assert flat.size == 30000
    assert abs(flat.mean()) < lim * 0.02
    assert abs(flat.var() - lim * lim / 3.0) < lim * lim * 0.05


# ---------------------------------------------------------------------------
# checkpoint integration


def test_model_save_load_round_trip(tmp_path):
    cfg = tiny_config()
    params = randomized_params(cfg, 35)
    p = tmp_path / "model.ckpt"
    save_model(p, params)
    back = load_model(p)
    assert back.config == cfg
    for name, t in params.named():
        assert np.array_equal(t.data, back[name].data)
    x = rand((2, 4, 2, 6), 36)
    assert np.array_equal(forward(x, params).data, forward(x, back).data)


def test_model_load_rejects_mismatched_names(tmp_path):
    cfg = tiny_config()
    params = init_params(cfg, 37)
    p = tmp_path / "model.ckpt"
    from skelfreq import checkpoint as ckpt

    arrays = {name: t.data for name, t in params.named()}
    del arrays["head.bias"]
    ckpt.save_with_header(p, cfg.to_json(), arrays)
    with pytest.raises(ckpt.CheckpointError, match="head.bias"):
        load_model(p)


# ---------------------------------------------------------------------------
# gradients


def test_tiny_model_end_to_end_gradcheck():
    cfg = tiny_config()
    params = randomized_params(cfg, 38)
    x = Tensor(rand((4, 2, 6), 39))
    target = 1

    def f():
        logits = forward_sample(x, params)
        logp = T.log_softmax_lastdim(logits)
        return T.scale(T.gather_rows(logp, np.array([target])), -1.0)

    tracked = params.all_tensors()
    report = T.grad_check(f, tracked, tol=1e-4, max_entries=6)
    assert report.passed, "\n".join(report.lines())
