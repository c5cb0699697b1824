"""Data formats, normalization, modalities, and the synthetic generator."""

import math
import struct

import numpy as np
import pytest

from skelfreq.data import (
    DataFormatError,
    DatasetManifest,
    SkeletonSequence,
    build_manifest,
    chain_parents,
    class_frequencies,
    derive_modalities,
    load_binary,
    load_jsonl,
    normalize,
    prepare_arrays,
    save_binary,
    save_jsonl,
    synth_generate,
)
from skelfreq.frequency import dct
from skelfreq.tensor import Tensor


def random_sequence(seed, j=5, c=3, f=7, f32=False):
    rng = np.random.default_rng(seed)
    coords = rng.normal(0.0, 2.0, size=(j, c, f))
    if f32:
        coords = coords.astype(np.float32).astype(np.float64)
    return SkeletonSequence(coords, label=seed % 4, subject=seed % 10, view=seed % 3)


# ---------------------------------------------------------------------------
# sequence type


def test_sequence_validation():
    with pytest.raises(ValueError, match="J, C, F"):
        SkeletonSequence(np.zeros((3, 4)), 0)
    with pytest.raises(ValueError, match="finite"):
        SkeletonSequence(np.full((2, 3, 4), np.nan), 0)
    with pytest.raises(ValueError, match="label"):
        SkeletonSequence(np.zeros((2, 3, 4)), -1)


def test_manifest_split_disjoint_by_subject():
    seqs = [random_sequence(i) for i in range(30)]
    m = build_manifest(seqs, num_classes=4, test_values=(8, 9))
    assert set(m.train_indices).isdisjoint(m.test_indices)
    for i in m.test_indices:
        assert seqs[i].subject in (8, 9)
    with pytest.raises(ValueError, match="leaks"):
        DatasetManifest(
            class_names=("a",), labels=(0, 0), subjects=(1, 1), views=(0, 0),
            offsets=(0, 1), split_key="subject", train_indices=(0,), test_indices=(1,),
        )


def test_manifest_label_range_checked():
    seqs = [random_sequence(3)]
    with pytest.raises(ValueError, match="class range"):
        build_manifest(seqs, num_classes=2)  # label is 3 % 4 == 3


# ---------------------------------------------------------------------------
# JSONL


def test_jsonl_round_trip_bitwise(tmp_path):
    seqs = [random_sequence(i) for i in range(10)]
    p = tmp_path / "d.jsonl"
    save_jsonl(p, seqs)
    back = load_jsonl(p)
    assert len(back) == len(seqs)
    for a, b in zip(seqs, back):
        assert a.coords.tobytes() == b.coords.tobytes()
        assert (a.label, a.subject, a.view) == (b.label, b.subject, b.view)


def test_jsonl_empty_file(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert load_jsonl(p) == []


def test_jsonl_minimal_record(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text('{"label":0,"subject":1,"view":2,"frames":[[[1.0,2.0,3.0]]]}\n')
    (s,) = load_jsonl(p)
    assert s.coords.shape == (1, 3, 1)
    assert np.array_equal(s.coords[:, :, 0], [[1.0, 2.0, 3.0]])


def test_jsonl_nesting_is_frames_major(tmp_path):
    # two frames of one joint: frames[f][j][c]
    p = tmp_path / "n.jsonl"
    p.write_text('{"label":0,"frames":[[[1.0,2.0]],[[3.0,4.0]]]}\n')
    (s,) = load_jsonl(p)
    assert s.coords.shape == (1, 2, 2)
    assert np.array_equal(s.coords[0], [[1.0, 3.0], [2.0, 4.0]])


def test_jsonl_parse_error_names_line_and_column(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"label":0,"frames":[[[0.0,0.0,0.0]]]}\n{"label": oops}\n')
    with pytest.raises(DataFormatError, match=r"line 2, column"):
        load_jsonl(p)


def test_jsonl_dimension_error_names_line(tmp_path):
    p = tmp_path / "jag.jsonl"
    p.write_text('{"label":0,"frames":[[[1.0,2.0]],[[1.0]]]}\n')
    with pytest.raises(DataFormatError, match="line 1"):
        load_jsonl(p)


# ---------------------------------------------------------------------------
# SKL1


def test_binary_round_trip_bitwise(tmp_path):
    seqs = [random_sequence(i, f32=True) for i in range(100)]
    p = tmp_path / "d.skl"
    save_binary(p, seqs)
    back = load_binary(p)
    assert len(back) == 100
    for a, b in zip(seqs, back):
        assert a.coords.tobytes() == b.coords.tobytes()
        assert (a.label, a.subject, a.view) == (b.label, b.subject, b.view)


def test_binary_write_is_canonical(tmp_path):
    # write -> read -> write reproduces the identical file even for
    # float64 inputs (the first write quantizes to f32)
    seqs = [random_sequence(i) for i in range(5)]
    p1, p2 = tmp_path / "a.skl", tmp_path / "b.skl"
    save_binary(p1, seqs)
    save_binary(p2, load_binary(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_binary_empty_is_eight_bytes(tmp_path):
    p = tmp_path / "empty.skl"
    save_binary(p, [])
    assert p.read_bytes() == b"SKL1" + struct.pack("<I", 0)
    assert load_binary(p) == []


def test_binary_bad_magic(tmp_path):
    p = tmp_path / "x.skl"
    p.write_bytes(b"NOPE" + struct.pack("<I", 0))
    with pytest.raises(DataFormatError, match="bad magic"):
        load_binary(p)


def test_binary_truncation_names_counts(tmp_path):
    p = tmp_path / "t.skl"
    save_binary(p, [random_sequence(1, j=2, c=3, f=4)])
    whole = p.read_bytes()
    p.write_bytes(whole[:-10])
    with pytest.raises(DataFormatError, match=r"need 96 bytes .* ends at"):
        load_binary(p)


def test_binary_trailing_garbage(tmp_path):
    p = tmp_path / "g.skl"
    save_binary(p, [random_sequence(1)])
    p.write_bytes(p.read_bytes() + b"xx")
    with pytest.raises(DataFormatError, match="trailing"):
        load_binary(p)


# ---------------------------------------------------------------------------
# normalize


def test_normalize_roots_every_frame():
    s = random_sequence(20, j=6, c=3, f=9)
    out = normalize(s, 9).data
    assert np.max(np.abs(out[0])) < 1e-12


def test_normalize_identity_resample_and_unit_rms():
    s = random_sequence(21, j=6, c=3, f=9)
    out = normalize(s, 9).data
    rms = np.sqrt((out ** 2).mean(axis=(0, 1)))
    assert abs(rms.mean() - 1.0) < 1e-12
    # same frame count: output is exactly a scalar multiple of the
    # centered source, no interpolation artifacts
    centered = s.coords - s.coords[0:1]
    mask = centered != 0
    ratio = out[mask] / centered[mask]
    assert np.max(np.abs(ratio - ratio.flat[0])) < 1e-12


def test_normalize_linear_trajectory_resamples_exactly():
    # joint 1 moves linearly from 0 to 8 over 9 frames; resampling to 5
    # frames must hit the exact line values 0, 2, 4, 6, 8 up to the
    # RMS scale, which the final point divides out
    coords = np.zeros((2, 3, 9))
    coords[1, 0, :] = np.arange(9.0)
    s = SkeletonSequence(coords, 0)
    line = normalize(s, 5).data[1, 0, :]
    want = np.array([0.0, 2.0, 4.0, 6.0, 8.0])
    assert np.max(np.abs(line / line[-1] * 8.0 - want)) < 1e-12


def test_normalize_single_target_frame():
    s = random_sequence(22, f=7)
    out = normalize(s, 1).data
    assert out.shape == (5, 3, 1)
    centered = s.coords - s.coords[0:1]
    assert np.allclose(out[:, :, 0] * np.sqrt((centered[:, :, 0] ** 2).mean()), centered[:, :, 0], atol=1e-12)


def test_normalize_constant_sequence_warns_and_zeros():
    coords = np.tile(np.arange(6.0).reshape(2, 3, 1), (1, 1, 4))
    coords[1] = coords[0]  # identical joints: zero after centering
    s = SkeletonSequence(coords, 0)
    with pytest.warns(RuntimeWarning, match="zero after root-centering"):
        out = normalize(s, 4).data
    assert np.array_equal(out, np.zeros((2, 3, 4)))


# ---------------------------------------------------------------------------
# modalities


def test_chain_parents_shape():
    assert np.array_equal(chain_parents(5), [0, 0, 1, 2, 3])


def test_bones_of_unit_chain_are_unit_vectors():
    coords = np.zeros((4, 3, 6))
    coords[:, 0, :] = np.arange(4.0)[:, None]
    mods = derive_modalities(SkeletonSequence(coords, 0))
    bone = mods["bone"].coords
    assert np.array_equal(bone[0], np.zeros((3, 6)))
    for j in range(1, 4):
        assert np.array_equal(bone[j, 0], np.ones(6))
        assert np.array_equal(bone[j, 1:], np.zeros((2, 6)))


def test_constant_sequence_has_zero_motion():
    coords = np.tile(np.random.default_rng(23).normal(size=(5, 3, 1)), (1, 1, 8))
    mods = derive_modalities(SkeletonSequence(coords, 0))
    assert np.array_equal(mods["joint_motion"].coords, np.zeros((5, 3, 8)))
    assert np.array_equal(mods["bone_motion"].coords, np.zeros((5, 3, 8)))


def test_motion_is_forward_difference_with_zero_tail():
    s = random_sequence(24, f=6)
    motion = derive_modalities(s)["joint_motion"].coords
    want = np.zeros_like(s.coords)
    want[:, :, :-1] = np.diff(s.coords, axis=2)
    assert np.array_equal(motion, want)
    assert np.array_equal(motion[:, :, -1], np.zeros((5, 3)))


def test_modalities_keep_labels():
    s = random_sequence(25)
    mods = derive_modalities(s)
    assert set(mods) == {"joint", "bone", "joint_motion", "bone_motion"}
    for m in mods.values():
        assert (m.label, m.subject, m.view) == (s.label, s.subject, s.view)


def test_bad_parent_table_rejected():
    s = random_sequence(26)
    with pytest.raises(ValueError, match="parent table"):
        derive_modalities(s, np.array([0, 1]))
    with pytest.raises(ValueError, match="out of range"):
        derive_modalities(s, np.array([0, 9, 1, 2, 3]))


# ---------------------------------------------------------------------------
# generator


def test_class_frequencies_layout():
    assert class_frequencies(4, 64) == [2, 6, 46, 50]
    assert class_frequencies(2, 16) == [2, 10]
    with pytest.raises(ValueError, match="too short"):
        class_frequencies(8, 8)
    with pytest.raises(ValueError, match="at least 2"):
        class_frequencies(1, 64)


def test_generator_reproducible_and_balanced():
    a = synth_generate(3, 4, joints=6, frames=16, seed=11)
    b = synth_generate(3, 4, joints=6, frames=16, seed=11)
    c = synth_generate(3, 4, joints=6, frames=16, seed=12)
    assert len(a) == 12
    for x, y in zip(a, b):
        assert x.coords.tobytes() == y.coords.tobytes()
    assert any(x.coords.tobytes() != y.coords.tobytes() for x, y in zip(a, c))
    counts = {}
    for s in a:
        counts[s.label] = counts.get(s.label, 0) + 1
    assert counts == {0: 4, 1: 4, 2: 4}


def test_generator_subjects_cycle():
    seqs = synth_generate(2, 12, joints=4, frames=16, seed=3)
    per_class = [s.subject for s in seqs if s.label == 0]
    assert per_class == [i % 10 for i in range(12)]


def test_generator_root_joint_is_static_without_noise():
    seqs = synth_generate(2, 2, joints=5, frames=16, seed=4, noise_sigma=0.0)
    for s in seqs:
        assert np.array_equal(s.coords[0], np.zeros((3, 16)))


def test_generator_spectral_peak_matches_class_frequency():
    freqs = class_frequencies(4, 32)
    seqs = synth_generate(4, 5, joints=6, frames=32, seed=7, noise_sigma=0.0)
    for s in seqs:
        spec = dct(Tensor(s.coords), 2).values.data
        energy = (spec ** 2).sum(axis=(0, 1))
        peak = int(np.argmax(energy[1:])) + 1  # skip DC (chain offsets live there)
        assert peak == freqs[s.label], f"label {s.label}: peak {peak}, want {freqs[s.label]}"


def test_generator_noise_scale():
    quiet = synth_generate(2, 3, joints=5, frames=16, seed=9, noise_sigma=0.0)
    noisy = synth_generate(2, 3, joints=5, frames=16, seed=9, noise_sigma=0.05)
    diffs = [np.abs(a.coords - b.coords) for a, b in zip(quiet, noisy)]
    top = max(d.max() for d in diffs)
    assert 0.0 < top < 0.5  # noise present but nowhere near signal amplitude


def test_generator_band_signature():
    # odd classes carry a secondary tone at the opposite band's partner
    # frequency with half the primary energy, spacing the four band-energy
    # splits evenly at 0, 1/3, 2/3, 1; even classes stay pure
    freqs = class_frequencies(4, 32)
    seqs = synth_generate(4, 4, joints=6, frames=32, seed=13, noise_sigma=0.0)
    partners = {0: 2, 1: 3, 2: 0, 3: 1}
    for s in seqs:
        spec = dct(Tensor(s.coords), 2).values.data
        energy = (spec ** 2).sum(axis=(0, 1))
        m1 = freqs[s.label]
        m2 = freqs[partners[s.label]]
        ratio = energy[m2] / energy[m1]
        if s.label % 2 == 1:
            assert 0.4 < ratio < 0.6, f"label {s.label}: ratio {ratio}"
        else:
            assert ratio < 1e-20, f"label {s.label}: ratio {ratio}"


# ---------------------------------------------------------------------------
# prepare_arrays


def test_prepare_arrays_shapes_and_split():
    seqs = synth_generate(2, 12, joints=5, frames=16, seed=13)
    manifest = build_manifest(seqs, num_classes=2)
    train_x, train_y, test_x, test_y = prepare_arrays(seqs, manifest, target_frames=8)
    assert train_x.shape == (20, 5, 3, 8)
    assert test_x.shape == (4, 5, 3, 8)
    assert sorted(set(train_y.tolist())) == [0, 1]
    assert np.max(np.abs(train_x[:, 0])) < 1e-12  # root-centered


def test_prepare_arrays_modality_differs_from_joint():
    seqs = synth_generate(2, 4, joints=5, frames=16, seed=14)
    manifest = build_manifest(seqs, num_classes=2, test_values=())
    jx, _, _, _ = prepare_arrays(seqs, manifest, 16, modality="joint")
    bx, _, _, _ = prepare_arrays(seqs, manifest, 16, modality="bone")
    mx, _, _, _ = prepare_arrays(seqs, manifest, 16, modality="joint_motion")
    assert jx.shape == bx.shape == mx.shape
    assert not np.allclose(jx, bx)
    assert not np.allclose(jx, mx)


def test_prepare_arrays_rejects_unknown_modality():
    seqs = synth_generate(2, 2, joints=4, frames=8, seed=15)
    manifest = build_manifest(seqs, num_classes=2)
    with pytest.raises(ValueError, match="modality"):
        prepare_arrays(seqs, manifest, 8, modality="velocity")
