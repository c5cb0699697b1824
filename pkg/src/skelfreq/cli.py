"""Command-line entry point: data generation, training, evaluation,
sweeps, DCT inspection, gradient checking, parameter counting, score
ensembling, and attention-map dumps.

Flag defaults sit at the stock operating points (partition reference 13,
band scales 0.2/1.2, warmup 5, weight decay 5e-4, decays at 35/55/75).
Every subcommand accepts --config FILE with line-oriented key=value
pairs; explicit flags win over the file, the file wins over defaults.
Exit codes: 0 success, 1 runtime failure, 2 flag/usage errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from skelfreq.data import (
    MODALITIES,
    SkeletonSequence,
    build_manifest,
    load_binary,
    load_jsonl,
    normalize,
    prepare_arrays,
    save_binary,
    save_jsonl,
    synth_generate,
)
from skelfreq.frequency import FrequencyConfig, band_energies, dct, map_partition
from skelfreq.model import (
    DEFAULT_HIGH_SCALE,
    DEFAULT_LOW_SCALE,
    DEFAULT_PARTITION_REF,
    ModelConfig,
    count_parameters,
    forward_sample,
    init_params,
    load_model,
    save_model,
)
from skelfreq.tensor import Tensor, grad_check
from skelfreq.training import (
    ScheduleConfig,
    accuracy,
    cross_entropy,
    ensemble_fuse,
    fuse_scores,
    predict_scores,
    train_loop,
)

_STOCK_SCHEDULE = ScheduleConfig()


class UsageError(ValueError):
    """Bad flag/config combinations detected after argparse; exit 2."""


# ---------------------------------------------------------------------------
# flag plumbing


def _csv_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _csv_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--embed-channels", type=int, default=36, help="embedding width (even)")
    g.add_argument("--attn-dim", type=int, default=None, help="QK projector width (default: half the embedding)")
    g.add_argument("--hfab", type=int, default=2, help="high-frequency attention blocks")
    g.add_argument("--lfab", type=int, default=2, help="low-frequency attention blocks")
    g.add_argument("--sab", type=int, default=1, help="spatial attention blocks")
    g.add_argument("--tab", type=int, default=1, help="temporal attention blocks")
    g.add_argument("--ct-groups", type=int, default=6, help="channel-transform group count")
    g.add_argument("--partition", type=int, default=DEFAULT_PARTITION_REF,
                   help="band partition (see --partition-mode)")
    g.add_argument("--partition-mode", choices=("reference", "literal"), default="reference",
                   help="reference: rescale --partition from the 25-point reference axis; literal: use as-is")
    g.add_argument("--low-scale", type=float, default=DEFAULT_LOW_SCALE, help="low-band scale")
    g.add_argument("--high-scale", type=float, default=DEFAULT_HIGH_SCALE, help="high-band scale")
    g.add_argument("--freq-mode", choices=("split", "uniform"), default="split",
                   help="banded operators or the uniform-operator baseline")
    g.add_argument("--uniform-scale", type=float, default=1.0, help="scale for --freq-mode uniform")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=30, help="training epochs")
    g.add_argument("--batch-size", type=int, default=16, help="minibatch size")
    g.add_argument("--lr", type=float, default=_STOCK_SCHEDULE.base_lr, help="base learning rate")
    g.add_argument("--warmup", type=int, default=_STOCK_SCHEDULE.warmup_epochs, help="linear warmup epochs")
    g.add_argument("--decays", type=_csv_ints, default=_STOCK_SCHEDULE.decay_epochs,
                   help="comma-separated decay epochs")
    g.add_argument("--decay-factor", type=float, default=_STOCK_SCHEDULE.decay_factor,
                   help="lr multiplier at each decay epoch")
    g.add_argument("--momentum", type=float, default=0.9, help="SGD momentum")
    g.add_argument("--wd", type=float, default=0.0005, help="weight decay (skips biases and tables)")
    g.add_argument("--threads", type=int, default=1,
                   help="worker threads for batch gradients (1 = fully serial)")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--frames", type=int, default=64, help="resample length fed to the model")
    g.add_argument("--modality", choices=MODALITIES, default="joint", help="derived input stream")


def _read_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}")
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{ln}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Install config-file values as parser defaults so explicit flags win.

    String defaults run through each flag's type converter inside
    argparse, so the file gets the same validation as the command line.
    """
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    found, _ = probe.parse_known_args(argv)
    if not found.config:
        return
    values = _read_config_file(found.config)
    actions = {a.dest: a for a in parser._actions if a.dest != argparse.SUPPRESS}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise UsageError(f"config file {found.config}: unknown keys {', '.join(unknown)}")
    for dest, value in values.items():
        if actions[dest].choices is not None and value not in actions[dest].choices:
            raise UsageError(
                f"config file {found.config}: {dest}={value!r} not in {tuple(actions[dest].choices)}"
            )
    parser.set_defaults(**values)
    for dest in values:
        actions[dest].required = False  # the file satisfies required flags


# ---------------------------------------------------------------------------
# shared helpers


def _load_dataset(path: str) -> list[SkeletonSequence]:
    suffix = Path(path).suffix.lower()
    if suffix in (".skl", ".skl1", ".bin"):
        return load_binary(path)
    return load_jsonl(path)


def _save_dataset(path: str, seqs: list[SkeletonSequence]) -> None:
    suffix = Path(path).suffix.lower()
    if suffix in (".skl", ".skl1", ".bin"):
        save_binary(path, seqs)
    else:
        save_jsonl(path, seqs)


def _resolve_partition(args, axis_len: int) -> int:
    if args.partition_mode == "reference":
        return map_partition(args.partition, axis_len)
    return args.partition


def _model_config(args, joints: int, in_channels: int, num_classes: int) -> ModelConfig:
    freq = FrequencyConfig(
        partition=_resolve_partition(args, args.frames),
        low_scale=args.low_scale,
        high_scale=args.high_scale,
        permissive=True,  # let h=l=1 express the uniform-identity test mode
    )
    return ModelConfig(
        joints=joints,
        in_channels=in_channels,
        frames=args.frames,
        embed_channels=args.embed_channels,
        attn_dim=args.attn_dim,
        n_hfab=args.hfab,
        n_lfab=args.lfab,
        n_sab=args.sab,
        n_tab=args.tab,
        num_classes=num_classes,
        ct_groups=args.ct_groups,
        freq=freq,
        freq_mode=args.freq_mode,
        uniform_scale=args.uniform_scale,
        seed=args.seed,
    )


def _split_dataset(seqs: list[SkeletonSequence], args):
    if not seqs:
        raise ValueError("dataset is empty")
    num_classes = max(s.label for s in seqs) + 1
    manifest = build_manifest(seqs, num_classes)
    train_x, train_y, test_x, test_y = prepare_arrays(seqs, manifest, args.frames, modality=args.modality)
    return train_x, train_y, test_x, test_y, num_classes


def _schedule(args) -> ScheduleConfig:
    return ScheduleConfig(
        base_lr=args.lr,
        warmup_epochs=args.warmup,
        decay_epochs=tuple(args.decays),
        decay_factor=args.decay_factor,
    )


def _write_scores_csv(path: str, labels: np.ndarray, scores: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"score_{k}" for k in range(scores.shape[1])])
        for label, row in zip(labels, scores):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def _read_scores_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or not rows[0] or rows[0][0] != "label":
        raise ValueError(f"{path}: expected a scores CSV with a 'label,score_*' header")
    labels = np.array([int(r[0]) for r in rows[1:]], dtype=np.int64)
    scores = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return labels, scores


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate_synth(args) -> int:
    seqs = synth_generate(
        args.classes,
        args.per_class,
        joints=args.joints,
        frames=args.frames,
        seed=args.seed,
        noise_sigma=args.noise,
    )
    _save_dataset(args.out, seqs)
    print(f"wrote {len(seqs)} sequences ({args.classes} classes) to {args.out}")
    return 0


def cmd_train(args) -> int:
    seqs = _load_dataset(args.data)
    train_x, train_y, test_x, test_y, num_classes = _split_dataset(seqs, args)
    cfg = _model_config(args, seqs[0].joints, seqs[0].channels, num_classes)
    result = train_loop(
        train_x, train_y, test_x, test_y, cfg,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        schedule=_schedule(args),
        momentum=args.momentum,
        weight_decay=args.wd,
        threads=args.threads,
        log=print,
    )
    print(f"best test_acc {result.best_test_acc:.4f} at epoch {result.best_epoch}")
    if args.out:
        save_model(args.out, result.params)
        print(f"saved final model to {args.out}")
    if args.best_out:
        if result.best_checkpoint is None:
            raise ValueError("no best checkpoint recorded (zero epochs?)")
        Path(args.best_out).write_bytes(result.best_checkpoint)
        print(f"saved best-epoch model to {args.best_out}")
    if args.metrics:
        with open(args.metrics, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "lr", "train_loss", "train_acc", "test_acc"])
            for m in result.metrics:
                writer.writerow([m.epoch, repr(m.lr), repr(m.train_loss), repr(m.train_acc), repr(m.test_acc)])
        print(f"wrote metrics to {args.metrics}")
    return 0


def _eval_subset(seqs: list[SkeletonSequence], params, split: str, modality: str):
    cfg = params.config
    num_classes = max(s.label for s in seqs) + 1
    if num_classes > cfg.num_classes:
        raise ValueError(f"dataset has {num_classes} classes but the model predicts {cfg.num_classes}")
    manifest = build_manifest(seqs, num_classes)
    train_x, train_y, test_x, test_y = prepare_arrays(seqs, manifest, cfg.frames, modality=modality)
    if split == "train":
        return train_x, train_y
    if split == "test":
        return test_x, test_y
    if len(train_y) and len(test_y):
        return np.concatenate([train_x, test_x]), np.concatenate([train_y, test_y])
    return (train_x, train_y) if len(train_y) else (test_x, test_y)


def cmd_eval(args) -> int:
    params = load_model(args.ckpt)
    seqs = _load_dataset(args.data)
    if not seqs:
        raise ValueError("dataset is empty")
    x, y = _eval_subset(seqs, params, args.split, args.modality)
    if len(y) == 0:
        raise ValueError(f"split {args.split!r} selected no samples")
    scores = predict_scores(params, x)
    acc = accuracy(scores, y)
    print(f"{args.split} accuracy {acc:.4f} on {len(y)} samples")
    if args.scores:
        _write_scores_csv(args.scores, np.asarray(y), scores)
        print(f"wrote scores to {args.scores}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = ModelConfig(
        joints=4, in_channels=2, frames=6, embed_channels=8, num_classes=3,
        n_hfab=1, n_lfab=1, n_sab=1, n_tab=1, ct_groups=2, seed=args.seed,
    )
    params = init_params(cfg, args.seed)
    rng = np.random.default_rng(args.seed)
    x = Tensor(rng.standard_normal((cfg.joints, cfg.in_channels, cfg.frames)))
    label = np.array([1])

    def loss():
        return cross_entropy(forward_sample(x, params), label)

    names = [name for name, _ in params.named()]
    report = grad_check(loss, params.all_tensors(), tol=1e-4, max_entries=24)
    for name, line in zip(names, report.lines()):
        print(f"{name:24s} {line}")
    print(f"max rel err {report.max_rel_err:.3e} ({'pass' if report.passed else 'FAIL'})")
    return 0 if report.passed else 1


def cmd_inspect_dct(args) -> int:
    seqs = _load_dataset(args.data)
    if not 0 <= args.sample < len(seqs):
        raise ValueError(f"sample index {args.sample} out of range (dataset has {len(seqs)})")
    s = seqs[args.sample]
    spec = dct(Tensor(s.coords), axis=2)
    partition = (
        map_partition(args.partition, s.frames)
        if args.partition_mode == "reference"
        else args.partition
    )
    low, high = band_energies(spec, partition)
    low_j = low.sum(axis=1)
    high_j = high.sum(axis=1)
    lines = ["joint_index,low_band_energy,high_band_energy,ratio"]
    for j in range(s.joints):
        lo, hi = float(low_j[j]), float(high_j[j])
        ratio = hi / lo if lo > 0.0 else (float("inf") if hi > 0.0 else 0.0)
        lines.append(f"{j},{lo!r},{hi!r},{ratio!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote band energies for sample {args.sample} to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_count_params(args) -> int:
    v2 = _model_config(args, args.joints, args.in_channels, args.classes)
    v1_style = dataclasses.replace(
        v2, n_hfab=7, n_lfab=0, n_sab=7, n_tab=1, freq_mode="uniform", freq=None,
    )
    n2 = count_parameters(v2)
    n1 = count_parameters(v1_style)
    print(f"split-operator model ({v2.n_hfab} HFAB + {v2.n_lfab} LFAB + {v2.n_sab} SAB + {v2.n_tab} TAB): {n2}")
    print(f"uniform-operator baseline (7 FAB + 7 SAB + 1 TAB): {n1}")
    print(f"ratio {n2 / n1:.4f}")
    return 0


def cmd_ensemble(args) -> int:
    if len(args.scores) < 2:
        raise UsageError("ensemble needs at least two score files")
    labels = None
    streams = []
    for path in args.scores:
        got_labels, got_scores = _read_scores_csv(path)
        if labels is None:
            labels = got_labels
        elif not np.array_equal(labels, got_labels):
            raise ValueError(f"{path}: label column does not match the first stream")
        streams.append(got_scores)
    weights = args.weights if args.weights is not None else tuple(1.0 for _ in streams)
    if len(weights) != len(streams):
        raise UsageError(f"{len(weights)} weights for {len(streams)} score files")
    fused = fuse_scores(streams, weights)
    pred = ensemble_fuse(streams, weights)
    acc = float(np.mean(pred == labels))
    print(f"ensemble accuracy {acc:.4f} over {len(streams)} streams, {len(labels)} samples")
    if args.out:
        _write_scores_csv(args.out, labels, fused)
        print(f"wrote fused scores to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    seqs = _load_dataset(args.data)
    train_x, train_y, test_x, test_y, num_classes = _split_dataset(seqs, args)
    base_cfg = _model_config(args, seqs[0].joints, seqs[0].channels, num_classes)

    def run_one(cfg: ModelConfig) -> float:
        result = train_loop(
            train_x, train_y, test_x, test_y, cfg,
            epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
            schedule=_schedule(args), momentum=args.momentum,
            weight_decay=args.wd, threads=args.threads,
        )
        return result.metrics[-1].test_acc if result.metrics else 0.0

    rows: list[str] = []
    if args.sweep == "partition":
        try:
            values = _csv_ints(args.values)
        except argparse.ArgumentTypeError as e:
            raise UsageError(str(e))
        rows.append("partition,test_accuracy")
        for value in values:
            part = map_partition(value, args.frames) if args.partition_mode == "reference" else value
            freq = FrequencyConfig(part, args.low_scale, args.high_scale, permissive=True)
            acc = run_one(dataclasses.replace(base_cfg, freq=freq))
            rows.append(f"{value},{acc!r}")
            print(f"partition {value}: test_acc {acc:.4f}")
    else:
        rows.append("low_scale,high_scale,test_accuracy")
        for pair in args.values.split(","):
            parts = pair.split(":")
            if len(parts) != 2:
                raise UsageError(f"band sweep values look like low:high pairs, got {pair!r}")
            try:
                low, high = float(parts[0]), float(parts[1])
            except ValueError:
                raise UsageError(f"band sweep values look like low:high pairs, got {pair!r}")
            freq = FrequencyConfig(_resolve_partition(args, args.frames), low, high, permissive=True)
            acc = run_one(dataclasses.replace(base_cfg, freq=freq))
            rows.append(f"{low!r},{high!r},{acc!r}")
            print(f"bands low={low} high={high}: test_acc {acc:.4f}")
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote sweep table to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_dump_attention(args) -> int:
    params = load_model(args.ckpt)
    cfg = params.config
    seqs = _load_dataset(args.data)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    for idx in args.samples:
        if not 0 <= idx < len(seqs):
            raise ValueError(f"sample index {idx} out of range (dataset has {len(seqs)})")
        s = seqs[idx]
        if (s.joints, s.channels) != (cfg.joints, cfg.in_channels):
            raise ValueError(
                f"sample {idx} is ({s.joints} joints, {s.channels} channels); "
                f"the model expects ({cfg.joints}, {cfg.in_channels})"
            )
        trace: dict[str, np.ndarray] = {}
        forward_sample(normalize(s, cfg.frames), params, trace)
        blocks: dict[str, list[tuple[str, np.ndarray]]] = {}
        for key, value in trace.items():
            block, map_name = key.split(".", 1)
            blocks.setdefault(block, []).append((map_name, value))
        for block, maps in blocks.items():
            path = out_dir / f"sample{idx}.{block}.csv"
            with open(path, "w", encoding="utf-8") as fh:
                for map_name, mat in maps:
                    fh.write(f"# {map_name}\n")
                    for row in np.atleast_2d(mat):
                        fh.write(",".join(repr(float(v)) for v in row) + "\n")
            written += 1
    print(f"wrote {written} attention files to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def _build() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="skelfreq",
        description="Frequency-aware skeleton action recognition toolkit.",
    )
    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand")
    subs: dict[str, argparse.ArgumentParser] = {}

    def new(name: str, help_text: str, func) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--config", default=None, help="key=value config file (flags override it)")
        p.add_argument("--seed", type=int, default=0, help="pinned random seed")
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = new("generate-synth", "write a synthetic frequency-signature dataset", cmd_generate_synth)
    p.add_argument("--classes", type=int, default=4, help="number of classes")
    p.add_argument("--per-class", type=int, default=250, help="samples per class")
    p.add_argument("--joints", type=int, default=25, help="joints per skeleton")
    p.add_argument("--frames", type=int, default=64, help="frames per sequence")
    p.add_argument("--noise", type=float, default=0.003, help="gaussian noise sigma")
    p.add_argument("--out", required=True, help="output path (.jsonl, or .skl/.skl1/.bin binary)")

    p = new("train", "train a model on a dataset file", cmd_train)
    p.add_argument("--data", required=True, help="dataset path (subject split: 8,9 held out)")
    p.add_argument("--out", default=None, help="save the final model here")
    p.add_argument("--best-out", default=None, help="save the best-test-epoch model here")
    p.add_argument("--metrics", default=None, help="write per-epoch metrics CSV here")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)

    p = new("eval", "evaluate a checkpoint on a dataset file", cmd_eval)
    p.add_argument("--ckpt", required=True, help="model checkpoint path")
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--split", choices=("train", "test", "all"), default="test", help="which subset to score")
    p.add_argument("--modality", choices=MODALITIES, default="joint", help="derived input stream")
    p.add_argument("--scores", default=None, help="write per-sample scores CSV here")

    new("gradcheck", "finite-difference check on a tiny model", cmd_gradcheck)

    p = new("inspect-dct", "per-joint band energies of one sample", cmd_inspect_dct)
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--sample", type=int, default=0, help="sample index")
    p.add_argument("--partition", type=int, default=DEFAULT_PARTITION_REF, help="band partition")
    p.add_argument("--partition-mode", choices=("reference", "literal"), default="reference",
                   help="reference: rescale --partition from the 25-point reference axis; literal: use as-is")
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")

    p = new("count-params", "parameter counts: split-operator model vs uniform baseline", cmd_count_params)
    p.add_argument("--joints", type=int, default=25, help="joints per skeleton")
    p.add_argument("--in-channels", type=int, default=3, help="input channels")
    p.add_argument("--classes", type=int, default=4, help="number of classes")
    p.add_argument("--frames", type=int, default=64, help="frames fed to the model")
    _add_model_flags(p)

    p = new("ensemble", "fuse score CSVs from several streams", cmd_ensemble)
    p.add_argument("--scores", nargs="+", required=True, help="two or more score CSV paths")
    p.add_argument("--weights", type=_csv_floats, default=None,
                   help="comma-separated stream weights (default: all 1)")
    p.add_argument("--out", default=None, help="write fused scores CSV here")

    p = new("sweep", "train across partition values or band-scale grids", cmd_sweep)
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--sweep", choices=("partition", "bands"), required=True, help="what to sweep")
    p.add_argument("--values", required=True,
                   help="partition: comma-separated ints; bands: comma-separated low:high pairs")
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)

    p = new("dump-attention", "write attention maps as CSV matrices", cmd_dump_attention)
    p.add_argument("--ckpt", required=True, help="model checkpoint path")
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--samples", type=_csv_ints, default=(0,), help="comma-separated sample indices")
    p.add_argument("--out-dir", required=True, help="directory for the CSV files")

    return parser, subs


def build_parser() -> argparse.ArgumentParser:
    parser, _ = _build()
    return parser


def run(argv: list[str]) -> int:
    parser, subs = _build()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if argv[0] in subs:
            # config-file defaults go on the subparser: argparse resolves
            # subcommand flags there, not on the top-level parser
            _apply_config_file(subs[argv[0]], argv[1:])
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # argparse: 2 on flag errors, 0 on --help
        return int(e.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
