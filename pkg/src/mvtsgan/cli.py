"""Command-line pipeline: ingest -> train -> synth -> eval/report.

Every subcommand accepts ``--config FILE`` holding ``key=value`` lines
(comments start with ``#``).  File values override built-in defaults and are
in turn overridden by explicit flags.  Commands that produce a directory of
artifacts also write ``config_echo.txt`` there, itself valid as a config
file, so any run can be replayed with ``mvtsgan <command> --config <echo>``.

Exit codes: 0 on success, 1 on a runtime failure (bad data, unreadable
checkpoint, diverged training), 2 on usage errors including missing input
files.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff, cgan, classify, data, metrics

logger = logging.getLogger(__name__)

_DELIMITERS = {"tab": "\t", "comma": ",", "space": " ", "semicolon": ";"}

_RUNTIME_ERRORS = (
    data.DataError,
    autodiff.CheckpointError,
    cgan.ConfigError,
    cgan.TrainingError,
    cgan.SynthesisError,
    metrics.MetricError,
    classify.ClassifyError,
    OSError,
)


class UsageError(Exception):
    """Bad invocation detected after argument parsing; maps to exit code 2."""


def _require_file(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _require_dir(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise UsageError(f"{what} not found: {path}")
    return path


def _delimiter(text: str) -> str:
    return _DELIMITERS.get(text, text)


def _channel_list(text: str) -> tuple[str, ...]:
    channels = tuple(c.strip() for c in text.split(",") if c.strip())
    if not channels:
        raise argparse.ArgumentTypeError("expected a comma-separated channel list")
    return channels


def _label(text: str) -> data.ClassLabel:
    try:
        return data.ClassLabel(text.upper())
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"unknown label {text!r} (expected FLARE or NOFLARE)"
        ) from None


def _feature_kind(text: str) -> data.FeatureKind:
    try:
        return data.FeatureKind(text.lower())
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"unknown feature {text!r} (expected mean, median, or stddev)"
        ) from None


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

def read_config_file(path: str | Path) -> list[tuple[str, str]]:
    """Parse ``key=value`` lines; returns pairs in file order."""
    path = Path(path)
    if not path.is_file():
        raise OSError(f"config file not found: {path}")
    pairs = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        pairs.append((key.strip(), value.strip()))
    return pairs


def _apply_config(sub: argparse.ArgumentParser, pairs: list[tuple[str, str]],
                  command: str) -> None:
    """Turn config pairs into subparser defaults, honoring option types."""
    actions = {a.dest: a for a in sub._actions}
    grouped: dict[str, list[str]] = {}
    for key, value in pairs:
        if key in ("config", "help"):
            continue
        if key not in actions:
            raise ValueError(f"config key {key!r} is not an option of {command!r}")
        grouped.setdefault(key, []).append(value)

    defaults = {}
    for key, values in grouped.items():
        action = actions[key]
        action.required = False  # the config satisfies it
        convert = action.type if callable(action.type) else str
        if isinstance(action, argparse._AppendAction):
            defaults[key] = [convert(v) for v in values]
            continue
        if len(values) > 1:
            raise ValueError(f"config key {key!r} given {len(values)} times")
        if isinstance(action.const, bool) or isinstance(action.default, bool):
            lowered = values[0].lower()
            if lowered not in ("true", "false", "1", "0"):
                raise ValueError(f"config key {key!r} must be true/false, got {values[0]!r}")
            defaults[key] = lowered in ("true", "1")
        else:
            defaults[key] = convert(values[0])
    sub.set_defaults(**defaults)


def _echo_value(value) -> str | list[str] | None:
    if value is None:
        return None
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (str, Path)):
        return str(value)
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, data.ClassLabel):
        return value.value
    if isinstance(value, data.FeatureKind):
        return value.value
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, list):
        return [str(_echo_value(v)) for v in value]
    return str(value)


def write_config_echo(args: argparse.Namespace, out_dir: Path) -> Path:
    """Record the resolved options of this run as a replayable config file."""
    skip = {"config", "command", "func", "verbose"}
    lines = []
    for key in sorted(vars(args)):
        if key in skip:
            continue
        rendered = _echo_value(getattr(args, key))
        if rendered is None:
            continue
        if isinstance(rendered, list):
            lines.extend(f"{key}={item}" for item in rendered)
        else:
            lines.append(f"{key}={rendered}")
    path = out_dir / "config_echo.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Shared loading helpers
# ---------------------------------------------------------------------------

def _load_real_scaled(dataset_path: str, scaler_path: str | None) -> data.Dataset:
    """Load real samples and bring them into the scaled [-1, 1] space.

    With a scaler file, raw data is imputed and scaled here.  Without one the
    file must already be scaled (it carries scaling parameters or proves to
    be gap-free and inside the interval).
    """
    ds = data.load_dataset(dataset_path)
    if scaler_path is not None:
        params, channels = data.load_scaler(scaler_path)
        if channels != ds.channels:
            raise data.ScalingError(
                f"scaler channels {channels} do not match dataset channels {ds.channels}"
            )
        return data.scale_dataset(data.impute_dataset(ds), params)
    if ds.scaling_params is not None:
        return ds
    for s in ds.samples:
        if s.missing_mask.any():
            raise data.ScalingError(
                f"sample {s.id} has gaps; pass --scaler to impute and scale raw data"
            )
        if np.abs(s.values).max() > 1.0 + 1e-12:
            raise data.ScalingError(
                f"sample {s.id} is outside [-1, 1]; pass --scaler to scale raw data"
            )
    return ds


def _default_scaler(explicit: str | None, run_dir: str | Path) -> str | None:
    """Prefer an explicit scaler file, else the one saved next to checkpoints."""
    if explicit is not None:
        return explicit
    candidate = Path(run_dir) / "scaler.json"
    return str(candidate) if candidate.is_file() else None


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_toy(args) -> int:
    ds = data.make_toy_dataset(
        seed=args.seed, n_pos=args.n_pos, n_neg=args.n_neg,
        n_timesteps=args.timesteps, n_channels=args.n_channels,
        partition_id=args.partition_id,
        pos_level_shift=args.pos_level_shift, pos_sigma=args.pos_sigma,
        neg_sigma=args.neg_sigma, pos_drift=args.pos_drift,
    )
    data.save_dataset(ds, args.out)
    counts = ds.class_counts()
    print(f"wrote {args.out}: {counts[data.ClassLabel.FLARE]} FLARE / "
          f"{counts[data.ClassLabel.NOFLARE]} NOFLARE samples, "
          f"T={args.timesteps}, P={args.n_channels}")
    return 0


def cmd_ingest(args) -> int:
    """Read raw sample files, impute gaps, and scale into [-1, 1].

    A fresh scaler is fit on the ingested samples unless ``--scaler`` names
    one fit earlier (test partitions must reuse the training scaler).
    """
    _require_file(args.manifest, "manifest")
    _require_dir(args.data_dir, "data directory")
    if args.scaler is not None:
        _require_file(args.scaler, "scaler file")

    manifest = data.read_manifest(args.manifest, delimiter=_delimiter(args.manifest_delimiter))
    raw = data.ingest_directory(
        args.data_dir, manifest, channels=args.channels,
        delimiter=_delimiter(args.delimiter), partition_id=args.partition_id,
    )
    if not raw.samples:
        raise data.IngestError(f"no usable samples under {args.data_dir}")
    imputed = data.impute_dataset(raw)
    if args.scaler is not None:
        params, channels = data.load_scaler(args.scaler)
        if channels != raw.channels:
            raise data.ScalingError(
                f"scaler channels {channels} do not match ingested channels {raw.channels}"
            )
    else:
        params = data.fit_scaler(imputed)
    scaled = data.scale_dataset(imputed, params)
    data.save_dataset(scaled, args.out)

    scaler_note = f", scaled with {args.scaler}"
    if args.scaler is None:
        scaler_out = args.scaler_out or str(Path(args.out).with_suffix(".scaler.json"))
        data.save_scaler(params, raw.channels, scaler_out)
        scaler_note = f", scaler -> {scaler_out}"
    counts = scaled.class_counts()
    rejected = len(manifest) - len(scaled)
    print(f"wrote {args.out}: {counts[data.ClassLabel.FLARE]} FLARE / "
          f"{counts[data.ClassLabel.NOFLARE]} NOFLARE samples"
          + (f" ({rejected} rejected)" if rejected else "") + scaler_note)
    return 0


def cmd_train(args) -> int:
    _require_file(args.dataset, "training dataset")
    ds = data.load_dataset(args.dataset)
    if ds.scaling_params is not None:
        scaled, params = ds, ds.scaling_params
    else:
        imputed = data.impute_dataset(ds)
        params = data.fit_scaler(imputed)
        scaled = data.scale_dataset(imputed, params)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data.save_scaler(params, ds.channels, out_dir / "scaler.json")
    write_config_echo(args, out_dir)

    config = cgan.TrainConfig(
        batch_size=args.batch_size, epochs=args.epochs,
        checkpoint_every=args.checkpoint_every, lr=args.lr,
        hidden=args.hidden, latent_dim=args.latent_dim, seed=args.seed,
        conditioning=args.conditioning,
    )
    result = cgan.train(config, scaled, out_dir)
    print(f"trained {result.epochs_run} epochs on {len(scaled)} samples: "
          f"d_loss={result.final_d_loss:.4f} g_loss={result.final_g_loss:.4f}, "
          f"{len(result.checkpoint_paths)} checkpoints in {out_dir}")
    return 0


def cmd_synth(args) -> int:
    _require_file(args.checkpoint, "checkpoint")
    if args.balance:
        if args.reference is None:
            raise UsageError("--balance needs --reference to count the class gap")
        if args.n is not None:
            raise UsageError("--balance and --n are mutually exclusive")
        _require_file(args.reference, "reference dataset")
        counts = data.load_dataset(args.reference).class_counts()
        n = counts[data.ClassLabel.NOFLARE] - counts[data.ClassLabel.FLARE]
        if n <= 0:
            raise UsageError(
                f"--balance: reference has {counts[data.ClassLabel.FLARE]} FLARE vs "
                f"{counts[data.ClassLabel.NOFLARE]} NOFLARE samples; nothing to add"
            )
    elif args.n is None:
        raise UsageError("one of --n or --balance is required")
    else:
        n = args.n

    ds = cgan.synthesize(args.checkpoint, args.label, n, args.seed)
    data.save_dataset(ds, args.out)
    print(f"wrote {args.out}: {len(ds)} synthetic {args.label.value} samples "
          f"from {args.checkpoint}")
    return 0


def _sweep_report(args, aa_mode: str) -> metrics.EpochGroupReport:
    """Evaluate every checkpoint of a run against the real minority class."""
    _require_dir(args.checkpoint_dir, "checkpoint directory")
    _require_file(args.real, "real dataset")
    real = _load_real_scaled(args.real, _default_scaler(args.scaler, args.checkpoint_dir))
    return metrics.epoch_report(
        args.checkpoint_dir, real, label=args.label,
        seed=args.seed, feature_kinds=tuple(args.features),
        n_bins=args.bins, n_groups=args.groups, aa_mode=aa_mode,
    )


def _print_group_table(report: metrics.EpochGroupReport, metric: str) -> None:
    """Per-feature table of group statistics (one row per epoch span)."""
    for kind in report.feature_kinds:
        print(f"{metric} of {kind.value} by training phase:")
        print(f"{'group':>5} {'epochs':>11} {'n':>3} "
              f"{'min':>8} {'median':>8} {'max':>8} {'mean':>8}")
        for g in report.groups:
            stats = (g.kl_stats if metric == "kl" else g.aa_stats)[kind]
            window = f"{g.lo_epoch}-{g.hi_epoch}"
            print(f"{g.index:5d} {window:>11} {len(g.epochs):3d} "
                  f"{stats.minimum:8.4f} {stats.median:8.4f} "
                  f"{stats.maximum:8.4f} {stats.mean:8.4f}")
        print()


def _print_selection(report: metrics.EpochGroupReport) -> None:
    best = report.groups[report.best_group]
    print(f"best group: {best.index} (epochs {best.lo_epoch}-{best.hi_epoch}, "
          f"pooled mean kl {best.mean_kl:.4f})")
    if report.skipped:
        print(f"skipped {len(report.skipped)} unreadable checkpoints")


def cmd_eval_kl(args) -> int:
    report = _sweep_report(args, aa_mode="vector")
    _print_group_table(report, "kl")
    _print_selection(report)
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = metrics.write_kl_files(report, out_dir)
        paths += metrics.write_group_files(report, out_dir)
        write_config_echo(args, out_dir)
        print(f"wrote {len(paths)} files to {out_dir}")
    return 0


def cmd_eval_aa(args) -> int:
    report = _sweep_report(args, aa_mode=args.aa_mode)
    _print_group_table(report, "aa")
    _print_selection(report)
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = metrics.write_aa_files(report, out_dir)
        paths += metrics.write_group_files(report, out_dir)
        write_config_echo(args, out_dir)
        print(f"wrote {len(paths)} files to {out_dir}")
    return 0


def cmd_eval_clf(args) -> int:
    _require_file(args.train, "training dataset")
    for t in args.test:
        _require_file(t, "test dataset")
    synth = None
    if args.synth is not None:
        _require_file(args.synth, "synthetic dataset")
        synth = data.load_dataset(args.synth)
    train_real = data.load_dataset(args.train)
    tests = [data.load_dataset(p) for p in args.test]

    config = classify.SvmConfig(c=args.c, gamma=args.gamma, tolerance=args.tolerance)
    results = classify.run_experiment(train_real, synth, tests, config,
                                      mode=args.featurization)

    print(f"{'arm':10} {'partition':>9} {'tp':>5} {'fn':>5} {'fp':>5} {'tn':>6} "
          f"{'tss':>8} {'hss2':>8}")
    for arm in results:
        for s in arm.scores:
            print(f"{arm.arm:10} {s.partition_id:9d} {s.cm.tp:5d} {s.cm.fn:5d} "
                  f"{s.cm.fp:5d} {s.cm.tn:6d} {s.tss:8.4f} {s.hss2:8.4f}")
    means = {arm.arm: float(np.mean([s.tss for s in arm.scores])) for arm in results}
    if "augmented" in means:
        print(f"mean tss: baseline={means['baseline']:.4f} "
              f"augmented={means['augmented']:.4f} "
              f"delta={means['augmented'] - means['baseline']:+.4f}")
    else:
        print(f"mean tss: baseline={means['baseline']:.4f}")

    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = classify.write_experiment_files(results, out_dir, config,
                                                mode=args.featurization)
        write_config_echo(args, out_dir)
        print(f"wrote {', '.join(str(p) for p in paths)}")
    return 0


def cmd_report(args) -> int:
    report = _sweep_report(args, aa_mode=args.aa_mode)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = metrics.write_report_files(report, out_dir)
    write_config_echo(args, out_dir)

    print(f"{'group':>5} {'epochs':>11} {'n':>3} {'mean_kl':>9}")
    for g in report.groups:
        window = f"{g.lo_epoch}-{g.hi_epoch}"
        print(f"{g.index:5d} {window:>11} {len(g.epochs):3d} {g.mean_kl:9.4f}")
    _print_selection(report)
    if args.svg:
        for kind in report.feature_kinds:
            svg_path = out_dir / f"kl_groups_{kind.value}.svg"
            svg_path.write_text(group_boxplot_svg(report, kind), encoding="utf-8")
            paths.append(svg_path)
    print(f"wrote {len(paths)} report files to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# SVG rendering (no plotting dependency; output is deterministic)
# ---------------------------------------------------------------------------

def group_boxplot_svg(report: metrics.EpochGroupReport, kind: data.FeatureKind,
                      width: int = 640, height: int = 360) -> str:
    """Render one feature's per-group KL box statistics as a standalone SVG."""
    margin_l, margin_r, margin_t, margin_b = 60, 20, 30, 50
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b
    boxes = {g.index: g.kl_stats[kind] for g in report.groups if g.epochs}
    top = max((b.maximum for b in boxes.values()), default=1.0)
    top = top * 1.05 if top > 0 else 1.0

    def x_center(i: int) -> float:
        return margin_l + plot_w * (i + 0.5) / len(report.groups)

    def y_of(v: float) -> float:
        return margin_t + plot_h * (1.0 - v / top)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{margin_l}" y="18" font-family="sans-serif" font-size="13">'
        f'KL divergence of {kind.value} by training phase</text>',
    ]
    # Axes and y ticks.
    parts.append(f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" '
                 f'y2="{margin_t + plot_h}" stroke="black"/>')
    parts.append(f'<line x1="{margin_l}" y1="{margin_t + plot_h}" '
                 f'x2="{margin_l + plot_w}" y2="{margin_t + plot_h}" stroke="black"/>')
    for i in range(6):
        v = top * i / 5
        y = y_of(v)
        parts.append(f'<line x1="{margin_l - 4}" y1="{y:.1f}" x2="{margin_l}" '
                     f'y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{margin_l - 8}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{v:.2f}</text>')

    box_w = min(40.0, plot_w / max(len(report.groups), 1) * 0.5)
    for g in report.groups:
        cx = x_center(g.index)
        label = f"{g.lo_epoch}-{g.hi_epoch}"
        parts.append(f'<text x="{cx:.1f}" y="{margin_t + plot_h + 16}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="10">{label}</text>')
        if g.index not in boxes:
            continue
        box = boxes[g.index]
        fill = "#9ecae1" if g.index == report.best_group else "#dddddd"
        parts.append(f'<line x1="{cx:.1f}" y1="{y_of(box.minimum):.1f}" x2="{cx:.1f}" '
                     f'y2="{y_of(box.maximum):.1f}" stroke="black"/>')
        for v in (box.minimum, box.maximum):
            parts.append(f'<line x1="{cx - box_w / 4:.1f}" y1="{y_of(v):.1f}" '
                         f'x2="{cx + box_w / 4:.1f}" y2="{y_of(v):.1f}" stroke="black"/>')
        parts.append(f'<rect x="{cx - box_w / 2:.1f}" y="{y_of(box.q3):.1f}" '
                     f'width="{box_w:.1f}" '
                     f'height="{max(y_of(box.q1) - y_of(box.q3), 0.5):.1f}" '
                     f'fill="{fill}" stroke="black"/>')
        parts.append(f'<line x1="{cx - box_w / 2:.1f}" y1="{y_of(box.median):.1f}" '
                     f'x2="{cx + box_w / 2:.1f}" y2="{y_of(box.median):.1f}" '
                     f'stroke="black" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="mvtsgan",
        description="Synthesize minority-class multivariate time series with a "
                    "conditional GAN and evaluate fidelity and classifier lift.",
    )
    parser.add_argument("--verbose", action="store_true", help="log progress details")
    commands = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    def command(name: str, handler, **kwargs) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, **kwargs)
        sub.add_argument("--config", default=None,
                         help="key=value file; flags override its entries")
        sub.set_defaults(func=handler)
        registry[name] = sub
        return sub

    sub = command("toy", cmd_toy, help="generate a labeled synthetic-truth dataset")
    sub.add_argument("--out", required=True, help="output dataset JSON path")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--n-pos", type=int, default=32, help="FLARE sample count")
    sub.add_argument("--n-neg", type=int, default=32, help="NOFLARE sample count")
    sub.add_argument("--timesteps", type=int, default=data.DEFAULT_TIMESTEPS)
    sub.add_argument("--n-channels", type=int, default=len(data.DEFAULT_CHANNELS))
    sub.add_argument("--partition-id", type=int, default=0)
    sub.add_argument("--pos-level-shift", type=float, default=data.TOY_POS_LEVEL_SHIFT,
                     help="class separation; lower values overlap the classes")
    sub.add_argument("--pos-sigma", type=float, default=data.TOY_POS_SIGMA)
    sub.add_argument("--neg-sigma", type=float, default=data.TOY_NEG_SIGMA)
    sub.add_argument("--pos-drift", type=float, default=data.TOY_POS_DRIFT)

    sub = command("ingest", cmd_ingest,
                  help="read, impute, and scale delimited sample files into one dataset")
    sub.add_argument("--data-dir", required=True)
    sub.add_argument("--manifest", required=True, help="sample_id,label file")
    sub.add_argument("--out", required=True, help="output dataset JSON path")
    sub.add_argument("--channels", type=_channel_list,
                     default=data.DEFAULT_CHANNELS,
                     help="comma-separated channel names to keep")
    sub.add_argument("--delimiter", default="tab",
                     help="sample file delimiter (tab, comma, space, or literal)")
    sub.add_argument("--manifest-delimiter", default="comma")
    sub.add_argument("--partition-id", type=int, default=0)
    sub.add_argument("--scaler", default=None,
                     help="reuse this scaler instead of fitting one (test partitions)")
    sub.add_argument("--scaler-out", default=None,
                     help="where to save a freshly fit scaler "
                          "(default: <out>.scaler.json)")

    sub = command("train", cmd_train, help="train the conditional GAN on one dataset")
    sub.add_argument("--dataset", required=True,
                     help="dataset JSON; raw input is imputed and scaled here")
    sub.add_argument("--out-dir", required=True, help="run directory for checkpoints")
    sub.add_argument("--batch-size", type=int, default=32)
    sub.add_argument("--epochs", type=int, default=300)
    sub.add_argument("--checkpoint-every", type=int, default=5)
    sub.add_argument("--lr", type=float, default=0.1)
    sub.add_argument("--hidden", type=int, default=100)
    sub.add_argument("--latent-dim", type=int, default=3)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--conditioning", choices=cgan.CONDITIONING_MODES, default="both",
                     help="classes the generator sees while training")

    sub = command("synth", cmd_synth, help="sample a trained generator checkpoint")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--out", required=True, help="output dataset JSON path")
    sub.add_argument("--n", type=int, default=None, help="number of samples")
    sub.add_argument("--balance", action="store_true",
                     help="synthesize enough positives to even out --reference")
    sub.add_argument("--reference", default=None,
                     help="dataset whose class gap --balance fills")
    sub.add_argument("--label", type=_label, default=data.ClassLabel.FLARE)
    sub.add_argument("--seed", type=int, default=0)

    def add_sweep_options(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--checkpoint-dir", required=True,
                         help="run directory from train")
        sub.add_argument("--real", required=True, help="real dataset JSON")
        sub.add_argument("--scaler", default=None,
                         help="defaults to scaler.json inside --checkpoint-dir")
        sub.add_argument("--seed", type=int, default=0)
        sub.add_argument("--bins", type=int, default=metrics.DEFAULT_BINS)
        sub.add_argument("--groups", type=int, default=metrics.DEFAULT_GROUPS)
        sub.add_argument("--label", type=_label, default=data.ClassLabel.FLARE)
        sub.add_argument("--features", type=_feature_kind, action="append",
                         help="repeatable; defaults to all three")

    sub = command("eval-kl", cmd_eval_kl,
                  help="per-phase KL divergence of every checkpoint of a run")
    add_sweep_options(sub)
    sub.add_argument("--out-dir", default=None, help="also write per-epoch CSV files")

    sub = command("eval-aa", cmd_eval_aa,
                  help="per-phase adversarial accuracy of every checkpoint of a run")
    add_sweep_options(sub)
    sub.add_argument("--aa-mode", choices=metrics.AA_MODES, default="vector")
    sub.add_argument("--out-dir", default=None, help="also write per-epoch CSV files")

    sub = command("eval-clf", cmd_eval_clf,
                  help="baseline vs synthetic-augmented classifier comparison")
    sub.add_argument("--train", required=True, help="real training dataset JSON")
    sub.add_argument("--synth", default=None,
                     help="synthetic dataset JSON; omit for the baseline arm only")
    sub.add_argument("--test", action="append", required=True,
                     help="real test dataset JSON (repeatable)")
    sub.add_argument("--featurization", choices=classify.FEATURIZE_MODES,
                     default="flatten")
    sub.add_argument("--c", type=float, default=0.25, help="soft-margin penalty")
    sub.add_argument("--gamma", type=float, default=0.25, help="kernel width")
    sub.add_argument("--tolerance", type=float, default=1e-3)
    sub.add_argument("--out-dir", default=None, help="where to write CSV/JSON results")

    sub = command("report", cmd_report,
                  help="score every checkpoint of a run and pick the best phase")
    add_sweep_options(sub)
    sub.add_argument("--out-dir", required=True)
    sub.add_argument("--aa-mode", choices=metrics.AA_MODES, default="vector")
    sub.add_argument("--svg", action="store_true", help="also draw the group boxplots")

    return parser, registry


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, registry = build_parser()

    config_path = None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif token.startswith("--config="):
            config_path = token.split("=", 1)[1]
    if config_path is not None:
        command = next((t for t in argv if not t.startswith("-")), None)
        if command not in registry:
            parser.error(f"--config requires a known command, got {command!r}")
        try:
            _apply_config(registry[command], read_config_file(config_path), command)
        except (OSError, ValueError, argparse.ArgumentTypeError) as exc:
            parser.error(str(exc))

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "features", None) is None and hasattr(args, "features"):
        args.features = list(data.FeatureKind)

    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
