"""Fidelity metrics comparing real and synthetic sample populations.

Two views are compared, always on per-sample summary features (mean, median,
or population standard deviation per channel):

* KL divergence between 20-bin histograms built on a shared, equal-width
  grid spanning the union range of both populations, with add-one smoothing
  so empty bins stay finite.  Orientation is KL(real || synthetic).
* Adversarial accuracy: how often a sample's nearest neighbour in the other
  population is farther (strictly; ties count as not farther) than its
  nearest neighbour in its own population, leave-one-out on the own side,
  Euclidean distance.  Indistinguishable populations score near 0.5;
  memorized copies score 0; well-separated populations score 1.

:func:`epoch_report` sweeps a directory of training checkpoints, synthesizes
a comparison population per checkpoint, and aggregates both metrics into
equal spans of the training run (six by default) so the most faithful
training phase can be picked.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cgan import CHECKPOINT_PREFIX, SynthesisError, synthesize
from .data import ClassLabel, Dataset, FeatureKind, extract_feature

logger = logging.getLogger(__name__)

DEFAULT_BINS = 20
DEFAULT_GROUPS = 6
DEGENERATE_HALF_WIDTH = 0.5

AA_MODES = ("vector", "per-channel")


class MetricError(Exception):
    """Inputs are too small, misaligned, or non-finite for the metric."""


# ---------------------------------------------------------------------------
# Histograms and KL divergence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureDistribution:
    """A binned view of one summary feature on one channel.

    ``bin_edges`` has one more entry than ``counts``; bins are equal-width,
    right-open except the last.  ``total`` equals the number of binned
    values, none of which are dropped.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    total: int
    feature: FeatureKind | None = None
    channel: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "bin_edges", np.asarray(self.bin_edges, dtype=np.float64))
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))
        if self.bin_edges.ndim != 1 or self.counts.ndim != 1:
            raise MetricError("bin_edges and counts must be 1-D")
        if self.bin_edges.size != self.counts.size + 1:
            raise MetricError(
                f"{self.bin_edges.size} edges cannot delimit {self.counts.size} bins"
            )
        if not (np.diff(self.bin_edges) > 0).all():
            raise MetricError("bin edges must be strictly increasing")
        if (self.counts < 0).any():
            raise MetricError("bin counts must be non-negative")
        if int(self.counts.sum()) != self.total:
            raise MetricError(
                f"counts sum to {int(self.counts.sum())}, expected total {self.total}"
            )


def shared_edges(a: np.ndarray, b: np.ndarray, n_bins: int = DEFAULT_BINS) -> np.ndarray:
    """Equal-width bin edges spanning the union range of both 1-D arrays.

    A degenerate range (all values identical) is widened by +-0.5 so the
    histogram stays well defined.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise MetricError("shared_edges needs non-empty inputs on both sides")
    merged = np.concatenate([a, b])
    if not np.isfinite(merged).all():
        raise MetricError("shared_edges: inputs must be finite")
    lo, hi = merged.min(), merged.max()
    if lo == hi:
        lo -= DEGENERATE_HALF_WIDTH
        hi += DEGENERATE_HALF_WIDTH
    return np.linspace(lo, hi, n_bins + 1)


def bin_features(
    values: np.ndarray,
    edges: np.ndarray,
    feature: FeatureKind | None = None,
    channel: str | None = None,
) -> FeatureDistribution:
    """Histogram the values onto the given shared edges; mass is conserved.

    Values are clamped into the edge range first, so nothing is dropped.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise MetricError("bin_features: values must be non-empty")
    if not np.isfinite(values).all():
        raise MetricError("bin_features: values must be finite")
    edges = np.asarray(edges, dtype=np.float64)
    clamped = np.clip(values, edges[0], edges[-1])
    counts, _ = np.histogram(clamped, bins=edges)
    return FeatureDistribution(bin_edges=edges, counts=counts, total=values.size,
                               feature=feature, channel=channel)


def kl_divergence(p: FeatureDistribution, q: FeatureDistribution) -> float:
    """KL(p || q) over add-one-smoothed, normalized bin counts.

    Both distributions must sit on identical bin edges; smoothing keeps the
    value finite when either side has empty bins.
    """
    if p.bin_edges.shape != q.bin_edges.shape or not np.array_equal(p.bin_edges, q.bin_edges):
        raise MetricError("kl_divergence: distributions are on different bin edges")
    p_counts = p.counts.astype(np.float64)
    q_counts = q.counts.astype(np.float64)
    p_smooth = (p_counts + 1.0) / (p_counts.sum() + p_counts.size)
    q_smooth = (q_counts + 1.0) / (q_counts.sum() + q_counts.size)
    return float(np.sum(p_smooth * np.log(p_smooth / q_smooth)))


def feature_matrix(dataset: Dataset, kind: FeatureKind) -> np.ndarray:
    """Per-sample summary features, stacked to [N x P]."""
    if len(dataset) == 0:
        raise MetricError("feature_matrix: dataset is empty")
    return np.stack([extract_feature(s, kind) for s in dataset.samples], axis=0)


def kl_by_channel(
    real: Dataset,
    synth: Dataset,
    kind: FeatureKind,
    n_bins: int = DEFAULT_BINS,
) -> np.ndarray:
    """KL(real || synth) of one summary feature, per channel."""
    if real.channels != synth.channels:
        raise MetricError(
            f"kl_by_channel: channel mismatch {real.channels} vs {synth.channels}"
        )
    real_feats = feature_matrix(real, kind)
    synth_feats = feature_matrix(synth, kind)
    out = np.empty(real_feats.shape[1])
    for j, channel in enumerate(real.channels):
        edges = shared_edges(real_feats[:, j], synth_feats[:, j], n_bins)
        out[j] = kl_divergence(
            bin_features(real_feats[:, j], edges, kind, channel),
            bin_features(synth_feats[:, j], edges, kind, channel),
        )
    return out


# ---------------------------------------------------------------------------
# Adversarial accuracy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AaResult:
    """Adversarial accuracy plus its two one-sided terms.

    ``term_ts``: fraction of real points whose nearest synthetic neighbour
    is strictly farther than their nearest other real point; ``term_st`` is
    the symmetric fraction for synthetic points.  ``value`` is their mean.
    """

    value: float
    term_ts: float
    term_st: float
    n: int


def _cross_distances(a: np.ndarray, b: np.ndarray, block: int = 256) -> np.ndarray:
    """Euclidean distance matrix [n x m], computed in row blocks."""
    out = np.empty((a.shape[0], b.shape[0]))
    for start in range(0, a.shape[0], block):
        diff = a[start:start + block, None, :] - b[None, :, :]
        out[start:start + block] = np.sqrt(np.sum(diff * diff, axis=-1))
    return out


def adversarial_accuracy(real_feats: np.ndarray, synth_feats: np.ndarray) -> AaResult:
    """Nearest-neighbour separability of two equally sized feature sets.

    For each real point, compare its nearest synthetic neighbour against its
    nearest other real point (leave-one-out); symmetrically for synthetic
    points.  Ties count as "not farther" (strict comparison).
    """
    real_feats = np.asarray(real_feats, dtype=np.float64)
    synth_feats = np.asarray(synth_feats, dtype=np.float64)
    if real_feats.ndim == 1:
        real_feats = real_feats[:, None]
    if synth_feats.ndim == 1:
        synth_feats = synth_feats[:, None]
    if real_feats.shape[0] != synth_feats.shape[0]:
        raise MetricError(
            f"adversarial_accuracy compares equally sized sets, got "
            f"{real_feats.shape[0]} real and {synth_feats.shape[0]} synthetic"
        )
    if real_feats.shape[0] < 2:
        raise MetricError("adversarial_accuracy needs n >= 2 (leave-one-out)")
    if real_feats.shape[1] != synth_feats.shape[1]:
        raise MetricError(
            f"adversarial_accuracy: dimension mismatch "
            f"{real_feats.shape[1]} vs {synth_feats.shape[1]}"
        )
    if not (np.isfinite(real_feats).all() and np.isfinite(synth_feats).all()):
        raise MetricError("adversarial_accuracy: features must be finite")

    d_tt = _cross_distances(real_feats, real_feats)
    np.fill_diagonal(d_tt, np.inf)
    d_ss = _cross_distances(synth_feats, synth_feats)
    np.fill_diagonal(d_ss, np.inf)
    d_ts = _cross_distances(real_feats, synth_feats)

    term_ts = float(np.mean(d_ts.min(axis=1) > d_tt.min(axis=1)))
    term_st = float(np.mean(d_ts.min(axis=0) > d_ss.min(axis=1)))
    return AaResult(
        value=0.5 * (term_ts + term_st),
        term_ts=term_ts,
        term_st=term_st,
        n=real_feats.shape[0],
    )


def aa_by_feature(real: Dataset, synth: Dataset, kind: FeatureKind) -> AaResult:
    """Adversarial accuracy on one summary feature across all channels.

    Each sample is represented by the P-dimensional vector of the statistic
    over channels (the default representation; see :func:`aa_per_channel`
    for the scalar-per-channel alternative).
    """
    if real.channels != synth.channels:
        raise MetricError(
            f"aa_by_feature: channel mismatch {real.channels} vs {synth.channels}"
        )
    return adversarial_accuracy(feature_matrix(real, kind), feature_matrix(synth, kind))


def aa_per_channel(real: Dataset, synth: Dataset,
                   kind: FeatureKind) -> dict[str, AaResult]:
    """Adversarial accuracy of one summary feature, channel by channel."""
    if real.channels != synth.channels:
        raise MetricError(
            f"aa_per_channel: channel mismatch {real.channels} vs {synth.channels}"
        )
    real_feats = feature_matrix(real, kind)
    synth_feats = feature_matrix(synth, kind)
    return {
        channel: adversarial_accuracy(real_feats[:, j], synth_feats[:, j])
        for j, channel in enumerate(real.channels)
    }


# ---------------------------------------------------------------------------
# Checkpoint sweep report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoxStats:
    """Five-number summary plus mean, for box-plot emission."""

    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    mean: float

    @classmethod
    def of(cls, values: np.ndarray) -> "BoxStats":
        values = np.asarray(values, dtype=np.float64)
        q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0])
        return cls(float(values.min()), float(q1), float(med), float(q3),
                   float(values.max()), float(values.mean()))


_NAN_BOX = BoxStats(*(float("nan"),) * 6)


@dataclass
class EpochMetrics:
    """Metrics for one checkpoint: per-channel KL and AA per feature kind."""

    epoch: int
    checkpoint: Path
    kl: dict[FeatureKind, np.ndarray]
    aa: dict[FeatureKind, AaResult]
    aa_channels: dict[FeatureKind, dict[str, AaResult]] | None = None


@dataclass
class GroupStats:
    """Pooled metric statistics for one contiguous span of epochs."""

    index: int
    lo_epoch: int
    hi_epoch: int
    epochs: list[int]
    kl_stats: dict[FeatureKind, BoxStats]
    aa_stats: dict[FeatureKind, BoxStats]
    mean_kl: float  # pooled over features, channels, and member checkpoints


@dataclass
class EpochGroupReport:
    """The checkpoint-sweep summary backing model selection."""

    channels: tuple[str, ...]
    feature_kinds: tuple[FeatureKind, ...]
    epochs: list[EpochMetrics]
    skipped: list[tuple[str, str]] = field(default_factory=list)
    groups: list[GroupStats] = field(default_factory=list)
    best_group: int = 0  # index of the group with the lowest pooled mean KL


def discover_checkpoints(checkpoint_dir: str | Path) -> list[tuple[int, Path]]:
    """(epoch, path) pairs for every well-named checkpoint file, ascending."""
    checkpoint_dir = Path(checkpoint_dir)
    if not checkpoint_dir.is_dir():
        raise MetricError(f"checkpoint directory not found: {checkpoint_dir}")
    found = []
    for path in checkpoint_dir.iterdir():
        if not path.name.startswith(CHECKPOINT_PREFIX):
            continue
        suffix = path.name[len(CHECKPOINT_PREFIX):]
        if suffix.isdigit():
            found.append((int(suffix), path))
    return sorted(found)


def _group_index(epoch: int, max_epoch: int, n_groups: int) -> int:
    return min(n_groups - 1, (epoch - 1) * n_groups // max_epoch)


def epoch_report(
    checkpoint_dir: str | Path,
    real: Dataset,
    n_synth: int | None = None,
    label: ClassLabel = ClassLabel.FLARE,
    seed: int = 0,
    feature_kinds: tuple[FeatureKind, ...] = tuple(FeatureKind),
    n_bins: int = DEFAULT_BINS,
    n_groups: int = DEFAULT_GROUPS,
    aa_mode: str = "vector",
) -> EpochGroupReport:
    """Score every checkpoint in a directory against the real population.

    ``real`` must hold scaled samples; only those with ``label`` are
    compared, and ``n_synth`` defaults to their count (adversarial accuracy
    requires the populations to match in size).  Each checkpoint
    synthesizes its own population, seeded by ``seed + epoch`` so reruns
    reproduce.  Checkpoints that fail to load are recorded under
    ``skipped`` and leave a gap rather than aborting the sweep.  Epochs are
    pooled into ``n_groups`` equal spans of the run; the group with the
    lowest pooled mean KL is flagged ``best_group``.
    """
    if aa_mode not in AA_MODES:
        raise MetricError(f"aa_mode must be one of {AA_MODES}, got {aa_mode!r}")
    real_minority = Dataset(
        samples=[s for s in real.samples if s.label is label],
        channels=real.channels,
        partition_id=real.partition_id,
    )
    if len(real_minority) < 2:
        raise MetricError(
            f"epoch_report needs at least 2 real {label.value} samples, "
            f"got {len(real_minority)}"
        )
    if n_synth is None:
        n_synth = len(real_minority)
    if n_synth != len(real_minority):
        raise MetricError(
            f"n_synth={n_synth} must equal the real {label.value} count "
            f"({len(real_minority)}) for a size-matched comparison"
        )

    pairs = discover_checkpoints(checkpoint_dir)
    if not pairs:
        raise MetricError(f"no checkpoints found under {checkpoint_dir}")

    epochs: list[EpochMetrics] = []
    skipped: list[tuple[str, str]] = []
    for epoch, path in pairs:
        try:
            synth = synthesize(path, label, n_synth, seed=seed + epoch)
        except SynthesisError as exc:
            logger.warning("skipping %s: %s", path, exc)
            skipped.append((str(path), str(exc)))
            continue
        kl = {
            kind: kl_by_channel(real_minority, synth, kind, n_bins)
            for kind in feature_kinds
        }
        aa = {kind: aa_by_feature(real_minority, synth, kind) for kind in feature_kinds}
        aa_channels = None
        if aa_mode == "per-channel":
            aa_channels = {
                kind: aa_per_channel(real_minority, synth, kind)
                for kind in feature_kinds
            }
        epochs.append(EpochMetrics(epoch=epoch, checkpoint=path, kl=kl, aa=aa,
                                   aa_channels=aa_channels))

    if not epochs:
        raise MetricError(
            f"all {len(pairs)} checkpoints under {checkpoint_dir} failed to load"
        )

    max_epoch = max(e.epoch for e in epochs)
    buckets: dict[int, list[EpochMetrics]] = {}
    for em in epochs:
        buckets.setdefault(_group_index(em.epoch, max_epoch, n_groups), []).append(em)

    groups: list[GroupStats] = []
    for g in range(n_groups):
        members = buckets.get(g, [])
        lo = g * max_epoch // n_groups + 1
        hi = (g + 1) * max_epoch // n_groups
        if not members:
            groups.append(GroupStats(
                index=g, lo_epoch=lo, hi_epoch=hi, epochs=[],
                kl_stats={kind: _NAN_BOX for kind in feature_kinds},
                aa_stats={kind: _NAN_BOX for kind in feature_kinds},
                mean_kl=float("nan"),
            ))
            continue
        kl_stats = {
            kind: BoxStats.of(np.concatenate([em.kl[kind] for em in members]))
            for kind in feature_kinds
        }
        aa_stats = {
            kind: BoxStats.of(np.array([em.aa[kind].value for em in members]))
            for kind in feature_kinds
        }
        pooled = np.concatenate([em.kl[kind] for em in members for kind in feature_kinds])
        groups.append(GroupStats(
            index=g, lo_epoch=lo, hi_epoch=hi,
            epochs=[em.epoch for em in members],
            kl_stats=kl_stats, aa_stats=aa_stats,
            mean_kl=float(pooled.mean()),
        ))

    scored = [g for g in groups if g.epochs]
    best = min(scored, key=lambda g: g.mean_kl).index
    return EpochGroupReport(
        channels=real.channels,
        feature_kinds=tuple(feature_kinds),
        epochs=epochs,
        skipped=skipped,
        groups=groups,
        best_group=best,
    )


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def write_kl_files(report: EpochGroupReport, out_dir: str | Path) -> list[Path]:
    """One ``kl_<feature>_<channel>.csv`` per pair: epoch, kl rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for kind in report.feature_kinds:
        for j, channel in enumerate(report.channels):
            path = out_dir / f"kl_{kind.value}_{channel}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["epoch", "kl"])
                for em in report.epochs:
                    writer.writerow([em.epoch, repr(float(em.kl[kind][j]))])
            written.append(path)
    return written


def write_aa_files(report: EpochGroupReport, out_dir: str | Path) -> list[Path]:
    """``aa_<feature>.csv`` per feature kind, plus per-channel files if present."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for kind in report.feature_kinds:
        path = out_dir / f"aa_{kind.value}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "aa", "term_ts", "term_st"])
            for em in report.epochs:
                result = em.aa[kind]
                writer.writerow([em.epoch, repr(result.value),
                                 repr(result.term_ts), repr(result.term_st)])
        written.append(path)

        if report.epochs and report.epochs[0].aa_channels is not None:
            for channel in report.channels:
                path = out_dir / f"aa_{kind.value}_{channel}.csv"
                with open(path, "w", newline="", encoding="utf-8") as fh:
                    writer = csv.writer(fh)
                    writer.writerow(["epoch", "aa", "term_ts", "term_st"])
                    for em in report.epochs:
                        result = em.aa_channels[kind][channel]
                        writer.writerow([em.epoch, repr(result.value),
                                         repr(result.term_ts), repr(result.term_st)])
                written.append(path)
    return written


def write_group_files(report: EpochGroupReport, out_dir: str | Path) -> list[Path]:
    """``groups.csv`` (box stats per group x feature) and ``report.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    groups_path = out_dir / "groups.csv"
    with open(groups_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "lo_epoch", "hi_epoch", "n_checkpoints", "metric",
                         "feature", "min", "q1", "median", "q3", "max", "mean",
                         "selected"])
        for g in report.groups:
            selected = int(g.index == report.best_group)
            for metric, stats in (("kl", g.kl_stats), ("aa", g.aa_stats)):
                for kind in report.feature_kinds:
                    box = stats[kind]
                    writer.writerow([
                        g.index, g.lo_epoch, g.hi_epoch, len(g.epochs), metric,
                        kind.value, repr(box.minimum), repr(box.q1), repr(box.median),
                        repr(box.q3), repr(box.maximum), repr(box.mean), selected,
                    ])

    def box_block(box: BoxStats) -> list[float]:
        return [box.minimum, box.q1, box.median, box.q3, box.maximum, box.mean]

    summary = {
        "channels": list(report.channels),
        "feature_kinds": [k.value for k in report.feature_kinds],
        "n_checkpoints": len(report.epochs),
        "skipped": [{"checkpoint": p, "reason": r} for p, r in report.skipped],
        "best_group": report.best_group,
        "groups": [
            {
                "index": g.index,
                "epoch_range": [g.lo_epoch, g.hi_epoch],
                "epochs": g.epochs,
                "mean_kl": g.mean_kl,
                "kl": {k.value: box_block(g.kl_stats[k]) for k in report.feature_kinds},
                "aa": {k.value: box_block(g.aa_stats[k]) for k in report.feature_kinds},
            }
            for g in report.groups
        ],
    }
    summary_path = out_dir / "report.json"
    summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return [groups_path, summary_path]


def write_report_files(report: EpochGroupReport, out_dir: str | Path) -> list[Path]:
    """Emit the full report: KL tables, AA tables, group stats, JSON summary."""
    return (
        write_kl_files(report, out_dir)
        + write_aa_files(report, out_dir)
        + write_group_files(report, out_dir)
    )
