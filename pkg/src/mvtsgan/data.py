"""Labeled multivariate time series: ingestion, preprocessing, features.

A sample is a [T x P] matrix of T timesteps over P named channels plus a
binary class label.  The on-disk formats are:

- sample file: UTF-8 delimited text (default tab), one header row of channel
  names, then T data rows.  Cells that fail to parse as a float are treated
  as missing.
- manifest: delimited text with rows ``sample_id,label``, label one of
  FLARE / NOFLARE.  The sample_id is the file name inside the data directory.
- canonical dataset: a single JSON document with a schema version field
  (see :func:`save_dataset` / :func:`load_dataset`).

All per-sample operations (imputation, scaling, feature extraction) are pure
functions; they can safely be mapped over samples in parallel.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

DATASET_FORMAT = "mvtsgan-dataset"
DATASET_VERSION = 1

DEFAULT_CHANNELS = ("TOTUSJH", "ABSNJZH", "SAVNCPP", "TOTBSQ")
DEFAULT_TIMESTEPS = 60


class DataError(Exception):
    """Base class for data-layer failures."""


class IngestError(DataError):
    """Raised when a directory or manifest cannot be ingested."""


class ImputationError(DataError):
    """Raised when a channel has too few observed values to interpolate."""


class ScalingError(DataError):
    """Raised on scaler misuse (shape mismatch, unimputed input)."""


class ClassLabel(Enum):
    """Binary flare label; FLARE is the positive (rare) class."""

    NOFLARE = "NOFLARE"
    FLARE = "FLARE"

    @property
    def positive(self) -> bool:
        return self is ClassLabel.FLARE


class FeatureKind(Enum):
    MEAN = "mean"
    MEDIAN = "median"
    STDDEV = "stddev"


@dataclass
class MvtsSample:
    """One labeled series: ``values`` is [T x P], ``missing_mask`` marks gaps."""

    values: np.ndarray
    label: ClassLabel
    id: str
    missing_mask: np.ndarray
    synthetic: bool = False

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        if self.values.ndim != 2:
            raise DataError(f"sample {self.id}: values must be 2-D, got {self.values.ndim}-D")
        if self.values.shape[0] < 2 or self.values.shape[1] < 1:
            raise DataError(
                f"sample {self.id}: need T >= 2 and P >= 1, got shape {self.values.shape}"
            )
        if self.missing_mask.shape != self.values.shape:
            raise DataError(f"sample {self.id}: missing_mask shape does not match values")

    @property
    def n_timesteps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclass
class Dataset:
    """A collection of samples sharing one channel set and scaling state.

    ``scaling_params`` is a per-channel (min, max) array of shape [P x 2],
    recorded when a scaler is fit on a training set; once set it is reused
    verbatim for every later transform (train-fit, test-apply).
    """

    samples: list[MvtsSample]
    channels: tuple[str, ...]
    partition_id: int = 0
    scaling_params: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.channels = tuple(self.channels)
        for s in self.samples:
            if s.n_channels != len(self.channels):
                raise DataError(
                    f"sample {s.id}: {s.n_channels} channels, dataset declares {len(self.channels)}"
                )
        if self.scaling_params is not None:
            self.scaling_params = np.asarray(self.scaling_params, dtype=np.float64)
            if self.scaling_params.shape != (len(self.channels), 2):
                raise DataError("scaling_params must have shape [P x 2]")

    def __len__(self) -> int:
        return len(self.samples)

    def class_counts(self) -> dict[ClassLabel, int]:
        counts = {ClassLabel.NOFLARE: 0, ClassLabel.FLARE: 0}
        for s in self.samples:
            counts[s.label] += 1
        return counts

    def imbalance_ratio(self) -> float:
        counts = self.class_counts()
        pos = counts[ClassLabel.FLARE]
        if pos == 0:
            return math.inf if counts[ClassLabel.NOFLARE] > 0 else 0.0
        return counts[ClassLabel.NOFLARE] / pos

    def positives(self) -> list[MvtsSample]:
        return [s for s in self.samples if s.label is ClassLabel.FLARE]

    def negatives(self) -> list[MvtsSample]:
        return [s for s in self.samples if s.label is ClassLabel.NOFLARE]


@dataclass(frozen=True)
class ConditionVector:
    """One-hot class conditioning repeated over T rows: shape [T x 2].

    Column 0 encodes NOFLARE, column 1 encodes FLARE; every row is identical
    and sums to one.
    """

    one_hot: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "one_hot", np.asarray(self.one_hot, dtype=np.float64))


def one_hot(label: ClassLabel, n_timesteps: int) -> ConditionVector:
    """Encode ``label`` as a constant-row [T x 2] one-hot matrix."""
    if n_timesteps < 1:
        raise DataError(f"n_timesteps must be >= 1, got {n_timesteps}")
    row = np.array([0.0, 1.0]) if label is ClassLabel.FLARE else np.array([1.0, 0.0])
    return ConditionVector(np.tile(row, (n_timesteps, 1)))


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def read_manifest(path: str | Path, delimiter: str = ",") -> dict[str, ClassLabel]:
    """Parse a ``sample_id,label`` manifest into an id -> label mapping."""
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"manifest not found: {path}")
    mapping: dict[str, ClassLabel] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(delimiter)]
        if len(parts) != 2:
            raise IngestError(f"{path}:{lineno}: expected 'sample_id{delimiter}label', got {raw!r}")
        sample_id, label_text = parts
        try:
            label = ClassLabel(label_text.upper())
        except ValueError:
            raise IngestError(
                f"{path}:{lineno}: unknown label {label_text!r} (expected FLARE or NOFLARE)"
            ) from None
        if sample_id in mapping:
            raise IngestError(f"{path}:{lineno}: duplicate sample id {sample_id!r}")
        mapping[sample_id] = label
    if not mapping:
        raise IngestError(f"manifest {path} contains no entries")
    return mapping


def _read_sample_file(
    path: Path, channels: tuple[str, ...], delimiter: str
) -> tuple[np.ndarray, np.ndarray]:
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(lines) < 3:
        raise IngestError(f"{path}: need a header row and at least 2 data rows")
    header = [h.strip() for h in lines[0].split(delimiter)]
    col_index = {}
    for name in channels:
        if name not in header:
            raise IngestError(f"{path}: header is missing channel {name!r}")
        col_index[name] = header.index(name)

    n_rows = len(lines) - 1
    values = np.zeros((n_rows, len(channels)))
    missing = np.zeros((n_rows, len(channels)), dtype=bool)
    for t, line in enumerate(lines[1:]):
        cells = line.split(delimiter)
        for p, name in enumerate(channels):
            idx = col_index[name]
            cell = cells[idx].strip() if idx < len(cells) else ""
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if math.isfinite(v):
                values[t, p] = v
            else:
                missing[t, p] = True
    return values, missing


def ingest_directory(
    path: str | Path,
    manifest: str | Path | dict[str, ClassLabel],
    channels: tuple[str, ...] = DEFAULT_CHANNELS,
    delimiter: str = "\t",
    partition_id: int = 0,
) -> Dataset:
    """Load every manifest-listed sample file under ``path``.

    Each manifest id names a file inside the directory.  Unparseable cells
    become missing-mask entries; a sample with fewer than two observed values
    in any requested channel is rejected (with a logged reason) rather than
    failing the whole ingest.
    """
    path = Path(path)
    if not path.is_dir():
        raise IngestError(f"data directory not found: {path}")
    mapping = manifest if isinstance(manifest, dict) else read_manifest(manifest)

    samples: list[MvtsSample] = []
    for sample_id, label in mapping.items():
        sample_path = path / sample_id
        if not sample_path.is_file():
            raise IngestError(f"manifest entry {sample_id!r} has no file under {path}")
        values, missing = _read_sample_file(sample_path, tuple(channels), delimiter)
        observed_per_channel = (~missing).sum(axis=0)
        if observed_per_channel.min() < 2:
            bad = channels[int(observed_per_channel.argmin())]
            logger.warning(
                "rejecting sample %s: channel %s has %d observed values (need >= 2)",
                sample_id, bad, int(observed_per_channel.min()),
            )
            continue
        samples.append(MvtsSample(values=values, label=label, id=sample_id, missing_mask=missing))
    return Dataset(samples=samples, channels=tuple(channels), partition_id=partition_id)


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

def impute_linear(sample: MvtsSample) -> MvtsSample:
    """Fill gaps channel-wise by linear interpolation between observed values.

    Leading and trailing gaps take the nearest observed value (constant
    extension), which keeps the operation total on edge gaps.  Idempotent.
    """
    if not sample.missing_mask.any():
        return replace(
            sample,
            values=sample.values.copy(),
            missing_mask=np.zeros_like(sample.missing_mask),
        )
    values = sample.values.copy()
    t_axis = np.arange(sample.n_timesteps, dtype=np.float64)
    for p in range(sample.n_channels):
        known = ~sample.missing_mask[:, p]
        if known.sum() < 2:
            raise ImputationError(
                f"sample {sample.id}: channel {p} has {int(known.sum())} observed values, need >= 2"
            )
        if known.all():
            continue
        values[:, p] = np.interp(t_axis, t_axis[known], sample.values[known, p])
    return replace(sample, values=values, missing_mask=np.zeros_like(sample.missing_mask))


def impute_dataset(dataset: Dataset) -> Dataset:
    return replace(dataset, samples=[impute_linear(s) for s in dataset.samples])


def fit_scaler(train: Dataset) -> np.ndarray:
    """Per-channel (min, max) over every training sample and timestep."""
    if not train.samples:
        raise ScalingError("cannot fit a scaler on an empty dataset")
    for s in train.samples:
        if s.missing_mask.any():
            raise ScalingError(f"sample {s.id} still has missing values; impute first")
    stacked = np.concatenate([s.values for s in train.samples], axis=0)
    return np.stack([stacked.min(axis=0), stacked.max(axis=0)], axis=1)


def apply_scaler(sample: MvtsSample, params: np.ndarray) -> MvtsSample:
    """Affine-map each channel to [-1, 1] using train-fit (min, max) pairs.

    Values outside the training range clamp to the interval ends; a
    degenerate channel (min == max) maps to zero.
    """
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (sample.n_channels, 2):
        raise ScalingError(
            f"sample {sample.id}: scaler covers {params.shape[0]} channels, "
            f"sample has {sample.n_channels}"
        )
    if sample.missing_mask.any():
        raise ScalingError(f"sample {sample.id} still has missing values; impute first")
    lo, hi = params[:, 0], params[:, 1]
    span = hi - lo
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = 2.0 * (sample.values - lo) / span - 1.0
    scaled = np.where(span == 0.0, 0.0, scaled)
    scaled = np.clip(scaled, -1.0, 1.0)
    return replace(sample, values=scaled, missing_mask=sample.missing_mask.copy())


def invert_scaler(sample: MvtsSample, params: np.ndarray) -> MvtsSample:
    """Map a scaled sample back to physical units (degenerate channels -> min)."""
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (sample.n_channels, 2):
        raise ScalingError("scaler channel count does not match sample")
    lo, hi = params[:, 0], params[:, 1]
    values = (sample.values + 1.0) / 2.0 * (hi - lo) + lo
    return replace(sample, values=values, missing_mask=sample.missing_mask.copy())


def scale_dataset(dataset: Dataset, params: np.ndarray) -> Dataset:
    scaled = [apply_scaler(s, params) for s in dataset.samples]
    return replace(dataset, samples=scaled, scaling_params=np.asarray(params, dtype=np.float64))


SCALER_FORMAT = "mvtsgan-scaler"
SCALER_VERSION = 1


def save_scaler(params: np.ndarray, channels: tuple[str, ...], path: str | Path) -> None:
    """Persist train-fit (min, max) pairs so later stages share one space."""
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (len(channels), 2):
        raise ScalingError(
            f"scaler params shape {params.shape} does not match {len(channels)} channels"
        )
    doc = {
        "format": SCALER_FORMAT,
        "version": SCALER_VERSION,
        "channels": list(channels),
        "params": params.tolist(),
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_scaler(path: str | Path) -> tuple[np.ndarray, tuple[str, ...]]:
    path = Path(path)
    if not path.is_file():
        raise ScalingError(f"scaler file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScalingError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("format") != SCALER_FORMAT or doc.get("version") != SCALER_VERSION:
        raise ScalingError(f"{path}: not a v{SCALER_VERSION} {SCALER_FORMAT} file")
    channels = tuple(doc["channels"])
    params = np.asarray(doc["params"], dtype=np.float64)
    if params.shape != (len(channels), 2):
        raise ScalingError(f"{path}: params shape {params.shape} inconsistent with channels")
    return params, channels


def extract_feature(sample: MvtsSample, kind: FeatureKind) -> np.ndarray:
    """Per-channel statistic over the T timesteps, as a length-P vector.

    The median of an even-length window averages the two middle order
    statistics; the standard deviation uses the population (1/T) form, since
    the statistic describes the fixed window rather than estimating a
    population parameter.
    """
    if kind is FeatureKind.MEAN:
        return sample.values.mean(axis=0)
    if kind is FeatureKind.MEDIAN:
        return np.median(sample.values, axis=0)
    if kind is FeatureKind.STDDEV:
        return sample.values.std(axis=0)
    raise DataError(f"unknown feature kind: {kind!r}")


# ---------------------------------------------------------------------------
# Toy ground truth
# ---------------------------------------------------------------------------

# Class-conditional order-1 autoregressive generator used by tests and demos.
# Channel j of a no-flare sample meanders around level 1 + j with innovation
# scale TOY_NEG_SIGMA and no drift; a flare sample sits TOY_POS_LEVEL_SHIFT
# higher (plus a small per-channel increment), is noisier, and ramps upward
# by TOY_POS_DRIFT over the window.  The level gap is wide relative to the
# sampling error of a per-sample mean, so class means are statistically
# separated at modest sample counts.
TOY_AR_COEFF = 0.7
TOY_LEVEL_JITTER = 0.25
TOY_NEG_SIGMA = 0.2
TOY_POS_SIGMA = 0.35
TOY_POS_LEVEL_SHIFT = 1.5
TOY_POS_LEVEL_STEP = 0.25
TOY_POS_DRIFT = 0.8


def _toy_sample(
    rng: np.random.Generator,
    label: ClassLabel,
    n_timesteps: int,
    n_channels: int,
    pos_level_shift: float,
    pos_sigma: float,
    neg_sigma: float,
    pos_drift: float,
) -> np.ndarray:
    positive = label is ClassLabel.FLARE
    j = np.arange(n_channels, dtype=np.float64)
    level = 1.0 + j
    if positive:
        level = level + pos_level_shift + TOY_POS_LEVEL_STEP * j
    level = level + rng.normal(0.0, TOY_LEVEL_JITTER, size=n_channels)
    sigma = pos_sigma if positive else neg_sigma
    drift = pos_drift if positive else 0.0

    values = np.empty((n_timesteps, n_channels))
    x = level + sigma * rng.standard_normal(n_channels)
    values[0] = x
    for t in range(1, n_timesteps):
        x = level + TOY_AR_COEFF * (x - level) + sigma * rng.standard_normal(n_channels)
        values[t] = x
    ramp = drift * (np.arange(n_timesteps) / max(n_timesteps - 1, 1))
    return values + ramp[:, None]


def make_toy_dataset(
    seed: int,
    n_pos: int,
    n_neg: int,
    n_timesteps: int = DEFAULT_TIMESTEPS,
    n_channels: int = len(DEFAULT_CHANNELS),
    partition_id: int = 0,
    pos_level_shift: float = TOY_POS_LEVEL_SHIFT,
    pos_sigma: float = TOY_POS_SIGMA,
    neg_sigma: float = TOY_NEG_SIGMA,
    pos_drift: float = TOY_POS_DRIFT,
) -> Dataset:
    """Deterministic class-conditional AR(1) dataset for desk-scale runs.

    The separation knobs (``pos_level_shift`` and the noise scales) default
    to a cleanly separated scenario; shrinking the shift or raising the
    noise produces overlapping classes for harder classification setups.
    """
    if n_pos < 0 or n_neg < 0:
        raise DataError("sample counts must be non-negative")
    rng = np.random.default_rng(seed)
    channels = tuple(f"ch{j}" for j in range(n_channels))
    samples: list[MvtsSample] = []
    for i in range(n_pos):
        samples.append(
            MvtsSample(
                values=_toy_sample(rng, ClassLabel.FLARE, n_timesteps, n_channels,
                                   pos_level_shift, pos_sigma, neg_sigma, pos_drift),
                label=ClassLabel.FLARE,
                id=f"toy_pos_{partition_id}_{i}",
                missing_mask=np.zeros((n_timesteps, n_channels), dtype=bool),
            )
        )
    for i in range(n_neg):
        samples.append(
            MvtsSample(
                values=_toy_sample(rng, ClassLabel.NOFLARE, n_timesteps, n_channels,
                                   pos_level_shift, pos_sigma, neg_sigma, pos_drift),
                label=ClassLabel.NOFLARE,
                id=f"toy_neg_{partition_id}_{i}",
                missing_mask=np.zeros((n_timesteps, n_channels), dtype=bool),
            )
        )
    return Dataset(samples=samples, channels=channels, partition_id=partition_id)


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------

def _sample_to_json(sample: MvtsSample) -> dict:
    entry: dict = {
        "id": sample.id,
        "label": sample.label.value,
        "values": sample.values.tolist(),
    }
    if sample.synthetic:
        entry["synthetic"] = True
    if sample.missing_mask.any():
        t_idx, p_idx = np.nonzero(sample.missing_mask)
        entry["missing"] = [[int(t), int(p)] for t, p in zip(t_idx, p_idx)]
    return entry


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the canonical single-file JSON form (schema-versioned)."""
    doc = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "partition_id": dataset.partition_id,
        "channels": list(dataset.channels),
        "scaling_params": None
        if dataset.scaling_params is None
        else dataset.scaling_params.tolist(),
        "samples": [_sample_to_json(s) for s in dataset.samples],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("format") != DATASET_FORMAT:
        raise DataError(f"{path}: unrecognized format field {doc.get('format')!r}")
    if doc.get("version") != DATASET_VERSION:
        raise DataError(f"{path}: unsupported schema version {doc.get('version')!r}")
    channels = tuple(doc["channels"])
    samples = []
    for entry in doc["samples"]:
        values = np.asarray(entry["values"], dtype=np.float64)
        missing = np.zeros(values.shape, dtype=bool)
        for t, p in entry.get("missing", []):
            missing[t, p] = True
        samples.append(
            MvtsSample(
                values=values,
                label=ClassLabel(entry["label"]),
                id=entry["id"],
                missing_mask=missing,
                synthetic=bool(entry.get("synthetic", False)),
            )
        )
    params = doc.get("scaling_params")
    return Dataset(
        samples=samples,
        channels=channels,
        partition_id=int(doc.get("partition_id", 0)),
        scaling_params=None if params is None else np.asarray(params, dtype=np.float64),
    )
