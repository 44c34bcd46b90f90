"""RBF-kernel SVM trained by sequential minimal optimization, plus the
class-imbalance experiment it supports.

The optimizer is the classic two-alpha working-set scheme: alternate full
sweeps with sweeps over non-bound multipliers, pick the partner that
maximizes the error gap, and stop when a full sweep changes nothing, i.e.
when every training point satisfies the KKT conditions within the
tolerance.  Partner scans run in fixed index order so training is
deterministic.

Classifier quality on rare-event data is reported as skill scores rather
than plain accuracy:

* true skill statistic: recall minus false-alarm rate, insensitive to the
  class ratio;
* Heidke skill score (two-class form): improvement over chance agreement.

:func:`run_experiment` compares an SVM trained on real data alone against
one trained on real data plus synthetic minority samples, holding the test
partitions fixed and strictly real.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    ClassLabel,
    Dataset,
    FeatureKind,
    MvtsSample,
    extract_feature,
    fit_scaler,
    impute_dataset,
    scale_dataset,
)

logger = logging.getLogger(__name__)

POSITIVE = ClassLabel.FLARE
FEATURIZE_MODES = ("flatten", "stats")


class ClassifyError(Exception):
    """Base for classifier and experiment failures."""


class ConvergenceError(ClassifyError):
    """The optimizer exceeded its iteration budget."""


class UndefinedScoreError(ClassifyError):
    """A skill score's denominator is zero for this confusion matrix."""


class ExperimentError(ClassifyError):
    """Experiment inputs violate the real/synthetic contract."""


@dataclass(frozen=True)
class SvmConfig:
    c: float = 0.25
    gamma: float = 0.25
    tolerance: float = 1e-3
    max_passes: int = 10_000  # safety net; convergence normally stops the loop

    def validate(self) -> None:
        if not self.c > 0:
            raise ClassifyError(f"c must be positive, got {self.c}")
        if not self.gamma > 0:
            raise ClassifyError(f"gamma must be positive, got {self.gamma}")
        if not self.tolerance > 0:
            raise ClassifyError(f"tolerance must be positive, got {self.tolerance}")


@dataclass
class SvmModel:
    """Fitted classifier state; ``alphas`` covers all training points."""

    gamma: float
    c: float
    bias: float
    support_vectors: np.ndarray   # [S x d]
    dual_coefs: np.ndarray        # [S], alpha_i * y_i
    support_indices: np.ndarray   # [S], positions in the training set
    alphas: np.ndarray            # [n], zero entries included
    n_train: int


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||a_i - b_j||^2) as an [n x m] matrix."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sq = (
        (a * a).sum(axis=1)[:, None]
        + (b * b).sum(axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def labels_to_signs(labels: list[ClassLabel]) -> np.ndarray:
    """FLARE -> +1, NOFLARE -> -1."""
    return np.array([1.0 if lab is POSITIVE else -1.0 for lab in labels])


def signs_to_labels(signs: np.ndarray) -> list[ClassLabel]:
    return [POSITIVE if s > 0 else ClassLabel.NOFLARE for s in signs]


def svm_train(x: np.ndarray, y: np.ndarray | list[ClassLabel],
              config: SvmConfig = SvmConfig()) -> SvmModel:
    """Fit the soft-margin dual by pairwise multiplier updates.

    ``y`` may be +-1 signs or class labels.  Requires both classes to be
    present.  On return every training point satisfies the KKT conditions
    within ``config.tolerance``.
    """
    config.validate()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ClassifyError(f"svm_train expects [n x d] features with n >= 2, got {x.shape}")
    if not np.isfinite(x).all():
        raise ClassifyError("svm_train: features must be finite")
    if isinstance(y, np.ndarray):
        y = np.asarray(y, dtype=np.float64)
        if not set(np.unique(y)) <= {-1.0, 1.0}:
            raise ClassifyError("numeric labels must be +-1")
    else:
        y = labels_to_signs(list(y))
    if y.shape != (x.shape[0],):
        raise ClassifyError(f"got {y.shape[0]} labels for {x.shape[0]} samples")
    if not ((y > 0).any() and (y < 0).any()):
        raise ClassifyError("svm_train needs at least one sample of each class")

    n = x.shape[0]
    c, tol = config.c, config.tolerance
    kernel = rbf_kernel(x, x, config.gamma)
    alphas = np.zeros(n)
    bias = 0.0
    # errors[i] = f(x_i) - y_i; with all alphas zero, f = bias = 0.
    errors = -y.copy()

    def take_step(i1: int, i2: int) -> bool:
        nonlocal bias, errors
        if i1 == i2:
            return False
        a1_old, a2_old = alphas[i1], alphas[i2]
        y1, y2 = y[i1], y[i2]
        e1, e2 = errors[i1], errors[i2]
        s = y1 * y2
        if s < 0:
            lo, hi = max(0.0, a2_old - a1_old), min(c, c + a2_old - a1_old)
        else:
            lo, hi = max(0.0, a1_old + a2_old - c), min(c, a1_old + a2_old)
        if lo == hi:
            return False
        k11, k12, k22 = kernel[i1, i1], kernel[i1, i2], kernel[i2, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta <= 0:
            # Zero curvature only for coincident points under this kernel;
            # a different partner will make progress, so skip.
            return False
        a2 = a2_old + y2 * (e1 - e2) / eta
        a2 = min(max(a2, lo), hi)
        if abs(a2 - a2_old) < 1e-12 * (a2 + a2_old + 1e-12):
            return False
        a1 = a1_old + s * (a2_old - a2)
        # roundoff can leave a1 an ulp off the box bounds; snap it so later
        # bound tests (support sets, complementarity) stay crisp
        snap = 1e-10 * c
        if a1 < snap:
            a1 = 0.0
        elif a1 > c - snap:
            a1 = c

        d1, d2 = y1 * (a1 - a1_old), y2 * (a2 - a2_old)
        b1 = bias - e1 - d1 * k11 - d2 * k12
        b2 = bias - e2 - d1 * k12 - d2 * k22
        if 0.0 < a1 < c:
            new_bias = b1
        elif 0.0 < a2 < c:
            new_bias = b2
        else:
            new_bias = 0.5 * (b1 + b2)

        errors += d1 * kernel[i1] + d2 * kernel[i2] + (new_bias - bias)
        alphas[i1], alphas[i2] = a1, a2
        bias = new_bias
        return True

    def examine(i2: int) -> bool:
        y2, a2, e2 = y[i2], alphas[i2], errors[i2]
        r2 = e2 * y2
        if not ((r2 < -tol and a2 < c) or (r2 > tol and a2 > 0)):
            return False
        non_bound = np.flatnonzero((alphas > 0) & (alphas < c))
        if non_bound.size > 1:
            gaps = np.abs(errors[non_bound] - e2)
            if take_step(int(non_bound[np.argmax(gaps)]), i2):
                return True
        for i1 in non_bound:
            if take_step(int(i1), i2):
                return True
        for i1 in range(n):
            if take_step(i1, i2):
                return True
        return False

    examine_all = True
    passes = 0
    while True:
        passes += 1
        if passes > config.max_passes:
            raise ConvergenceError(
                f"optimizer exceeded {config.max_passes} sweeps (n={n}, c={c})"
            )
        num_changed = 0
        indices = range(n) if examine_all else np.flatnonzero((alphas > 0) & (alphas < c))
        for i in indices:
            num_changed += examine(int(i))
        if examine_all:
            if num_changed == 0:
                break
            examine_all = False
        elif num_changed == 0:
            examine_all = True

    support = np.flatnonzero(alphas > 0)
    logger.info("svm converged after %d sweeps: %d/%d support vectors",
                passes, support.size, n)
    return SvmModel(
        gamma=config.gamma,
        c=c,
        bias=bias,
        support_vectors=x[support].copy(),
        dual_coefs=(alphas * y)[support].copy(),
        support_indices=support,
        alphas=alphas,
        n_train=n,
    )


def svm_decision(model: SvmModel, x: np.ndarray) -> np.ndarray:
    """Signed decision values f(x) = sum_i alpha_i y_i K(sv_i, x) + b."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.support_vectors.shape[1]:
        raise ClassifyError(
            f"svm_decision expects [m x {model.support_vectors.shape[1]}], got {x.shape}"
        )
    return rbf_kernel(x, model.support_vectors, model.gamma) @ model.dual_coefs + model.bias


def svm_predict(model: SvmModel, x: np.ndarray) -> np.ndarray:
    """Thresholded decision values as +-1; an exact zero goes positive."""
    return np.where(svm_decision(model, x) >= 0.0, 1.0, -1.0)


# ---------------------------------------------------------------------------
# Skill scores
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ClassifyError("confusion matrix cells must be non-negative")


def confusion(y_true: list[ClassLabel], y_pred: list[ClassLabel]) -> ConfusionMatrix:
    if len(y_true) != len(y_pred):
        raise ClassifyError(f"got {len(y_pred)} predictions for {len(y_true)} labels")
    tp = fn = fp = tn = 0
    for truth, pred in zip(y_true, y_pred):
        if truth is POSITIVE:
            if pred is POSITIVE:
                tp += 1
            else:
                fn += 1
        else:
            if pred is POSITIVE:
                fp += 1
            else:
                tn += 1
    return ConfusionMatrix(tp=tp, fn=fn, fp=fp, tn=tn)


def tss(cm: ConfusionMatrix) -> float:
    """Recall minus false-alarm rate, in [-1, 1]."""
    pos, neg = cm.tp + cm.fn, cm.fp + cm.tn
    if pos == 0 or neg == 0:
        raise UndefinedScoreError(
            f"tss undefined: positives={pos}, negatives={neg}"
        )
    return cm.tp / pos - cm.fp / neg


def hss2(cm: ConfusionMatrix) -> float:
    """Two-class Heidke skill score: agreement beyond chance, at most 1."""
    denom = (cm.tp + cm.fn) * (cm.fn + cm.tn) + (cm.fp + cm.tn) * (cm.tp + cm.fp)
    if denom == 0:
        raise UndefinedScoreError(f"hss2 undefined for {cm}")
    return 2.0 * (cm.tp * cm.tn - cm.fn * cm.fp) / denom


# ---------------------------------------------------------------------------
# Featurization
# ---------------------------------------------------------------------------

def featurize(sample: MvtsSample, mode: str = "flatten") -> np.ndarray:
    """Turn one sample into a fixed-length vector for the SVM.

    ``flatten``: the raw [T x P] values unrolled row by row (length T*P).
    ``stats``: per channel, the (mean, median, population stddev) triplet,
    channels concatenated in order (length 3*P).
    """
    if mode not in FEATURIZE_MODES:
        raise ClassifyError(f"unknown featurization {mode!r}; choose from {FEATURIZE_MODES}")
    if np.isnan(sample.values).any():
        raise ClassifyError(f"sample {sample.id!r} has missing values; impute first")
    if mode == "flatten":
        return sample.values.ravel().copy()
    triplets = [extract_feature(sample, kind) for kind in
                (FeatureKind.MEAN, FeatureKind.MEDIAN, FeatureKind.STDDEV)]
    return np.stack(triplets, axis=1).ravel()  # channel-major


def featurize_dataset(dataset: Dataset, mode: str = "flatten") -> np.ndarray:
    """Stack per-sample feature vectors into an [N x d] matrix."""
    if len(dataset) == 0:
        raise ClassifyError("featurize_dataset: dataset is empty")
    return np.stack([featurize(s, mode) for s in dataset.samples], axis=0)


def dataset_labels(dataset: Dataset) -> list[ClassLabel]:
    return [s.label for s in dataset.samples]


# ---------------------------------------------------------------------------
# Baseline vs augmented experiment
# ---------------------------------------------------------------------------

@dataclass
class PartitionScore:
    partition_id: int
    cm: ConfusionMatrix
    tss: float
    hss2: float


@dataclass
class ExperimentResult:
    """Scores of one trained arm across all test partitions."""

    arm: str  # "baseline" or "augmented"
    n_train: int
    n_support: int
    scores: list[PartitionScore]


def _merge(a: Dataset, b: Dataset) -> Dataset:
    return Dataset(samples=list(a.samples) + list(b.samples), channels=a.channels,
                   partition_id=a.partition_id, scaling_params=a.scaling_params)


def _score_arm(arm: str, train: Dataset, tests: list[Dataset],
               config: SvmConfig, mode: str) -> ExperimentResult:
    x = featurize_dataset(train, mode)
    model = svm_train(x, dataset_labels(train), config)
    scores = []
    for part in tests:
        preds = signs_to_labels(svm_predict(model, featurize_dataset(part, mode)))
        cm = confusion(dataset_labels(part), preds)
        scores.append(PartitionScore(part.partition_id, cm, tss(cm), hss2(cm)))
    return ExperimentResult(arm=arm, n_train=len(train),
                            n_support=int(model.support_indices.size), scores=scores)


def run_experiment(
    train_real: Dataset,
    synth: Dataset | None,
    tests: list[Dataset],
    config: SvmConfig = SvmConfig(),
    mode: str = "flatten",
) -> list[ExperimentResult]:
    """Score real-only training against real-plus-synthetic training.

    The baseline arm always runs; the augmented arm runs when ``synth`` is
    given and must contain only synthetic positive samples in the scaled
    space (as produced by the generator).  Test partitions are strictly
    real and never augmented.

    Real inputs may be raw or already scaled.  Raw inputs (no recorded
    ``scaling_params``) are imputed here, with the value scaler fit on the
    training partition only and applied to every test partition.  Inputs
    that carry ``scaling_params`` are trusted, but every partition must
    carry the identical parameters (one shared space).
    """
    if mode not in FEATURIZE_MODES:
        raise ExperimentError(f"unknown featurization {mode!r}; choose from {FEATURIZE_MODES}")
    if any(s.synthetic for s in train_real.samples):
        raise ExperimentError("train_real must not contain synthetic samples")
    if not tests:
        raise ExperimentError("need at least one test partition")
    for part in tests:
        if any(s.synthetic for s in part.samples):
            raise ExperimentError(
                f"test partition {part.partition_id} contains synthetic samples"
            )
        if part.channels != train_real.channels:
            raise ExperimentError(
                f"test partition {part.partition_id} channels {part.channels} "
                f"differ from training channels {train_real.channels}"
            )
    if synth is not None:
        if len(synth) == 0:
            raise ExperimentError("synthetic dataset is empty; pass None for baseline only")
        if not all(s.synthetic for s in synth.samples):
            raise ExperimentError("synth must contain only synthetic samples")
        if not all(s.label is POSITIVE for s in synth.samples):
            raise ExperimentError("synthetic augmentation must be minority-class only")
        if synth.channels != train_real.channels:
            raise ExperimentError(
                f"synth channels {synth.channels} differ from training channels "
                f"{train_real.channels}"
            )

    if train_real.scaling_params is None:
        train_imp = impute_dataset(train_real)
        params = fit_scaler(train_imp)
        train_scaled = scale_dataset(train_imp, params)
        tests_scaled = [scale_dataset(impute_dataset(p), params) for p in tests]
    else:
        for part in tests:
            if part.scaling_params is None or not np.array_equal(
                    part.scaling_params, train_real.scaling_params):
                raise ExperimentError(
                    f"test partition {part.partition_id} is not in the same scaled "
                    f"space as the training data"
                )
        train_scaled = train_real
        tests_scaled = tests

    results = [_score_arm("baseline", train_scaled, tests_scaled, config, mode)]
    if synth is not None:
        results.append(_score_arm("augmented", _merge(train_scaled, synth),
                                  tests_scaled, config, mode))
    return results


def write_experiment_files(results: list[ExperimentResult], out_dir: str | Path,
                           config: SvmConfig = SvmConfig(),
                           mode: str = "flatten") -> list[Path]:
    """Emit per-partition scores as CSV plus a JSON summary with the config."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "experiment.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm", "test_partition", "tp", "fn", "fp", "tn", "tss", "hss2"])
        for arm in results:
            for score in arm.scores:
                writer.writerow([
                    arm.arm, score.partition_id,
                    score.cm.tp, score.cm.fn, score.cm.fp, score.cm.tn,
                    repr(score.tss), repr(score.hss2),
                ])

    def arm_block(arm: ExperimentResult) -> dict:
        return {
            "n_train": arm.n_train,
            "n_support": arm.n_support,
            "mean_tss": float(np.mean([s.tss for s in arm.scores])),
            "mean_hss2": float(np.mean([s.hss2 for s in arm.scores])),
            "partitions": [
                {
                    "partition": s.partition_id,
                    "tp": s.cm.tp, "fn": s.cm.fn, "fp": s.cm.fp, "tn": s.cm.tn,
                    "tss": s.tss, "hss2": s.hss2,
                }
                for s in arm.scores
            ],
        }

    summary = {
        "config": {"c": config.c, "gamma": config.gamma,
                   "tolerance": config.tolerance, "featurization": mode},
        "arms": {arm.arm: arm_block(arm) for arm in results},
    }
    json_path = out_dir / "experiment.json"
    json_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return [csv_path, json_path]
