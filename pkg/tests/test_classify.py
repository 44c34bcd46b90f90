import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvtsgan.classify import (
    ClassifyError,
    ConfusionMatrix,
    ConvergenceError,
    ExperimentError,
    SvmConfig,
    UndefinedScoreError,
    confusion,
    dataset_labels,
    featurize,
    featurize_dataset,
    hss2,
    labels_to_signs,
    rbf_kernel,
    run_experiment,
    signs_to_labels,
    svm_decision,
    svm_predict,
    svm_train,
    tss,
    write_experiment_files,
)
from mvtsgan.data import (
    ClassLabel,
    Dataset,
    MvtsSample,
    fit_scaler,
    impute_dataset,
    make_toy_dataset,
    scale_dataset,
)


def blobs(seed=0, n=20, gap=3.0):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.standard_normal((n, 2)) + gap,
                   rng.standard_normal((n, 2)) - gap])
    y = np.concatenate([np.ones(n), -np.ones(n)])
    return x, y


def kkt_violations(model, x, y, tol):
    """Count complementarity violations at the stated tolerance."""
    margins = y * svm_decision(model, x)
    bad = 0
    for alpha, margin in zip(model.alphas, margins):
        if alpha < model.c and margin < 1.0 - tol:
            bad += 1
        elif alpha > 0.0 and margin > 1.0 + tol:
            bad += 1
    return bad


# ---------------------------------------------------------------------------
# Kernel and label plumbing
# ---------------------------------------------------------------------------

def test_rbf_kernel_against_explicit_loops():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((5, 3))
    gamma = 0.7
    got = rbf_kernel(a, b, gamma)
    for i in range(4):
        for j in range(5):
            expected = math.exp(-gamma * float(np.sum((a[i] - b[j]) ** 2)))
            assert got[i, j] == pytest.approx(expected, rel=1e-12)


def test_rbf_kernel_properties():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((6, 2))
    k = rbf_kernel(a, a, 0.25)
    np.testing.assert_allclose(np.diag(k), 1.0, rtol=1e-15)
    np.testing.assert_allclose(k, k.T, rtol=1e-12)
    assert np.all(k > 0.0) and np.all(k <= 1.0)


def test_label_sign_round_trip():
    labels = [ClassLabel.FLARE, ClassLabel.NOFLARE, ClassLabel.FLARE]
    signs = labels_to_signs(labels)
    assert np.array_equal(signs, [1.0, -1.0, 1.0])
    assert signs_to_labels(signs) == labels


def test_config_defaults_and_validation():
    cfg = SvmConfig()
    assert (cfg.c, cfg.gamma, cfg.tolerance, cfg.max_passes) == (0.25, 0.25, 1e-3, 10_000)
    for bad in (SvmConfig(c=0.0), SvmConfig(gamma=-1.0), SvmConfig(tolerance=0.0)):
        with pytest.raises(ClassifyError):
            bad.validate()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def test_svm_separates_blobs():
    x, y = blobs()
    model = svm_train(x, y, SvmConfig(c=1.0, gamma=0.5))
    assert np.array_equal(svm_predict(model, x), y)
    assert 0 < model.support_indices.size < x.shape[0]
    assert model.n_train == x.shape[0]


def test_decision_matches_kernel_sum_loops():
    x, y = blobs(seed=2)
    model = svm_train(x, y, SvmConfig(c=1.0, gamma=0.5))
    rng = np.random.default_rng(3)
    queries = rng.standard_normal((7, 2)) * 3.0
    got = svm_decision(model, queries)
    for j in range(7):
        total = model.bias
        for sv, coef in zip(model.support_vectors, model.dual_coefs):
            total += coef * math.exp(-model.gamma * float(np.sum((sv - queries[j]) ** 2)))
        assert got[j] == pytest.approx(total, abs=1e-10)


def test_kkt_conditions_hold_after_training():
    for seed, c, gamma in [(0, 0.25, 0.25), (1, 1.0, 0.5), (2, 5.0, 1.0)]:
        x, y = blobs(seed=seed, gap=1.0)  # overlapping enough to pin some at C
        config = SvmConfig(c=c, gamma=gamma)
        model = svm_train(x, y, config)
        assert kkt_violations(model, x, y, config.tolerance) == 0
        assert np.all(model.alphas >= 0.0) and np.all(model.alphas <= c + 1e-12)


def test_non_bound_support_vectors_sit_on_margin():
    x, y = blobs(seed=4, gap=1.5)
    config = SvmConfig(c=1.0, gamma=0.5)
    model = svm_train(x, y, config)
    f = svm_decision(model, x)
    interior = (model.alphas > 1e-9) & (model.alphas < config.c - 1e-9)
    assert interior.any()
    np.testing.assert_allclose((y * f)[interior], 1.0, atol=config.tolerance)


def test_svm_solves_xor():
    x = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    model = svm_train(x, y, SvmConfig(c=10.0, gamma=1.0))
    assert np.array_equal(svm_predict(model, x), y)
    assert kkt_violations(model, x, y, 1e-3) == 0


def test_svm_accepts_class_labels():
    x, y = blobs(seed=5)
    labels = signs_to_labels(y)
    model = svm_train(x, labels, SvmConfig(c=1.0, gamma=0.5))
    assert signs_to_labels(svm_predict(model, x)) == labels


def test_svm_tolerates_conflicting_duplicates():
    # coincident points with opposite labels have zero kernel curvature;
    # those pairs are skipped rather than looping forever
    x = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
    y = np.array([1.0, -1.0, 1.0, -1.0])
    model = svm_train(x, y, SvmConfig(c=0.5, gamma=1.0))
    assert np.all(model.alphas <= 0.5 + 1e-12)


def test_svm_input_validation():
    x, y = blobs(n=4)
    with pytest.raises(ClassifyError):
        svm_train(x.ravel(), y)
    with pytest.raises(ClassifyError):
        svm_train(x, y[:-1])
    with pytest.raises(ClassifyError):
        svm_train(x, np.zeros(8))  # not +-1
    with pytest.raises(ClassifyError):
        svm_train(x, np.ones(8))  # single class
    bad = x.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ClassifyError):
        svm_train(bad, y)


def test_svm_convergence_guard():
    x, y = blobs(seed=6, gap=0.5)
    with pytest.raises(ConvergenceError):
        svm_train(x, y, SvmConfig(max_passes=1))


def test_svm_decision_shape_check():
    x, y = blobs(n=4)
    model = svm_train(x, y, SvmConfig(c=1.0, gamma=0.5))
    with pytest.raises(ClassifyError):
        svm_decision(model, np.zeros((3, 5)))


# ---------------------------------------------------------------------------
# Skill scores
# ---------------------------------------------------------------------------

def test_confusion_mapping():
    truth = [ClassLabel.FLARE, ClassLabel.FLARE, ClassLabel.NOFLARE, ClassLabel.NOFLARE]
    pred = [ClassLabel.FLARE, ClassLabel.NOFLARE, ClassLabel.FLARE, ClassLabel.NOFLARE]
    cm = confusion(truth, pred)
    assert (cm.tp, cm.fn, cm.fp, cm.tn) == (1, 1, 1, 1)
    with pytest.raises(ClassifyError):
        confusion(truth, pred[:-1])
    with pytest.raises(ClassifyError):
        ConfusionMatrix(tp=-1, fn=0, fp=0, tn=0)


def test_skill_scores_frozen_oracle():
    cm = ConfusionMatrix(tp=10, fn=5, fp=20, tn=65)
    # tss = 10/15 - 20/85; hss2 = 2*(10*65 - 5*20) / (15*70 + 85*30)
    assert tss(cm) == pytest.approx(10 / 15 - 20 / 85, rel=1e-15)
    assert tss(cm) == pytest.approx(0.43137254901960786, rel=1e-12)
    assert hss2(cm) == pytest.approx(1100 / 3600, rel=1e-15)
    assert hss2(cm) == pytest.approx(0.3055555555555556, rel=1e-12)


def test_skill_scores_exact_edge_values():
    perfect = ConfusionMatrix(tp=9, fn=0, fp=0, tn=4)
    assert tss(perfect) == 1.0 and hss2(perfect) == 1.0
    silent = ConfusionMatrix(tp=0, fn=9, fp=0, tn=4)  # never says positive
    assert tss(silent) == 0.0 and hss2(silent) == 0.0
    inverted = ConfusionMatrix(tp=0, fn=9, fp=4, tn=0)
    assert tss(inverted) == -1.0


def test_skill_scores_undefined_cases():
    with pytest.raises(UndefinedScoreError):
        tss(ConfusionMatrix(tp=0, fn=0, fp=2, tn=3))  # no positives
    with pytest.raises(UndefinedScoreError):
        tss(ConfusionMatrix(tp=2, fn=3, fp=0, tn=0))  # no negatives
    with pytest.raises(UndefinedScoreError):
        hss2(ConfusionMatrix(tp=0, fn=0, fp=0, tn=0))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 50), st.integers(0, 50), st.integers(0, 50), st.integers(1, 50),
       st.integers(1, 20), st.integers(1, 20))
def test_tss_invariant_under_per_class_scaling(tp, fn, fp, tn, k_pos, k_neg):
    base = tss(ConfusionMatrix(tp=tp, fn=fn, fp=fp, tn=tn))
    scaled = tss(ConfusionMatrix(tp=tp * k_pos, fn=fn * k_pos,
                                 fp=fp * k_neg, tn=tn * k_neg))
    assert scaled == pytest.approx(base, abs=1e-12)


# ---------------------------------------------------------------------------
# Featurization
# ---------------------------------------------------------------------------

def make_sample(values, label=ClassLabel.FLARE, sid="s"):
    values = np.asarray(values, dtype=np.float64)
    return MvtsSample(values=values, label=label, id=sid,
                      missing_mask=np.zeros(values.shape, dtype=bool))


def test_featurize_flatten_layout():
    s = make_sample([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(featurize(s, "flatten"), [1, 2, 3, 4, 5, 6])


def test_featurize_stats_layout():
    values = np.array([[1.0, 10.0], [2.0, 20.0], [3.0, 30.0], [6.0, 60.0]])
    s = make_sample(values)
    out = featurize(s, "stats")
    assert out.shape == (6,)
    for j in range(2):
        col = values[:, j]
        np.testing.assert_allclose(out[3 * j:3 * j + 3],
                                   [col.mean(), np.median(col), col.std()])


def test_featurize_errors():
    s = make_sample([[1.0], [2.0]])
    with pytest.raises(ClassifyError):
        featurize(s, "wavelets")
    gappy = make_sample([[np.nan], [2.0]])
    with pytest.raises(ClassifyError):
        featurize(gappy)


def test_featurize_dataset():
    ds = make_toy_dataset(seed=0, n_pos=3, n_neg=2, n_timesteps=4, n_channels=2)
    assert featurize_dataset(ds, "flatten").shape == (5, 8)
    assert featurize_dataset(ds, "stats").shape == (5, 6)
    assert dataset_labels(ds) == [s.label for s in ds.samples]
    with pytest.raises(ClassifyError):
        featurize_dataset(Dataset(samples=[], channels=("a",)))


# ---------------------------------------------------------------------------
# Baseline vs augmented experiment
# ---------------------------------------------------------------------------

CONFIG = SvmConfig(c=1.0, gamma=0.5)


def toy_partitions():
    train = make_toy_dataset(seed=1, n_pos=6, n_neg=18, n_timesteps=6, n_channels=2)
    tests = [make_toy_dataset(seed=s, n_pos=6, n_neg=12, n_timesteps=6, n_channels=2,
                              partition_id=pid)
             for pid, s in ((1, 2), (2, 3))]
    return train, tests


def fake_synth(train, n=12):
    """Scaled minority-class samples marked synthetic, shaped like real ones."""
    imp = impute_dataset(train)
    params = fit_scaler(imp)
    scaled = scale_dataset(imp, params)
    positives = [s for s in scaled.samples if s.label is ClassLabel.FLARE]
    samples = [
        replace(positives[i % len(positives)], id=f"synth_{i}", synthetic=True)
        for i in range(n)
    ]
    return Dataset(samples=samples, channels=train.channels)


def test_baseline_only_run():
    train, tests = toy_partitions()
    results = run_experiment(train, None, tests, CONFIG)
    assert [r.arm for r in results] == ["baseline"]
    base = results[0]
    assert base.n_train == 24 and base.n_support > 0
    assert [s.partition_id for s in base.scores] == [1, 2]
    for score in base.scores:
        total = score.cm.tp + score.cm.fn + score.cm.fp + score.cm.tn
        assert total == 18
        assert -1.0 <= score.tss <= 1.0 and score.hss2 <= 1.0


def test_augmented_run_includes_both_arms():
    train, tests = toy_partitions()
    results = run_experiment(train, fake_synth(train), tests, CONFIG)
    assert [r.arm for r in results] == ["baseline", "augmented"]
    assert results[1].n_train == results[0].n_train + 12


def test_prescaled_inputs_reproduce_raw_results():
    train, tests = toy_partitions()
    raw = run_experiment(train, None, tests, CONFIG)

    imp = impute_dataset(train)
    params = fit_scaler(imp)
    train_scaled = scale_dataset(imp, params)
    tests_scaled = [scale_dataset(impute_dataset(t), params) for t in tests]
    pre = run_experiment(train_scaled, None, tests_scaled, CONFIG)

    for a, b in zip(raw[0].scores, pre[0].scores):
        assert a.cm == b.cm
        assert a.tss == b.tss and a.hss2 == b.hss2


def test_experiment_rejects_contaminated_inputs():
    train, tests = toy_partitions()
    synth = fake_synth(train)

    polluted = Dataset(samples=[replace(train.samples[0], synthetic=True)]
                       + train.samples[1:], channels=train.channels)
    with pytest.raises(ExperimentError, match="train_real"):
        run_experiment(polluted, None, tests, CONFIG)

    bad_test = Dataset(samples=[replace(tests[0].samples[0], synthetic=True)]
                       + tests[0].samples[1:], channels=tests[0].channels,
                       partition_id=1)
    with pytest.raises(ExperimentError, match="synthetic"):
        run_experiment(train, None, [bad_test], CONFIG)

    with pytest.raises(ExperimentError, match="test partition"):
        run_experiment(train, None, [], CONFIG)

    with pytest.raises(ExperimentError, match="empty"):
        run_experiment(train, Dataset(samples=[], channels=train.channels), tests, CONFIG)

    not_marked = Dataset(samples=[replace(s, synthetic=False) for s in synth.samples],
                         channels=synth.channels)
    with pytest.raises(ExperimentError, match="only synthetic"):
        run_experiment(train, not_marked, tests, CONFIG)

    wrong_class = Dataset(
        samples=[replace(s, label=ClassLabel.NOFLARE) for s in synth.samples],
        channels=synth.channels)
    with pytest.raises(ExperimentError, match="minority"):
        run_experiment(train, wrong_class, tests, CONFIG)

    with pytest.raises(ExperimentError, match="featurization"):
        run_experiment(train, None, tests, CONFIG, mode="pca")


def test_experiment_rejects_mismatched_scaling():
    train, tests = toy_partitions()
    imp = impute_dataset(train)
    params = fit_scaler(imp)
    train_scaled = scale_dataset(imp, params)

    unscaled_test = impute_dataset(tests[0])
    with pytest.raises(ExperimentError, match="scaled"):
        run_experiment(train_scaled, None, [unscaled_test], CONFIG)

    other = scale_dataset(impute_dataset(tests[0]), params * 2.0 + 1.0)
    with pytest.raises(ExperimentError, match="scaled"):
        run_experiment(train_scaled, None, [other], CONFIG)


def test_stats_mode_runs_end_to_end():
    train, tests = toy_partitions()
    results = run_experiment(train, fake_synth(train), tests, CONFIG, mode="stats")
    assert len(results) == 2
    assert all(len(r.scores) == 2 for r in results)


def test_write_experiment_files(tmp_path):
    train, tests = toy_partitions()
    results = run_experiment(train, fake_synth(train), tests, CONFIG)
    csv_path, json_path = write_experiment_files(results, tmp_path, CONFIG, "flatten")

    lines = csv_path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "arm,test_partition,tp,fn,fp,tn,tss,hss2"
    assert len(lines) == 1 + 4  # 2 arms x 2 partitions
    first = lines[1].split(",")
    score = results[0].scores[0]
    assert first[0] == "baseline" and int(first[1]) == 1
    assert [int(v) for v in first[2:6]] == [score.cm.tp, score.cm.fn,
                                            score.cm.fp, score.cm.tn]
    assert float(first[6]) == score.tss and float(first[7]) == score.hss2

    summary = json.loads(json_path.read_text(encoding="utf-8"))
    assert summary["config"] == {"c": 1.0, "gamma": 0.5, "tolerance": 1e-3,
                                 "featurization": "flatten"}
    assert set(summary["arms"]) == {"baseline", "augmented"}
    base = summary["arms"]["baseline"]
    assert base["mean_tss"] == pytest.approx(
        np.mean([s.tss for s in results[0].scores]))
    assert len(base["partitions"]) == 2
