import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvtsgan.data import (
    ClassLabel,
    DataError,
    Dataset,
    FeatureKind,
    ImputationError,
    IngestError,
    MvtsSample,
    ScalingError,
    apply_scaler,
    extract_feature,
    fit_scaler,
    impute_dataset,
    impute_linear,
    ingest_directory,
    invert_scaler,
    load_dataset,
    load_scaler,
    make_toy_dataset,
    one_hot,
    read_manifest,
    save_dataset,
    save_scaler,
    scale_dataset,
)


def sample(values, label=ClassLabel.FLARE, sid="s", missing=None, synthetic=False):
    values = np.asarray(values, dtype=np.float64)
    if missing is None:
        missing = np.zeros(values.shape, dtype=bool)
    return MvtsSample(values=values, label=label, id=sid,
                      missing_mask=np.asarray(missing, dtype=bool), synthetic=synthetic)


# ---------------------------------------------------------------------------
# Core types
# ---------------------------------------------------------------------------

def test_one_hot_layout():
    flare = one_hot(ClassLabel.FLARE, 4).one_hot
    quiet = one_hot(ClassLabel.NOFLARE, 4).one_hot
    assert flare.shape == (4, 2) and quiet.shape == (4, 2)
    assert np.array_equal(flare, np.tile([0.0, 1.0], (4, 1)))
    assert np.array_equal(quiet, np.tile([1.0, 0.0], (4, 1)))
    assert np.array_equal(flare.sum(axis=1), np.ones(4))


def test_one_hot_rejects_empty_window():
    with pytest.raises(DataError):
        one_hot(ClassLabel.FLARE, 0)


def test_sample_validation():
    with pytest.raises(DataError):
        sample(np.zeros(5))  # 1-D
    with pytest.raises(DataError):
        sample(np.zeros((1, 3)))  # T < 2
    with pytest.raises(DataError):
        sample(np.zeros((3, 0)))  # P < 1
    with pytest.raises(DataError):
        MvtsSample(values=np.zeros((3, 2)), label=ClassLabel.FLARE, id="s",
                   missing_mask=np.zeros((2, 2), dtype=bool))


def test_dataset_counts_and_helpers():
    ds = Dataset(
        samples=[sample(np.zeros((3, 2)), ClassLabel.FLARE, "a"),
                 sample(np.zeros((3, 2)), ClassLabel.NOFLARE, "b"),
                 sample(np.zeros((3, 2)), ClassLabel.NOFLARE, "c")],
        channels=("x", "y"),
    )
    assert len(ds) == 3
    assert ds.class_counts() == {ClassLabel.NOFLARE: 2, ClassLabel.FLARE: 1}
    assert ds.imbalance_ratio() == 2.0
    assert [s.id for s in ds.positives()] == ["a"]
    assert [s.id for s in ds.negatives()] == ["b", "c"]


def test_dataset_channel_mismatch():
    with pytest.raises(DataError):
        Dataset(samples=[sample(np.zeros((3, 2)))], channels=("only",))


def test_dataset_scaling_params_shape():
    with pytest.raises(DataError):
        Dataset(samples=[], channels=("x", "y"), scaling_params=np.zeros((3, 2)))


# ---------------------------------------------------------------------------
# Manifest and ingestion
# ---------------------------------------------------------------------------

def test_read_manifest(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("# comment\na.txt,FLARE\n\nb.txt , noflare \n", encoding="utf-8")
    mapping = read_manifest(path)
    assert mapping == {"a.txt": ClassLabel.FLARE, "b.txt": ClassLabel.NOFLARE}


@pytest.mark.parametrize("body", [
    "a.txt,MAYBE\n",          # unknown label
    "a.txt,FLARE\na.txt,NOFLARE\n",  # duplicate id
    "a.txt\n",                # wrong column count
    "\n# nothing\n",          # no entries
])
def test_read_manifest_rejects(tmp_path, body):
    path = tmp_path / "labels.csv"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(IngestError):
        read_manifest(path)


def test_read_manifest_missing_file(tmp_path):
    with pytest.raises(IngestError):
        read_manifest(tmp_path / "absent.csv")


def write_sample_file(path, rows, header=("A", "B"), delimiter="\t"):
    lines = [delimiter.join(header)]
    lines += [delimiter.join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_ingest_directory(tmp_path):
    write_sample_file(tmp_path / "one", [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    write_sample_file(tmp_path / "two", [[1.0, "bad"], [3.0, 4.0], [5.0, 6.0]])
    manifest = {"one": ClassLabel.FLARE, "two": ClassLabel.NOFLARE}
    ds = ingest_directory(tmp_path, manifest, channels=("A", "B"))
    assert len(ds) == 2 and ds.channels == ("A", "B")
    one = next(s for s in ds.samples if s.id == "one")
    assert np.array_equal(one.values, [[1, 2], [3, 4], [5, 6]])
    assert not one.missing_mask.any()
    two = next(s for s in ds.samples if s.id == "two")
    assert two.missing_mask[0, 1] and two.missing_mask.sum() == 1


def test_ingest_extracts_named_columns(tmp_path):
    # extra columns are fine; requested ones are found by header name
    write_sample_file(tmp_path / "one", [[9, 1, 2], [9, 3, 4], [9, 5, 6]],
                      header=("JUNK", "A", "B"))
    ds = ingest_directory(tmp_path, {"one": ClassLabel.FLARE}, channels=("B", "A"))
    assert np.array_equal(ds.samples[0].values, [[2, 1], [4, 3], [6, 5]])


def test_ingest_rejects_sparse_channel(tmp_path, caplog):
    # channel B has a single observed value: the sample is dropped, not fatal
    write_sample_file(tmp_path / "bad", [[1.0, "x"], [2.0, "x"], [3.0, 4.0]])
    write_sample_file(tmp_path / "good", [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    manifest = {"bad": ClassLabel.FLARE, "good": ClassLabel.FLARE}
    with caplog.at_level("WARNING"):
        ds = ingest_directory(tmp_path, manifest, channels=("A", "B"))
    assert [s.id for s in ds.samples] == ["good"]
    assert any("rejecting" in r.message for r in caplog.records)


def test_ingest_missing_listed_file(tmp_path):
    with pytest.raises(IngestError):
        ingest_directory(tmp_path, {"ghost": ClassLabel.FLARE}, channels=("A",))


def test_ingest_missing_channel_header(tmp_path):
    write_sample_file(tmp_path / "one", [[1.0], [2.0], [3.0]], header=("A",))
    with pytest.raises(IngestError):
        ingest_directory(tmp_path, {"one": ClassLabel.FLARE}, channels=("A", "B"))


# ---------------------------------------------------------------------------
# Imputation
# ---------------------------------------------------------------------------

def test_impute_interior_gap():
    s = sample([[1.0], [0.0], [3.0]], missing=[[False], [True], [False]])
    out = impute_linear(s)
    assert out.values[1, 0] == 2.0  # midpoint of the bracketing values
    assert not out.missing_mask.any()


def test_impute_edge_gaps_extend():
    s = sample([[0.0], [2.0], [4.0], [0.0]],
               missing=[[True], [False], [False], [True]])
    out = impute_linear(s)
    assert np.array_equal(out.values[:, 0], [2.0, 2.0, 4.0, 4.0])


def test_impute_long_gap_is_linear():
    s = sample([[0.0], [0.0], [0.0], [9.0]],
               missing=[[False], [True], [True], [False]])
    out = impute_linear(s)
    np.testing.assert_allclose(out.values[:, 0], [0.0, 3.0, 6.0, 9.0])


def test_impute_requires_two_observations():
    s = sample([[1.0], [0.0], [0.0]], missing=[[False], [True], [True]])
    with pytest.raises(ImputationError):
        impute_linear(s)


def test_impute_no_gaps_copies():
    s = sample([[1.0, 2.0], [3.0, 4.0]])
    out = impute_linear(s)
    out.values[0, 0] = 99.0
    assert s.values[0, 0] == 1.0  # original untouched


def test_impute_idempotent():
    s = sample([[1.0], [0.0], [5.0]], missing=[[False], [True], [False]])
    once = impute_linear(s)
    twice = impute_linear(once)
    assert np.array_equal(once.values, twice.values)


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------

def test_scaler_maps_to_unit_interval():
    train = Dataset(
        samples=[sample([[0.0, 10.0], [4.0, 30.0]], sid="a"),
                 sample([[2.0, 20.0], [1.0, 10.0]], sid="b")],
        channels=("x", "y"),
    )
    params = fit_scaler(train)
    assert np.array_equal(params, [[0.0, 4.0], [10.0, 30.0]])
    scaled = apply_scaler(train.samples[0], params)
    np.testing.assert_allclose(scaled.values, [[-1.0, -1.0], [1.0, 1.0]])
    mid = apply_scaler(sample([[2.0, 20.0], [2.0, 20.0]]), params)
    np.testing.assert_allclose(mid.values, 0.0)


def test_scaler_clamps_out_of_range():
    params = np.array([[0.0, 1.0]])
    out = apply_scaler(sample([[5.0], [-5.0]]), params)
    assert np.array_equal(out.values[:, 0], [1.0, -1.0])


def test_scaler_degenerate_channel_maps_to_zero():
    params = np.array([[3.0, 3.0]])
    out = apply_scaler(sample([[3.0], [3.0]]), params)
    assert np.array_equal(out.values, np.zeros((2, 1)))


def test_invert_scaler_round_trip():
    params = np.array([[-2.0, 6.0], [0.0, 1.0]])
    s = sample([[0.0, 0.25], [4.0, 0.75]])
    back = invert_scaler(apply_scaler(s, params), params)
    np.testing.assert_allclose(back.values, s.values, atol=1e-12)


def test_scale_dataset_records_params():
    ds = Dataset(samples=[sample([[0.0], [2.0]])], channels=("x",))
    scaled = scale_dataset(ds, np.array([[0.0, 2.0]]))
    assert np.array_equal(scaled.scaling_params, [[0.0, 2.0]])


def test_scaler_requires_imputed_input():
    gappy = sample([[1.0], [2.0]], missing=[[True], [False]])
    with pytest.raises(ScalingError):
        fit_scaler(Dataset(samples=[gappy], channels=("x",)))
    with pytest.raises(ScalingError):
        apply_scaler(gappy, np.array([[0.0, 1.0]]))


def test_scaler_channel_count_mismatch():
    with pytest.raises(ScalingError):
        apply_scaler(sample([[1.0], [2.0]]), np.zeros((2, 2)))


def test_save_load_scaler(tmp_path):
    params = np.array([[0.5, 2.5], [-1.0, 1.0]])
    path = tmp_path / "scaler.json"
    save_scaler(params, ("x", "y"), path)
    loaded, channels = load_scaler(path)
    assert channels == ("x", "y")
    assert np.array_equal(loaded, params)


def test_save_scaler_shape_check(tmp_path):
    with pytest.raises(ScalingError):
        save_scaler(np.zeros((2, 2)), ("x",), tmp_path / "s.json")


def test_load_scaler_rejects_other_formats(tmp_path):
    path = tmp_path / "s.json"
    path.write_text('{"format": "something-else", "version": 1}', encoding="utf-8")
    with pytest.raises(ScalingError):
        load_scaler(path)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=12))
def test_scaling_property(raw):
    values = np.asarray(raw, dtype=np.float64).reshape(-1, 1)
    if values.shape[0] < 2:
        return
    ds = Dataset(samples=[sample(values)], channels=("x",))
    params = fit_scaler(ds)
    scaled = apply_scaler(ds.samples[0], params)
    assert scaled.values.min() >= -1.0 and scaled.values.max() <= 1.0
    back = invert_scaler(scaled, params)
    span = float(params[0, 1] - params[0, 0])
    if span > 0:
        np.testing.assert_allclose(back.values, values, atol=1e-9 * max(span, 1.0))


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------

def test_extract_feature_oracles():
    values = np.array([[1.0, 10.0], [2.0, 20.0], [4.0, 40.0], [5.0, 50.0]])
    s = sample(values)
    np.testing.assert_allclose(extract_feature(s, FeatureKind.MEAN), [3.0, 30.0])
    np.testing.assert_allclose(extract_feature(s, FeatureKind.MEDIAN), [3.0, 30.0])
    # population (1/T) standard deviation, checked against the direct formula
    col = values[:, 0]
    expected = np.sqrt(np.mean((col - col.mean()) ** 2))
    np.testing.assert_allclose(extract_feature(s, FeatureKind.STDDEV)[0], expected)


def test_median_even_window_averages_middles():
    s = sample([[1.0], [2.0], [3.0], [100.0]])
    assert extract_feature(s, FeatureKind.MEDIAN)[0] == 2.5


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    ds = Dataset(
        samples=[
            sample([[1.5, -2.25], [0.1, 0.2]], ClassLabel.FLARE, "a",
                   missing=[[False, True], [False, False]]),
            sample([[0.0, 0.0], [1.0, 1.0]], ClassLabel.NOFLARE, "b", synthetic=True),
        ],
        channels=("x", "y"),
        partition_id=3,
        scaling_params=np.array([[0.0, 1.0], [-2.0, 2.0]]),
    )
    path = tmp_path / "ds.json"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert loaded.channels == ("x", "y") and loaded.partition_id == 3
    assert np.array_equal(loaded.scaling_params, ds.scaling_params)
    for orig, back in zip(ds.samples, loaded.samples):
        assert back.id == orig.id and back.label is orig.label
        assert back.synthetic == orig.synthetic
        assert np.array_equal(back.values, orig.values)
        assert np.array_equal(back.missing_mask, orig.missing_mask)


def test_dataset_values_round_trip_exactly(tmp_path):
    # repr-based JSON floats reproduce the exact doubles
    rng = np.random.default_rng(0)
    ds = Dataset(samples=[sample(rng.standard_normal((5, 3)))],
                 channels=("a", "b", "c"))
    path = tmp_path / "ds.json"
    save_dataset(ds, path)
    assert np.array_equal(load_dataset(path).samples[0].values, ds.samples[0].values)


def test_load_dataset_errors(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(DataError):
        load_dataset(bad)
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"format": "other", "version": 1}), encoding="utf-8")
    with pytest.raises(DataError):
        load_dataset(wrong)


# ---------------------------------------------------------------------------
# Toy generator
# ---------------------------------------------------------------------------

def test_toy_dataset_deterministic():
    a = make_toy_dataset(seed=4, n_pos=5, n_neg=7, n_timesteps=10, n_channels=3)
    b = make_toy_dataset(seed=4, n_pos=5, n_neg=7, n_timesteps=10, n_channels=3)
    assert [s.id for s in a.samples] == [s.id for s in b.samples]
    for x, y in zip(a.samples, b.samples):
        assert np.array_equal(x.values, y.values)
    c = make_toy_dataset(seed=5, n_pos=5, n_neg=7, n_timesteps=10, n_channels=3)
    assert not np.array_equal(a.samples[0].values, c.samples[0].values)


def test_toy_dataset_composition():
    ds = make_toy_dataset(seed=0, n_pos=3, n_neg=9, n_timesteps=8, n_channels=2)
    assert ds.class_counts() == {ClassLabel.NOFLARE: 9, ClassLabel.FLARE: 3}
    assert all(s.values.shape == (8, 2) for s in ds.samples)
    assert not any(np.isnan(s.values).any() for s in ds.samples)
    with pytest.raises(DataError):
        make_toy_dataset(seed=0, n_pos=-1, n_neg=1)


def test_toy_classes_are_separated_by_default():
    ds = make_toy_dataset(seed=1, n_pos=30, n_neg=30, n_timesteps=20, n_channels=2)
    pos = np.mean([s.values.mean() for s in ds.positives()])
    neg = np.mean([s.values.mean() for s in ds.negatives()])
    assert pos > neg + 1.0


def test_impute_dataset_maps_all_samples():
    ds = Dataset(
        samples=[sample([[1.0], [0.0], [3.0]], missing=[[False], [True], [False]], sid="a")],
        channels=("x",),
    )
    out = impute_dataset(ds)
    assert out.samples[0].values[1, 0] == 2.0
    assert out.channels == ds.channels
