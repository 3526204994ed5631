import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuels.data import (
    TrafficSeries,
    augment_temporal_shift,
    denormalize,
    fit_norm,
    generate_synthetic,
    ingest_csv,
    iter_batches,
    make_windows,
    normalize,
    num_batches,
    prepare_client,
    write_csv,
)
from fuels.errors import ConstantSeriesError, EmptyDatasetError, ParseError, SchemaError


def one_based(K):
    # v[k] = k so every window entry names its own time index
    return np.arange(1, K + 1, dtype=float)


def test_window_contents_at_k100():
    w = make_windows(one_based(200), c=3, q=3, p=24)
    s = next(s for s in w if s.y == 100)
    assert s.cv == (97.0, 98.0, 99.0)
    assert s.pv == (28.0, 52.0, 76.0)


def test_constant_series_windows():
    w = make_windows(np.full(100, 5.0))
    assert all(s.cv == (5, 5, 5) and s.pv == (5, 5, 5) and s.y == 5 for s in w)


def test_minimal_length_gives_one_sample():
    w = make_windows(one_based(73))
    assert len(w) == 1 and w[0].y == 73


def test_too_short_series():
    with pytest.raises(EmptyDatasetError):
        make_windows(one_based(72))


def test_shift_zero_is_identity():
    raw, aug = augment_temporal_shift(make_windows(one_based(120)), 0)
    assert np.array_equal(raw.cv, aug.cv) and np.array_equal(raw.pv, aug.pv) and np.array_equal(raw.y, aug.y)


def test_shift_one_window():
    raw, aug = augment_temporal_shift(make_windows(one_based(200)), 1)
    j = int(np.flatnonzero(raw.y == 100)[0])
    assert tuple(aug.cv[j]) == (96.0, 97.0, 98.0)
    assert tuple(aug.pv[j]) == (27.0, 51.0, 75.0)
    assert aug.y[j] == 100
    assert len(raw) == len(aug)


def test_synthetic_single_cluster_noise_free_differs_only_by_offset():
    series = generate_synthetic(4, 1, 200, seed=3, noise=0.0)
    for s in series[1:]:
        diff = s.values - series[0].values
        np.testing.assert_allclose(diff, diff[0], atol=1e-12)


def test_synthetic_is_deterministic():
    a = generate_synthetic(6, 2, 300, seed=11)
    b = generate_synthetic(6, 2, 300, seed=11)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
    c = generate_synthetic(6, 2, 300, seed=12)
    assert not np.array_equal(a[0].values, c[0].values)


def test_synthetic_clusters_round_robin():
    assert [s.cluster for s in generate_synthetic(5, 2, 100)] == [0, 1, 0, 1, 0]


def test_two_point_zscore():
    # alternating 0, 2 keeps the training-split mean at 1 and std at 1
    series, stats = normalize([TrafficSeries(0, [0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0])])
    np.testing.assert_allclose(series[0].values[:2], [-1.0, 1.0], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_normalize_round_trip(seed):
    rng = np.random.default_rng(seed)
    raw = [TrafficSeries(i, rng.normal(rng.uniform(-50, 50), rng.uniform(0.1, 20), 40)) for i in range(3)]
    norm, stats = normalize(raw)
    back = denormalize(norm, stats)
    for a, b in zip(raw, back):
        assert np.max(np.abs(a.values - b.values)) < 1e-12
    for s in norm:
        head = s.values[:32]
        assert abs(head.mean()) < 1e-9 and abs(head.std() - 1.0) < 1e-9


def test_constant_training_split_rejected():
    with pytest.raises(ConstantSeriesError):
        fit_norm(np.ones(10))


def test_prepare_client_split_is_chronological():
    s = generate_synthetic(1, 1, 400, seed=0)[0]
    d = prepare_client(s)
    assert d.train.index.max() < 320 <= d.test.index.min()
    assert len(d.train) == len(d.train_aug)
    np.testing.assert_array_equal(d.train.y, d.train_aug.y)


def test_batches_drop_partial_and_keep_order():
    w = make_windows(one_based(200))
    batches = list(iter_batches(w, 24))
    assert len(batches) == num_batches(w, 24) == len(w) // 24
    np.testing.assert_array_equal(batches[1].y, w.y[24:48])


def test_csv_two_clients(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("client_id,timestamp,value\n0,2,1.5\n0,0,0.5\n0,1,1.0\n1,0,3\n1,1,4\n1,2,5\n")
    series = ingest_csv(path)
    assert [len(s) for s in series] == [3, 3]
    assert series[0].values.tolist() == [0.5, 1.0, 1.5]


def test_csv_iso_timestamps(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(
        "client_id,timestamp,value\n7,2024-01-01T00:00:00,1\n7,2024-01-01T01:00:00,2\n7,2024-01-01T02:00:00,3\n"
    )
    assert ingest_csv(path)[0].values.tolist() == [1.0, 2.0, 3.0]


def test_csv_missing_value_names_line(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("client_id,timestamp,value\n0,0,1\n0,1,\n")
    with pytest.raises(ParseError) as exc:
        ingest_csv(path)
    assert exc.value.line == 3


@pytest.mark.parametrize(
    "body",
    ["0,0,1\n0,0,2\n", "0,0,1\n0,1,2\n0,3,3\n"],
    ids=["duplicate", "gap"],
)
def test_csv_schema_errors(tmp_path, body):
    path = tmp_path / "d.csv"
    path.write_text("client_id,timestamp,value\n" + body)
    with pytest.raises(SchemaError):
        ingest_csv(path)


def test_csv_bad_header(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("id,t,v\n0,0,1\n")
    with pytest.raises(SchemaError):
        ingest_csv(path)


def test_csv_round_trip(tmp_path):
    series = generate_synthetic(3, 2, 50, seed=5)
    write_csv(series, tmp_path / "s.csv")
    back = ingest_csv(tmp_path / "s.csv")
    for a, b in zip(series, back):
        assert np.array_equal(a.values, b.values)
