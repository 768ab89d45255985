import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foh.data import (Dataset, StreamBatcher, SyntheticSpec, gen_synthetic,
                      ingest, load_dataset, load_dataset_csv, save_dataset,
                      save_dataset_csv)
from foh.hashing import FormatError


def small_dataset(seed=0, n=10, d=3, c=2):
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((d, n)).astype(np.float32)
    labels = (rng.random((c, n)) < 0.5).astype(np.uint8)
    labels[0, labels.sum(axis=0) == 0] = 1
    return Dataset(features=feats, labels=labels)


# ---------------------------------------------------------------------------
# ingest


def test_ingest_two_csvs(tmp_path):
    fpath = tmp_path / "feats.csv"
    lpath = tmp_path / "labels.csv"
    fpath.write_text("0.5,1.0\n-1.0,2.0\n0.0,0.25\n")
    lpath.write_text("1,0\n0,1\n1,1\n")
    ds = ingest(fpath, lpath)
    assert (ds.n, ds.d, ds.c) == (3, 2, 2)
    assert np.allclose(ds.features[:, 0], [0.5, 1.0])
    assert np.array_equal(ds.labels[:, 2], [1, 1])


def test_ingest_sample_count_mismatch(tmp_path):
    fpath = tmp_path / "feats.csv"
    lpath = tmp_path / "labels.csv"
    fpath.write_text("\n".join("0.1,0.2" for _ in range(5)) + "\n")
    lpath.write_text("\n".join("1,0" for _ in range(4)) + "\n")
    with pytest.raises(FormatError, match="sample count mismatch"):
        ingest(fpath, lpath)


def test_ingest_rejects_non_finite(tmp_path):
    fpath = tmp_path / "feats.csv"
    lpath = tmp_path / "labels.csv"
    fpath.write_text("0.1,nan\n")
    lpath.write_text("1,0\n")
    with pytest.raises(FormatError, match="non-finite"):
        ingest(fpath, lpath)


def test_binary_roundtrip_is_bit_identical(tmp_path):
    ds = small_dataset(seed=1, n=17, d=5, c=11)
    path = tmp_path / "ds.fohd"
    save_dataset(ds, path)
    back = ingest(path)
    assert back.features.tobytes() == ds.features.tobytes()
    assert back.labels.tobytes() == ds.labels.tobytes()
    assert np.array_equal(back.ids, ds.ids)


def test_csv_roundtrip(tmp_path):
    ds = small_dataset(seed=2, n=9, d=4, c=3)
    path = tmp_path / "ds.csv"
    save_dataset_csv(ds, path)
    back = ingest(path)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)


def test_csv_malformed_header(tmp_path):
    path = tmp_path / "ds.csv"
    path.write_text("not-a-header\n0.1,0.2,1,0\n")
    with pytest.raises(FormatError, match="malformed header"):
        load_dataset_csv(path)


def test_binary_bad_magic(tmp_path):
    path = tmp_path / "ds.fohd"
    path.write_bytes(b"JUNKxxxxxxxxxxxxxxxxxxxxxxxx")
    with pytest.raises(FormatError, match="bad magic"):
        load_dataset(path)


def test_label_packing_survives_odd_category_counts(tmp_path):
    for c in (1, 7, 8, 9, 17):
        ds = small_dataset(seed=c, n=5, c=c)
        path = tmp_path / f"ds{c}.fohd"
        save_dataset(ds, path)
        assert np.array_equal(ingest(path).labels, ds.labels)


# ---------------------------------------------------------------------------
# synthetic generation


def test_synthetic_deterministic():
    spec = SyntheticSpec(n_clusters=3, dim=6, n=40, labels_per_sample=(1, 2),
                         cluster_std=0.5, seed=7)
    a, b = gen_synthetic(spec), gen_synthetic(spec)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_synthetic_single_label_mode():
    ds = gen_synthetic(SyntheticSpec(n_clusters=2, dim=4, n=30,
                                     labels_per_sample=(1, 1), seed=0))
    assert np.all(ds.labels.sum(axis=0) == 1)


def test_synthetic_label_bound_validation():
    with pytest.raises(ValueError, match="exceeds category count"):
        SyntheticSpec(n_clusters=3, dim=4, n=10, labels_per_sample=(1, 4))


def test_synthetic_blobs_recoverable_by_nearest_centroid():
    spec = SyntheticSpec(n_clusters=4, dim=8, n=400, labels_per_sample=(1, 2),
                         cluster_std=0.1, seed=3)
    ds = gen_synthetic(spec)
    # brute-force nearest-centroid oracle over empirical primary-label means
    # (primary label = the blob; extra labels never displace it at std=0.1)
    rng = np.random.default_rng(3)
    centroids = rng.standard_normal((8, 4))
    d2 = ((ds.features.astype(np.float64)[:, :, None]
           - centroids[:, None, :]) ** 2).sum(axis=0)
    nearest = d2.argmin(axis=1)
    has_primary = ds.labels[nearest, np.arange(ds.n)]
    assert has_primary.mean() >= 0.99


# ---------------------------------------------------------------------------
# stream batching


def test_batcher_even_split():
    # 20,000 samples at 2,000 -> 10 equal blocks
    ds = Dataset(features=np.zeros((1, 20000), dtype=np.float32),
                 labels=np.ones((1, 20000), dtype=np.uint8))
    b = StreamBatcher(ds, batch_size=2000, seed=0)
    sizes = [batch.features.shape[1] for batch in b]
    assert sizes == [2000] * 10


def test_batcher_remainder_joins_final_batch():
    # 18,015 samples at 2,000 -> 9 batches, the ninth holding 2,015
    ds = Dataset(features=np.zeros((1, 18015), dtype=np.float32),
                 labels=np.ones((1, 18015), dtype=np.uint8))
    b = StreamBatcher(ds, batch_size=2000, seed=0)
    sizes = [batch.features.shape[1] for batch in b]
    assert sizes == [2000] * 8 + [2015]


def test_batcher_end_of_stream_and_counts():
    ds = small_dataset(seed=5, n=10)
    b = StreamBatcher(ds, batch_size=4, seed=1)
    stages = []
    while (batch := b.next_batch()) is not None:
        stages.append(batch.stage)
    assert stages == [1, 2]
    assert b.next_batch() is None
    assert b.samples_seen == ds.n


@given(st.integers(1, 60), st.integers(1, 25), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_batches_partition_training_set(n, batch_size, seed):
    ds = small_dataset(seed=seed % 1000, n=n)
    b = StreamBatcher(ds, batch_size=batch_size, seed=seed)
    ids = np.concatenate([batch.ids for batch in b])
    assert sorted(ids.tolist()) == list(range(n))  # no loss, no duplication
    feats = np.concatenate(
        [batch.features for batch in StreamBatcher(ds, batch_size, seed=seed)],
        axis=1)
    assert np.array_equal(feats, ds.features[:, ids])  # the permuted training set


def test_batcher_permutation_is_seeded():
    ds = small_dataset(seed=6, n=30)
    ids1 = np.concatenate([b.ids for b in StreamBatcher(ds, 7, seed=42)])
    ids2 = np.concatenate([b.ids for b in StreamBatcher(ds, 7, seed=42)])
    ids3 = np.concatenate([b.ids for b in StreamBatcher(ds, 7, seed=43)])
    assert np.array_equal(ids1, ids2)
    assert not np.array_equal(ids1, ids3)
