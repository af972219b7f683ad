import gzip
import struct

import numpy as np
import pytest
from scipy import stats

from fpd import data
from fpd.data import LabeledDataset, PartitionSpec
from fpd.errors import ConfigError, FormatError


def test_synthetic_balanced_and_deterministic():
    ds = data.generate_synthetic(100, 2, 2, seed=7)
    assert len(ds) == 100
    counts = ds.label_histogram()
    assert abs(counts[0] - counts[1]) <= 10
    again = data.generate_synthetic(100, 2, 2, seed=7)
    assert again.features.tobytes() == ds.features.tobytes()
    assert again.labels.tobytes() == ds.labels.tobytes()


def test_synthetic_no_empty_class():
    ds = data.generate_synthetic(10, 10, 2, seed=0)
    assert np.all(ds.label_histogram() == 1)


def test_synthetic_center_spacing():
    centers = data._class_centers(10, 20)
    d = np.linalg.norm(centers[:, None] - centers[None], axis=2)
    off = d[~np.eye(10, dtype=bool)]
    np.testing.assert_allclose(off, 6.0)
    small = data._class_centers(10, 2)
    d = np.linalg.norm(small[:, None] - small[None], axis=2)
    assert d[~np.eye(10, dtype=bool)].min() >= 6.0 - 1e-12


def test_dataset_validates_labels():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 2)), [0, 3], 3)
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3, 2)), [0, 1], 3)


@pytest.fixture
def idx_pair(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(12, 4, 3), dtype=np.uint8)
    labels = np.arange(12) % 10
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    data.write_idx(ip, lp, images, labels)
    return ip, lp, images, labels


def test_idx_roundtrip(idx_pair):
    ip, lp, images, labels = idx_pair
    ds = data.load_idx(ip, lp)
    assert len(ds) == 12 and ds.n_labels == 10 and ds.dim == 12
    np.testing.assert_allclose(ds.features, images.reshape(12, -1) / 255.0)
    assert ds.features.min() >= 0 and ds.features.max() <= 1
    np.testing.assert_array_equal(ds.labels, labels)


def test_idx_header_is_big_endian(idx_pair):
    ip, lp, _, _ = idx_pair
    assert ip.read_bytes()[:4] == b"\x00\x00\x08\x03"
    assert lp.read_bytes()[:4] == b"\x00\x00\x08\x01"
    assert struct.unpack(">I", ip.read_bytes()[4:8])[0] == 12


def test_idx_gzip(idx_pair, tmp_path):
    ip, lp, _, labels = idx_pair
    gi, gl = tmp_path / "i.gz", tmp_path / "l.gz"
    gi.write_bytes(gzip.compress(ip.read_bytes()))
    gl.write_bytes(gzip.compress(lp.read_bytes()))
    np.testing.assert_array_equal(data.load_idx(gi, gl).labels, labels)


def test_idx_truncated(idx_pair):
    ip, lp, _, _ = idx_pair
    ip.write_bytes(ip.read_bytes()[:-5])
    with pytest.raises(FormatError):
        data.load_idx(ip, lp)


def test_idx_bad_magic(idx_pair):
    ip, lp, _, _ = idx_pair
    raw = bytearray(ip.read_bytes())
    raw[3] = 0x01
    ip.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        data.load_idx(ip, lp)


def test_idx_length_mismatch(tmp_path):
    ip, lp = tmp_path / "i", tmp_path / "l"
    data.write_idx(ip, lp, np.zeros((3, 2, 2)), [0, 1])
    with pytest.raises(FormatError):
        data.load_idx(ip, lp)


def test_idx_empty(tmp_path):
    ip, lp = tmp_path / "i", tmp_path / "l"
    data.write_idx(ip, lp, np.zeros((0, 28, 28)), [])
    ds = data.load_idx(ip, lp)
    assert len(ds) == 0


def test_partition_rejects_bad_q():
    ds = data.generate_synthetic(100, 10, 20, 0)
    with pytest.raises(ConfigError):
        data.partition_noniid(ds, PartitionSpec(10, 0.05))
    with pytest.raises(ConfigError):
        data.partition_noniid(ds, PartitionSpec(10, 1.5))


def test_partition_full_concentration():
    ds = data.generate_synthetic(500, 10, 20, 1)
    parts = data.partition_noniid(ds, PartitionSpec(10, 1.0, seed=3))
    for k, p in enumerate(parts):
        assert len(p) > 0
        assert set(p.labels.tolist()) == {k}


def test_partition_disjoint_and_deterministic():
    ds = data.generate_synthetic(400, 4, 5, 2)
    # tag every sample with its index in the first feature
    ds.features[:, 0] = np.arange(len(ds))
    spec = PartitionSpec(8, 0.5, seed=9)
    parts = data.partition_noniid(ds, spec)
    seen = np.concatenate([p.features[:, 0] for p in parts])
    assert len(seen) == len(set(seen.tolist())) == len(ds)
    again = data.partition_noniid(ds, spec)
    for a, b in zip(parts, again):
        assert a.features.tobytes() == b.features.tobytes()


def test_partition_iid_histograms():
    L, K = 10, 20
    ds = data.generate_synthetic(20000, L, 20, 4)
    parts = data.partition_noniid(ds, PartitionSpec(K, 1 / L, seed=5))
    for p in parts:
        h = p.label_histogram()
        n = h.sum()
        sd = np.sqrt(n * (1 / L) * (1 - 1 / L))
        assert np.all(np.abs(h - n / L) <= 3 * sd + 1)


def test_partition_dominant_fraction_chi_square():
    L, K, q = 10, 20, 0.5
    ds = data.generate_synthetic(20000, L, 20, 6)
    parts = data.partition_noniid(ds, PartitionSpec(K, q, seed=7))
    dominant = other = 0
    for k, p in enumerate(parts):
        h = p.label_histogram()
        dominant += h[k % L]
        other += h.sum() - h[k % L]
    n = dominant + other
    # each sample has probability q of landing in its own label's group
    chi2 = stats.chisquare([dominant, other], [q * n, (1 - q) * n])
    assert chi2.pvalue > 0.01
    assert dominant / n == pytest.approx(q, abs=0.02)


def test_partition_resizes():
    ds = data.generate_synthetic(2000, 10, 5, 8)
    sizes = data.sample_sizes(10, 10, 500, seed=1)
    assert all(10 <= s <= 500 for s in sizes)
    parts = data.partition_noniid(ds, PartitionSpec(10, 0.5, sizes, seed=2))
    assert [len(p) for p in parts] == sizes


def test_partition_fewer_clients_than_labels():
    ds = data.generate_synthetic(300, 10, 5, 8)
    parts = data.partition_noniid(ds, PartitionSpec(4, 0.5, seed=2))
    assert sum(len(p) for p in parts) == 300
