import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedsa.data import (Dataset, dirichlet_partition, gen_synthetic, iid_partition, label_entropy,
                        load_mnist, load_mnist_idx, read_idx_images, write_idx_images, write_idx_labels)
from fedsa.errors import ConfigError, FormatError, InvalidInput
from fedsa.model import MlpModel, evaluate_accuracy, local_train
from fedsa.rng import RngStream


def _labelled(counts):
    labels = np.concatenate([np.full(c, k) for k, c in enumerate(counts)])
    return Dataset(np.zeros((labels.size, 1)), labels, len(counts))


def test_iid_exact_one_per_class():
    data = _labelled([10] * 10)
    part = iid_partition(data, 10, RngStream(0))
    part.validate(len(data))
    for a in part.assignments:
        assert sorted(data.labels[a]) == list(range(10))


@given(st.lists(st.integers(0, 40), min_size=2, max_size=6), st.integers(1, 12), st.integers(0, 1000))
def test_iid_histograms_within_one(counts, n_clients, seed):
    data = _labelled(counts)
    if len(data) < n_clients:
        with pytest.raises(InvalidInput):
            iid_partition(data, n_clients, RngStream(seed))
        return
    part = iid_partition(data, n_clients, RngStream(seed))
    allidx = np.sort(np.concatenate(part.assignments))
    assert np.array_equal(allidx, np.arange(len(data)))
    hist = np.array([np.bincount(data.labels[a], minlength=len(counts)) for a in part.assignments])
    assert np.all(hist.max(axis=0) - hist.min(axis=0) <= 1)
    assert part.sizes().max() - part.sizes().min() <= 1


def test_iid_too_many_clients():
    with pytest.raises(InvalidInput):
        iid_partition(_labelled([2, 2]), 5, RngStream(0))


def test_dirichlet_huge_alpha_is_near_uniform():
    data = _labelled([2000] * 5)
    part = dirichlet_partition(data, 10, 1e6, RngStream(1))
    part.validate(len(data))
    for a in part.assignments:
        hist = np.bincount(data.labels[a], minlength=5)
        assert np.all(np.abs(hist - hist.mean()) <= 0.05 * hist.mean())


def test_dirichlet_small_alpha_has_lower_entropy():
    data = _labelled([100] * 10)
    low, high = [], []
    for seed in range(20):
        low.append(label_entropy(data, dirichlet_partition(data, 50, 0.1, RngStream(seed))).mean())
        high.append(label_entropy(data, dirichlet_partition(data, 50, 0.9, RngStream(seed))).mean())
    assert np.mean(low) < np.mean(high)


@given(st.floats(0.05, 5.0), st.integers(2, 30), st.integers(0, 1000))
def test_dirichlet_is_a_partition(alpha, n_clients, seed):
    data = _labelled([15, 9, 30])
    part = dirichlet_partition(data, n_clients, alpha, RngStream(seed))
    part.validate(len(data))
    assert len(part) == n_clients
    assert np.array_equal(np.sort(np.concatenate(part.assignments)), np.arange(len(data)))


def test_dirichlet_more_clients_than_samples():
    with pytest.raises(ConfigError):
        dirichlet_partition(_labelled([2, 1]), 5, 0.5, RngStream(0))


def test_dirichlet_bad_alpha():
    with pytest.raises(InvalidInput):
        dirichlet_partition(_labelled([5, 5]), 2, 0.0, RngStream(0))


def test_synthetic_is_deterministic():
    a = gen_synthetic(3, 4, 50, 2.0, RngStream(5))
    b = gen_synthetic(3, 4, 50, 2.0, RngStream(5))
    assert a.features.tobytes() == b.features.tobytes() and np.array_equal(a.labels, b.labels)


def test_synthetic_mean_separation(gen):
    d = gen_synthetic(3, 5, 30000, 6.0, RngStream(2))
    mus = np.array([d.features[d.labels == c].mean(axis=0) for c in range(3)])
    for i in range(3):
        for j in range(i + 1, 3):
            assert abs(np.linalg.norm(mus[i] - mus[j]) - 6.0) < 0.1


def test_synthetic_zero_separation_is_chance():
    train = gen_synthetic(4, 6, 4000, 0.0, RngStream(1))
    test = gen_synthetic(4, 6, 4000, 0.0, RngStream(2))
    m = local_train(MlpModel.zeros((6, 4)), train, 5, 20, 0.05, RngStream(3))
    assert evaluate_accuracy(m, test) <= 0.25 + 0.05


def test_synthetic_wide_separation_is_learnable():
    train = gen_synthetic(2, 4, 1000, 10.0, RngStream(1))
    test = gen_synthetic(2, 4, 1000, 10.0, RngStream(2))
    m = local_train(MlpModel.zeros((4, 2)), train, 5, 10, 0.1, RngStream(3))
    assert evaluate_accuracy(m, test) >= 0.99


# -- IDX ---------------------------------------------------------------------

def _write_pair(tmp_path, n=3, n_labels=None):
    imgs = np.zeros((n, 28, 28), dtype=np.uint8)
    imgs[0, 0, 0] = 255
    imgs[1, 27, 27] = 128
    write_idx_images(tmp_path / "img", imgs)
    write_idx_labels(tmp_path / "lab", np.arange(n_labels if n_labels is not None else n) % 10)
    return tmp_path / "img", tmp_path / "lab"


def test_idx_parses_and_scales(tmp_path):
    d = load_mnist_idx(*_write_pair(tmp_path))
    assert d.features.shape == (3, 784)
    assert d.features[0, 0] == 1.0 and d.features[1, 783] == 128 / 255
    assert list(d.labels) == [0, 1, 2]


def test_idx_header_sizes(tmp_path):
    p = tmp_path / "big"
    with open(p, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, 10000, 28, 28))
        fh.write(bytes(10000 * 784))
    assert read_idx_images(p).shape == (10000, 784)


def test_idx_count_mismatch(tmp_path):
    with pytest.raises(FormatError, match="byte offset 4"):
        load_mnist_idx(*_write_pair(tmp_path, n=3, n_labels=2))


def test_idx_bad_magic(tmp_path):
    img, lab = _write_pair(tmp_path)
    with pytest.raises(FormatError, match="bad magic.*byte offset 0"):
        load_mnist_idx(img, img)


def test_idx_truncated(tmp_path):
    img, lab = _write_pair(tmp_path)
    raw = img.read_bytes()
    img.write_bytes(raw[:-10])
    with pytest.raises(FormatError, match="truncated"):
        load_mnist_idx(img, lab)


def test_missing_mnist_names_path(tmp_path):
    with pytest.raises(ConfigError, match=str(tmp_path)):
        load_mnist(tmp_path)
