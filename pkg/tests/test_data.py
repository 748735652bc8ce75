"""Synthetic data generation, CIFAR-10 binary reading, batching."""

import numpy as np
import pytest

from transition_nas.data import (
    CIFAR_RECORD_BYTES,
    CifarFormatError,
    SyntheticSpec,
    batches,
    class_templates,
    easy_spec,
    gen_synthetic,
    read_cifar10_binary,
)


class TestSynthetic:
    def test_zero_noise_collapses_classes(self):
        spec = SyntheticSpec(class_count=3, samples_per_class=5, noise_std=0.0, seed=1)
        data = gen_synthetic(spec)
        for c in range(3):
            rows = data.images[data.labels == c]
            for row in rows[1:]:
                np.testing.assert_array_equal(row, rows[0])

    def test_same_seed_identical(self):
        d1 = gen_synthetic(easy_spec(seed=5))
        d2 = gen_synthetic(easy_spec(seed=5))
        np.testing.assert_array_equal(d1.images, d2.images)
        np.testing.assert_array_equal(d1.labels, d2.labels)

    def test_different_seed_differs(self):
        d1 = gen_synthetic(easy_spec(seed=5))
        d2 = gen_synthetic(easy_spec(seed=6))
        assert not np.array_equal(d1.images, d2.images)

    def test_easy_preset_nearest_template_is_perfect(self):
        data = gen_synthetic(easy_spec(seed=2))
        # oracle baseline: classify by the nearest class mean
        means = np.stack(
            [data.images[data.labels == c].mean(axis=0) for c in range(data.class_count)]
        )
        flat = data.images.reshape(len(data), -1)
        dists = ((flat[:, None, :] - means.reshape(4, -1)[None]) ** 2).sum(axis=2)
        predictions = dists.argmin(axis=1)
        assert (predictions == data.labels).mean() == 1.0

    def test_normalization_statistics(self):
        data = gen_synthetic(easy_spec(seed=3))
        mean = data.images.mean(axis=(0, 2, 3))
        var = data.images.var(axis=(0, 2, 3))
        np.testing.assert_allclose(mean, 0.0, atol=1e-9)
        np.testing.assert_allclose(var, 1.0, atol=1e-6)

    def test_labels_and_counts(self):
        spec = SyntheticSpec(class_count=5, samples_per_class=7, seed=0)
        data = gen_synthetic(spec)
        assert len(data) == 35
        assert sorted(np.unique(data.labels)) == list(range(5))
        assert all((data.labels == c).sum() == 7 for c in range(5))

    def test_templates_deterministic(self):
        t1 = class_templates(easy_spec(seed=9))
        t2 = class_templates(easy_spec(seed=9))
        np.testing.assert_array_equal(t1, t2)


def _write_cifar(path, labels, pixel_fill=None, rng=None):
    records = []
    for i, label in enumerate(labels):
        pixels = (
            np.full(3072, pixel_fill, dtype=np.uint8)
            if pixel_fill is not None
            else rng.integers(0, 256, 3072, dtype=np.uint8)
        )
        records.append(np.concatenate([[np.uint8(label)], pixels]))
    np.concatenate(records).astype(np.uint8).tofile(path)


class TestCifarReader:
    def test_single_record(self, tmp_path):
        path = tmp_path / "batch.bin"
        _write_cifar(path, [7], pixel_fill=128)
        data = read_cifar10_binary([path])
        assert data.images.shape == (1, 3, 32, 32)
        assert data.labels.tolist() == [7]
        assert data.class_count == 10

    def test_values_scaled_then_normalized(self, tmp_path):
        path = tmp_path / "batch.bin"
        _write_cifar(path, [0, 1], rng=np.random.default_rng(0))
        data = read_cifar10_binary([path])
        np.testing.assert_allclose(data.images.mean(axis=(0, 2, 3)), 0.0, atol=1e-9)

    def test_truncated_file_names_the_file(self, tmp_path):
        path = tmp_path / "trunc.bin"
        path.write_bytes(b"\x00" * (CIFAR_RECORD_BYTES - 1))
        with pytest.raises(CifarFormatError, match="trunc.bin"):
            read_cifar10_binary([path])

    def test_bad_label_names_the_record(self, tmp_path):
        path = tmp_path / "bad.bin"
        _write_cifar(path, [3, 255, 1], pixel_fill=0)
        with pytest.raises(CifarFormatError, match="record 1.*255"):
            read_cifar10_binary([path])

    def test_multiple_files_concatenate(self, tmp_path):
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        _write_cifar(p1, [0, 1], pixel_fill=10)
        _write_cifar(p2, [2], pixel_fill=200)
        data = read_cifar10_binary([p1, p2])
        assert len(data) == 3
        assert data.labels.tolist() == [0, 1, 2]

    def test_no_files_rejected(self):
        with pytest.raises(CifarFormatError):
            read_cifar10_binary([])


class TestBatches:
    def _data(self, n):
        spec = SyntheticSpec(class_count=1, samples_per_class=n, height=2, width=2,
                             channels=1, seed=0)
        return gen_synthetic(spec)

    def test_short_final_batch_kept(self):
        out = batches(self._data(10), 3, seed=0, epoch=0)
        assert [len(b.labels) for b in out] == [3, 3, 3, 1]

    def test_every_sample_exactly_once(self):
        data = self._data(11)
        data.labels = np.arange(11)
        out = batches(data, 4, seed=1, epoch=2)
        seen = np.concatenate([b.labels for b in out])
        assert sorted(seen.tolist()) == list(range(11))

    def test_same_seed_epoch_reproduces(self):
        data = self._data(9)
        b1 = batches(data, 4, seed=3, epoch=1)
        b2 = batches(data, 4, seed=3, epoch=1)
        for x, y in zip(b1, b2):
            np.testing.assert_array_equal(x.images, y.images)

    def test_epochs_shuffle_differently(self):
        data = self._data(64)
        b0 = batches(data, 64, seed=3, epoch=0)[0]
        b1 = batches(data, 64, seed=3, epoch=1)[0]
        assert not np.array_equal(b0.images, b1.images)

    def test_bad_batch_size_rejected(self):
        with pytest.raises(ValueError):
            batches(self._data(4), 0, seed=0, epoch=0)
