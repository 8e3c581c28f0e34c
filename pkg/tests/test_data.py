import struct

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from smadp.data import (
    IDX_IMAGE_MAGIC,
    IDX_LABEL_MAGIC,
    gen_synthetic,
    load_idx,
    poisson_sample,
)
from smadp.errors import FormatError, LengthError, ParameterError
from smadp.numerics import RandomStream


def _write_idx_pair(tmp_path, count=100, rows=28, cols=28,
                    image_magic=IDX_IMAGE_MAGIC, label_magic=IDX_LABEL_MAGIC,
                    truncate_images=0):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(count, rows, cols), dtype=np.uint8)
    pixels[0, 0, 0] = 255
    images = struct.pack(">IIII", image_magic, count, rows, cols) + pixels.tobytes()
    if truncate_images:
        images = images[:-truncate_images]
    labels_arr = rng.integers(0, 10, size=count, dtype=np.uint8)
    labels = struct.pack(">II", label_magic, count) + labels_arr.tobytes()
    images_path = tmp_path / "images.idx"
    labels_path = tmp_path / "labels.idx"
    images_path.write_bytes(images)
    labels_path.write_bytes(labels)
    return images_path, labels_path, pixels, labels_arr


def test_load_idx_respects_limit(tmp_path):
    images_path, labels_path, pixels, labels = _write_idx_pair(tmp_path, count=100)
    data = load_idx(images_path, labels_path, limit=50)
    assert len(data) == 50
    assert data.dim == 784
    assert np.array_equal(data.labels, labels[:50].astype(np.int64))


def test_load_idx_scales_pixels_to_unit_interval(tmp_path):
    images_path, labels_path, pixels, _ = _write_idx_pair(tmp_path, count=3, rows=2, cols=2)
    data = load_idx(images_path, labels_path)
    assert data.features[0, 0] == 1.0  # raw byte 255
    assert np.allclose(data.features, pixels.reshape(3, 4) / 255.0)


def test_load_idx_rejects_wrong_magic(tmp_path):
    images_path, labels_path, _, _ = _write_idx_pair(tmp_path, count=3, rows=2, cols=2,
                                                     image_magic=0x00000807)
    with pytest.raises(FormatError, match="0x00000803"):
        load_idx(images_path, labels_path)


def test_load_idx_rejects_truncated_file(tmp_path):
    images_path, labels_path, _, _ = _write_idx_pair(tmp_path, count=3, rows=2, cols=2,
                                                     truncate_images=5)
    with pytest.raises(LengthError):
        load_idx(images_path, labels_path)


def test_gen_synthetic_balanced_labels():
    data = gen_synthetic(RandomStream(0), 100, 3, 2)
    assert (data.labels == 0).sum() == 50
    assert (data.labels == 1).sum() == 50


def test_gen_synthetic_deterministic():
    a = gen_synthetic(RandomStream(4), 64, 5, 4)
    b = gen_synthetic(RandomStream(4), 64, 5, 4)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)


def test_gen_synthetic_is_linearly_separable():
    # oracle: ordinary logistic regression on the generated data
    data = gen_synthetic(RandomStream(1), 2000, 2, 2)
    fit = LogisticRegression(max_iter=500).fit(data.features, data.labels)
    assert fit.score(data.features, data.labels) >= 0.95


def test_gen_synthetic_rejects_single_class():
    with pytest.raises(ParameterError):
        gen_synthetic(RandomStream(0), 10, 2, 1)


def test_poisson_sample_degenerate_probabilities():
    empty = poisson_sample(RandomStream(0), 100, 0.0)
    assert len(empty) == 0 and not empty.mask.any()
    full = poisson_sample(RandomStream(0), 100, 1.0)
    assert len(full) == 100 and full.mask.all()


def test_poisson_sample_batch_size_concentrates():
    # binomial 3-sigma bound: 5000 +- 150
    batch = poisson_sample(RandomStream(123), 10_000, 0.5)
    assert abs(len(batch) - 5000) <= 150
    assert batch.expected_lot == 5000.0


def test_poisson_sample_mask_indices_consistent():
    batch = poisson_sample(RandomStream(5), 50, 0.4)
    assert np.array_equal(batch.indices, np.flatnonzero(batch.mask))
    assert np.all(np.diff(batch.indices) > 0)


def test_poisson_sample_rejects_bad_probability():
    with pytest.raises(ParameterError):
        poisson_sample(RandomStream(0), 10, 1.5)


def test_poisson_sample_independent_across_steps():
    base = RandomStream(9)
    a = poisson_sample(base.at(step_index=0), 2000, 0.5)
    b = poisson_sample(base.at(step_index=1), 2000, 0.5)
    assert not np.array_equal(a.mask, b.mask)
    overlap = (a.mask & b.mask).sum()
    assert abs(overlap - 500) < 3 * np.sqrt(2000 * 0.25 * 0.75)
