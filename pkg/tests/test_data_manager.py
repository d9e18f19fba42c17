import struct

import numpy as np
import pytest

from src.services.base import ConsistencyError, ContractError, FormatError, LengthError, ShapeError
from src.services.config_models import DatasetConfig, SyntheticSpec
from src.services.data_manager import (DataManager, LabeledDataset, Standardizer, export_csv, load_idx,
                                       make_synthetic, split, stratified_subsample)

PIXELS = [0, 255, 51, 102,
          255, 255, 0, 0,
          10, 20, 30, 40,
          1, 2, 3, 4]
LABELS = [3, 0, 1, 3]


def write_idx(tmp_path, images_magic=0x803, labels_magic=0x801, image_count=4, label_count=4,
              pixels=PIXELS, labels=LABELS):
    images = tmp_path / 'images.idx'
    labels_path = tmp_path / 'labels.idx'
    images.write_bytes(struct.pack('>IIII', images_magic, image_count, 2, 2) + bytes(pixels))
    labels_path.write_bytes(struct.pack('>II', labels_magic, label_count) + bytes(labels))
    return images, labels_path


class TestIdx:
    def test_four_sample_fixture(self, tmp_path):
        data = load_idx(*write_idx(tmp_path))
        assert data.size == 4 and data.dim == 4
        assert data.num_classes == 4
        np.testing.assert_array_equal(data.labels, LABELS)
        np.testing.assert_allclose(data.features[0], [0.0, 1.0, 0.2, 0.4])
        np.testing.assert_allclose(data.features[1], [1.0, 1.0, 0.0, 0.0])

    def test_bad_image_magic(self, tmp_path):
        with pytest.raises(FormatError) as info:
            load_idx(*write_idx(tmp_path, images_magic=0x801))
        assert type(info.value) is FormatError
        assert info.value.offset == 0

    def test_bad_label_magic(self, tmp_path):
        with pytest.raises(FormatError):
            load_idx(*write_idx(tmp_path, labels_magic=0x803))

    def test_truncated_pixels(self, tmp_path):
        with pytest.raises(LengthError):
            load_idx(*write_idx(tmp_path, pixels=PIXELS[:-1]))

    def test_truncated_header(self, tmp_path):
        images, labels = write_idx(tmp_path)
        images.write_bytes(images.read_bytes()[:10])
        with pytest.raises(LengthError):
            load_idx(images, labels)

    def test_count_mismatch(self, tmp_path):
        with pytest.raises(ConsistencyError):
            load_idx(*write_idx(tmp_path, label_count=3, labels=LABELS[:3]))


class TestSynthetic:
    @pytest.mark.parametrize('family', ['gaussian-mixture', 'moons', 'rings'])
    def test_shapes_and_balance(self, family):
        data = make_synthetic(SyntheticSpec(family=family, num_classes=3, per_class=15, seed=2))
        assert data.size == 45 and data.dim == 2
        np.testing.assert_array_equal(data.class_counts(), [15, 15, 15])

    def test_deterministic(self):
        spec = SyntheticSpec(seed=9)
        np.testing.assert_array_equal(make_synthetic(spec).features, make_synthetic(spec).features)

    def test_noise_free_mixture_sits_on_polygon(self):
        data = make_synthetic(SyntheticSpec(num_classes=4, per_class=2, noise=0.0))
        np.testing.assert_allclose(np.linalg.norm(data.features, axis=1), np.full(8, 2.0))


class TestDataset:
    def test_label_out_of_range(self):
        with pytest.raises(ContractError):
            LabeledDataset(np.zeros((2, 2)), [0, 3], 3)

    def test_row_count_mismatch(self):
        with pytest.raises(ShapeError):
            LabeledDataset(np.zeros((3, 2)), [0, 1], 2)

    def test_standardizer_round_trip(self, toy_data):
        normalized = toy_data.normalized()
        np.testing.assert_allclose(normalized.features.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(normalized.denormalized_features(), toy_data.features)

    def test_constant_feature_keeps_unit_scale(self):
        scaler = Standardizer.fit(np.array([[1.0, 2.0], [1.0, 4.0]]))
        assert scaler.scale[0] == 1.0

    def test_standardizer_handles_single_rows_and_empty_batches(self):
        scaler = Standardizer(np.array([1.0, -1.0]), np.array([2.0, 4.0]))
        np.testing.assert_allclose(scaler.transform(np.array([3.0, 3.0])), [1.0, 1.0])
        np.testing.assert_allclose(scaler.inverse_transform(np.array([1.0, 1.0])), [3.0, 3.0])
        assert scaler.transform(np.zeros((0, 2))).shape == (0, 2)


class TestSplit:
    def test_parts_are_disjoint_and_complete(self, toy_data):
        parts = split(toy_data, (0.6, 0.2, 0.2), seed=0)
        assert sum(p.size for p in parts) == toy_data.size
        assert [p.size for p in parts] == [36, 12, 12]
        for part in parts:
            np.testing.assert_array_equal(part.class_counts(), np.bincount(part.labels, minlength=3))
        np.testing.assert_array_equal(parts[0].class_counts(), [12, 12, 12])

    def test_sizes_for_three_hundred_samples(self):
        data = make_synthetic(SyntheticSpec(num_classes=3, per_class=100, seed=2))
        parts = split(data, (0.8, 0.1, 0.1), seed=3)
        assert [p.size for p in parts] == [240, 30, 30]
        np.testing.assert_array_equal(parts[1].class_counts(), [10, 10, 10])

    def test_all_in_train(self, toy_data):
        train, validation, test = split(toy_data, (1.0, 0.0, 0.0), seed=0)
        np.testing.assert_array_equal(train.features, toy_data.features)
        assert validation.size == 0 and test.size == 0

    def test_same_seed_same_split(self, toy_data):
        a = split(toy_data, (0.5, 0.5, 0.0), seed=4)[0]
        b = split(toy_data, (0.5, 0.5, 0.0), seed=4)[0]
        np.testing.assert_array_equal(a.features, b.features)

    def test_tiny_class_falls_back_to_unstratified(self):
        data = LabeledDataset(np.arange(12.0).reshape(6, 2), [0, 0, 0, 0, 0, 1], 2)
        parts = split(data, (0.5, 0.25, 0.25), seed=0)
        assert sum(p.size for p in parts) == 6

    def test_fractions_must_sum_to_one(self, toy_data):
        with pytest.raises(ContractError):
            split(toy_data, (0.5, 0.2, 0.2), seed=0)

    def test_stratified_subsample_size(self, toy_data):
        assert stratified_subsample(toy_data, 30, seed=1).size == 30
        assert stratified_subsample(toy_data, 500, seed=1) is toy_data


def test_export_csv(tmp_path, toy_data):
    path = export_csv(toy_data, tmp_path / 'data.csv')
    lines = path.read_text(encoding='utf-8').splitlines()
    assert lines[0] == 'f0,f1,label'
    assert len(lines) == toy_data.size + 1


def test_data_manager_prepare_splits():
    manager = DataManager(DatasetConfig(synthetic=SyntheticSpec(per_class=10)))
    train, validation, test = manager.prepare_splits(seed=0)
    assert train.size + validation.size + test.size == 30
