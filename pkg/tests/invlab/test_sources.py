import hashlib

import numpy as np
import pytest

from invlab.dataset import TEST, TRAIN, VALIDATION, DatasetFormatError, save_splits
from invlab.sources import (
    CHECKSUMS_FILE,
    PRESETS,
    load_base,
    preset,
    read_k49,
    split_validation,
    verify_checksums,
)


@pytest.fixture
def k49_dir(tmp_path):
    directory = tmp_path / "k49"
    directory.mkdir()
    rng = np.random.default_rng(0)
    for split, n in ((TRAIN, 98), (TEST, 49)):
        images = rng.integers(0, 256, (n, 28, 28)).astype(np.uint8)
        np.savez(directory / f"k49-{split}-imgs.npz", images)
        np.savez(directory / f"k49-{split}-labels.npz", np.arange(n) % 49)
    return directory


class TestPresets:
    def test_k49_follows_a_zipf_law(self):
        plan = PRESETS["k49"].plan()
        assert plan.num_classes == 49
        assert plan.target_sizes[0] == 4828

    def test_gtsrb_holds_out_a_quarter_for_validation(self):
        assert PRESETS["gtsrb"].validation_fraction == 0.25

    def test_unknown_presets_are_rejected(self):
        with pytest.raises(ValueError, match="mnist"):
            preset("mnist")


class TestReadK49:
    def test_it_reads_both_splits(self, k49_dir):
        splits = read_k49(k49_dir)
        assert len(splits[TRAIN]) == 98
        assert splits[TEST].image_shape == (28, 28, 1)
        assert splits[TRAIN].num_classes == 49

    def test_missing_archives_are_format_errors(self, k49_dir):
        (k49_dir / "k49-test-labels.npz").unlink()
        with pytest.raises(DatasetFormatError):
            read_k49(k49_dir)


class TestVerifyChecksums:
    def test_it_skips_directories_without_checksums(self, k49_dir):
        assert verify_checksums(k49_dir) == 0

    def test_it_verifies_listed_files(self, k49_dir):
        name = "k49-train-imgs.npz"
        digest = hashlib.sha256((k49_dir / name).read_bytes()).hexdigest()
        (k49_dir / CHECKSUMS_FILE).write_text(f"{digest}  {name}\n")
        assert verify_checksums(k49_dir) == 1

    def test_it_reports_mismatches(self, k49_dir):
        (k49_dir / CHECKSUMS_FILE).write_text(f"{'0' * 64}  k49-train-imgs.npz\n")
        with pytest.raises(DatasetFormatError, match="sha256"):
            verify_checksums(k49_dir)

    def test_it_reports_missing_files(self, k49_dir):
        (k49_dir / CHECKSUMS_FILE).write_text(f"{'0' * 64}  *nowhere.npz\n")
        with pytest.raises(DatasetFormatError, match="missing"):
            verify_checksums(k49_dir)


class TestSplitValidation:
    def test_it_partitions_the_dataset(self, train_set):
        train, val = split_validation(train_set, 0.25, seed=0)
        assert len(val) == 11
        assert len(train) + len(val) == len(train_set)
        assert train.split == TRAIN
        assert val.split == VALIDATION

    def test_it_depends_on_the_seed_only(self, train_set):
        a = split_validation(train_set, 0.25, seed=1)[1]
        b = split_validation(train_set, 0.25, seed=1)[1]
        assert np.array_equal(a.images, b.images)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.5])
    def test_it_rejects_degenerate_fractions(self, train_set, fraction):
        with pytest.raises(ValueError):
            split_validation(train_set, fraction, seed=0)


class TestLoadBase:
    def test_it_reads_the_official_format(self, k49_dir):
        splits = load_base("k49", k49_dir.parent)
        assert set(splits) == {TRAIN, TEST}
        assert splits[TRAIN].name == "k49"

    def test_it_prefers_the_portable_layout(self, tmp_path, make_dataset):
        save_splits(
            tmp_path / "k49",
            {TRAIN: make_dataset([2] * 49), TEST: make_dataset([1] * 49, split=TEST)},
        )
        splits = load_base("k49", tmp_path)
        assert len(splits[TRAIN]) == 98
        assert splits[TRAIN].image_shape == (16, 16, 1)

    def test_it_draws_a_validation_split_on_request(self, k49_dir):
        splits = load_base("k49", k49_dir.parent, validation_fraction=0.5)
        assert len(splits[VALIDATION]) == 49
        assert len(splits[TRAIN]) == 49

    def test_it_fails_on_checksum_mismatch(self, k49_dir):
        (k49_dir / CHECKSUMS_FILE).write_text(f"{'f' * 64}  k49-test-imgs.npz\n")
        with pytest.raises(DatasetFormatError):
            load_base("k49", k49_dir.parent)
