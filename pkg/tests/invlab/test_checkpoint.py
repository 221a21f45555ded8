import pytest
import torch

from invlab.checkpoint import (
    CLASSIFIER_FORMAT,
    MIITN_FORMAT,
    CheckpointFormatError,
    load_checkpoint,
    save_checkpoint,
)


class TestCheckpoint:
    def test_it_reads_back_its_payload(self, tmp_path):
        payload = {"w": torch.ones(2), "n": 3}
        path = save_checkpoint(tmp_path / "a" / "model.pt", CLASSIFIER_FORMAT, payload)
        payload = load_checkpoint(path, CLASSIFIER_FORMAT)
        assert payload["n"] == 3
        assert torch.equal(payload["w"], torch.ones(2))

    def test_it_leaves_no_temporary_file(self, tmp_path):
        save_checkpoint(tmp_path / "model.pt", MIITN_FORMAT, {})
        assert [p.name for p in tmp_path.iterdir()] == ["model.pt"]

    def test_it_refuses_other_formats(self, tmp_path):
        path = save_checkpoint(tmp_path / "model.pt", MIITN_FORMAT, {})
        with pytest.raises(CheckpointFormatError, match="invlab.miitn/1"):
            load_checkpoint(path, CLASSIFIER_FORMAT)

    def test_it_refuses_other_versions(self, tmp_path):
        path = save_checkpoint(tmp_path / "model.pt", "invlab.miitn/0", {})
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path, MIITN_FORMAT)

    def test_it_refuses_untagged_archives(self, tmp_path):
        path = tmp_path / "model.pt"
        torch.save({"state_dict": {}}, path)
        with pytest.raises(CheckpointFormatError, match="not an invlab checkpoint"):
            load_checkpoint(path, MIITN_FORMAT)

    def test_it_refuses_garbage(self, tmp_path):
        path = tmp_path / "model.pt"
        path.write_bytes(b"garbage")
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path, MIITN_FORMAT)

    def test_it_refuses_missing_files(self, tmp_path):
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(tmp_path / "nowhere.pt", MIITN_FORMAT)
