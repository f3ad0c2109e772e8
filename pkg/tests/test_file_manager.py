import json
import os

import numpy as np
import pytest

from src.errors import ConfigError, DataError
from src.file_manager import FileManager, json_text


class TestJsonText:
    def test_numpy_and_non_finite_values(self):
        payload = json.loads(json_text({"a": np.float64(0.5), "b": np.arange(2), "c": float("inf"),
                                        "d": float("nan"), "e": (1, 2)}))
        assert payload == {"a": 0.5, "b": [0, 1], "c": "inf", "d": None, "e": [1, 2]}

    def test_trailing_newline(self):
        assert json_text({}).endswith("\n")


class TestFileManager:
    def test_write_creates_directory_and_records_path(self, tmp_path, logger):
        manager = FileManager(str(tmp_path / "run"), logger=logger)
        path = manager.write_text("report.txt", "hello\n", stage="evaluate")

        assert open(path, encoding="utf-8").read() == "hello\n"
        assert manager.written == [path]
        assert not [name for name in os.listdir(manager.output_dir) if name.startswith(".tmp-")]

    def test_overwrite_is_recorded_once(self, tmp_path, logger):
        manager = FileManager(str(tmp_path), logger=logger)
        manager.write_json("a.json", {"x": 1})
        manager.write_json("a.json", {"x": 2})
        assert len(manager.written) == 1
        assert manager.read_json("a.json") == {"x": 2}

    def test_rollback_removes_files_and_created_directory(self, tmp_path, logger):
        output_dir = tmp_path / "run"
        manager = FileManager(str(output_dir), logger=logger)
        manager.write_text("a.txt", "a")
        manager.write_text("b.txt", "b")

        removed = manager.rollback("stage failed")
        assert len(removed) == 2
        assert not output_dir.exists()
        assert manager.written == []

    def test_rollback_keeps_existing_directory_and_foreign_files(self, tmp_path, logger):
        (tmp_path / "keep.txt").write_text("mine")
        manager = FileManager(str(tmp_path), logger=logger)
        manager.write_text("a.txt", "a")
        manager.rollback("stage failed")
        assert sorted(os.listdir(tmp_path)) == ["keep.txt"]

    def test_output_path_that_is_a_file(self, tmp_path, logger):
        target = tmp_path / "occupied"
        target.write_text("x")
        with pytest.raises(ConfigError):
            FileManager(str(target), logger=logger).ensure_output_dir()

    def test_missing_artifact(self, tmp_path, logger):
        with pytest.raises(DataError) as excinfo:
            FileManager(str(tmp_path), logger=logger).read_json("model.json", stage="evaluate")
        assert excinfo.value.details["artifact"] == "model.json"

    def test_invalid_json_artifact(self, tmp_path, logger):
        (tmp_path / "model.json").write_text("{")
        with pytest.raises(DataError):
            FileManager(str(tmp_path), logger=logger).read_json("model.json")
