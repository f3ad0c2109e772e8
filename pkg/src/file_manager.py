import json
import os
import tempfile

import numpy as np

from src.errors import ConfigError, DataError
from src.logger import get_logger


def _plain(value):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return [_plain(item) for item in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        if np.isnan(value):
            return None
        return "inf" if value > 0 else "-inf"
    return value


def json_text(payload) -> str:
    """Stable JSON rendering used for every artifact: indented, insertion-ordered, newline-terminated."""
    return json.dumps(_plain(payload), indent=2, allow_nan=False) + "\n"


class FileManager:
    """Write run artifacts atomically into one output directory and undo them on failure."""

    def __init__(self, output_dir, logger=None):
        self.output_dir = output_dir
        self.logger = logger or get_logger()
        self.written = []
        self._created_dir = False

    def path(self, name):
        return os.path.join(self.output_dir, name)

    def exists(self, name):
        return os.path.exists(self.path(name))

    def ensure_output_dir(self):
        if os.path.exists(self.output_dir) and not os.path.isdir(self.output_dir):
            raise ConfigError(f"Output path is not a directory: {self.output_dir}", stage="config")
        if not os.path.exists(self.output_dir):
            os.makedirs(self.output_dir)
            self._created_dir = True
        return self.output_dir

    def write_text(self, name, text, stage=None):
        """
        Write through a temporary file in the same directory and rename it into place,
        so a reader sees either the complete file or no file.
        """
        self.ensure_output_dir()
        destination = self.path(name)
        handle, temp_path = tempfile.mkstemp(prefix=".tmp-", dir=self.output_dir)
        try:
            with os.fdopen(handle, "w", encoding="utf-8", newline="\n") as f:
                f.write(text)
            os.replace(temp_path, destination)
        except OSError as e:
            if os.path.exists(temp_path):
                os.remove(temp_path)
            raise DataError(f"Cannot write {destination}: {e}", stage=stage)

        if destination not in self.written:
            self.written.append(destination)
        self.logger.log_artifact_written(destination, stage=stage)
        return destination

    def write_json(self, name, payload, stage=None):
        return self.write_text(name, json_text(payload), stage=stage)

    def read_text(self, name, stage=None):
        try:
            with open(self.path(name), "r", encoding="utf-8") as f:
                return f.read()
        except FileNotFoundError:
            raise DataError(f"Required artifact {name} not found in {self.output_dir}", stage=stage,
                            details={"artifact": name})

    def read_json(self, name, stage=None):
        text = self.read_text(name, stage=stage)
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise DataError(f"Artifact {name} is not valid JSON: {e}", stage=stage)

    def rollback(self, reason):
        """Remove every artifact this manager wrote; the directory goes too if this run created it empty."""
        removed = []
        for path in reversed(self.written):
            try:
                if os.path.exists(path):
                    os.remove(path)
                    removed.append(path)
                    self.logger.log_artifact_removed(path, reason)
            except OSError as e:
                self.logger.error(f"Rollback could not remove {path}: {e}")
        self.written = []

        if self._created_dir and os.path.isdir(self.output_dir) and not os.listdir(self.output_dir):
            os.rmdir(self.output_dir)
        return removed
