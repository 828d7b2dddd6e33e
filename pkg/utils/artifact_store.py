"""
Artifact storage for experiment runs.
Writes CSV tables and JSON records under one output directory, tracks their
SHA-256 checksums and assembles the run manifest.
"""
import hashlib
import json
import logging
import os
import threading
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd
from pydantic import BaseModel

from cwce.performance import get_run_info

logger = logging.getLogger("utils.artifact_store")

MANIFEST_NAME = "manifest.json"
RUN_INFO_NAME = "run_info.json"
CSV_FLOAT_FORMAT = "%.17e"


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def canonical_json(payload: Any) -> str:
    """Key-sorted, compact JSON text used for hashing."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def params_hash(params: BaseModel) -> str:
    """SHA-256 of a model's canonical JSON form."""
    text = canonical_json(params.model_dump(mode="json"))
    return "sha256:" + hashlib.sha256(text.encode("utf-8")).hexdigest()


class ArtifactStore:
    """
    Output directory for one run.

    Features:
    - Full-precision CSV tables (``%.17e``) written by pandas
    - Sorted-key JSON records
    - Checksum registry for the manifest, safe to update from worker threads
    """

    def __init__(self, root: str):
        """
        Initialize the store.

        Args:
            root: Output directory; created when missing
        """
        self.root = Path(root)
        self.lock = threading.RLock()
        self.checksums: Dict[str, str] = {}
        try:
            os.makedirs(self.root, exist_ok=True)
        except OSError as e:
            raise OSError(f"Cannot create output directory {self.root}: {e}") from e
        if not os.access(self.root, os.W_OK):
            raise OSError(f"Output directory {self.root} is not writable")

    def path(self, relative: str) -> Path:
        target = self.root / relative
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def _register(self, relative: str, target: Path) -> None:
        checksum = sha256_file(target)
        with self.lock:
            self.checksums[relative] = checksum
        logger.debug(f"Wrote {target} ({checksum[:12]})")

    def write_csv(self, relative: str, frame: pd.DataFrame) -> Path:
        """
        Write a table as CSV with full-precision scientific floats.

        Args:
            relative: Path below the output root
            frame: Table to write

        Returns:
            Path of the written file
        """
        target = self.path(relative)
        try:
            frame.to_csv(target, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        except OSError as e:
            raise OSError(f"Failed to write {target}: {e}") from e
        self._register(relative, target)
        return target

    def write_json(self, relative: str, payload: Any) -> Path:
        target = self.path(relative)
        try:
            target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as e:
            raise OSError(f"Failed to write {target}: {e}") from e
        self._register(relative, target)
        return target

    def register_file(self, relative: str) -> None:
        """Track a file written by another writer (panel files, for instance)."""
        self._register(relative, self.root / relative)

    def write_manifest(self, seed: int, parameter_hash: str, extra: Optional[Dict[str, Any]] = None) -> Path:
        """
        Write the manifest: seed, parameter hash and every artifact checksum.

        Host details go to a separate run_info.json, which is not
        checksummed, so reruns of the same config produce the same manifest.
        """
        with self.lock:
            artifacts = dict(sorted(self.checksums.items()))
        manifest = {
            "seed": seed,
            "parameter_hash": parameter_hash,
            "artifacts": artifacts,
        }
        if extra:
            manifest.update(extra)
        target = self.root / MANIFEST_NAME
        target.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (self.root / RUN_INFO_NAME).write_text(json.dumps(get_run_info(), indent=2) + "\n", encoding="utf-8")
        logger.info(f"Manifest written to {target} ({len(artifacts)} artifacts)")
        return target


def read_manifest(root: str) -> Dict[str, Any]:
    path = Path(root) / MANIFEST_NAME
    return json.loads(path.read_text(encoding="utf-8"))


def verify_manifest(root: str) -> Dict[str, bool]:
    """Recompute every checksum listed in a manifest; maps artifact to match."""
    manifest = read_manifest(root)
    return {
        relative: (Path(root) / relative).exists() and sha256_file(Path(root) / relative) == checksum
        for relative, checksum in manifest["artifacts"].items()
    }
