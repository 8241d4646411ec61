"""
Persistence of fit artifacts and the run manifest.

JSON floats use Python's shortest round-trip repr; CSV floats use 17
significant digits. The manifest carries no timestamps so identical inputs
give identical bytes.
"""

import hashlib
import json
import platform
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel

FLOAT_FORMAT = "%.17g"
_VERSIONED_PACKAGES = ("infpca", "numpy", "scipy", "pandas", "pydantic", "loguru")


def _default(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return value.as_posix()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(path: Path | str, data: Any) -> Path:
    """Store JSON data with sorted keys."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, default=_default, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path: Path | str) -> Optional[Dict[str, Any]]:
    """Retrieve JSON data; None when the file does not exist."""
    path = Path(path)
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def write_csv(path: Path | str, frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="NA")
    return path


def write_jsonl(path: Path | str, records: Iterable[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(r, default=_default, sort_keys=True) for r in records]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def sha256_file(path: Path | str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in _VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def write_manifest(
    output_dir: Path | str,
    config: BaseModel,
    artifacts: Iterable[Path],
    seeds: Optional[Dict[str, Any]] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    manifest.json: config echo, package versions, seeds and the SHA-256 of every artifact.

    Artifact paths are stored relative to ``output_dir``.
    """
    output_dir = Path(output_dir)
    entries = {}
    for artifact in sorted({Path(a) for a in artifacts}):
        try:
            name = artifact.relative_to(output_dir).as_posix()
        except ValueError:
            name = artifact.as_posix()
        entries[name] = sha256_file(artifact)

    manifest = {
        "config": config.model_dump(mode="json"),
        "versions": package_versions(),
        "seeds": seeds or {},
        "artifacts": entries,
    }
    if extra:
        manifest.update(extra)
    path = write_json(output_dir / "manifest.json", manifest)
    logger.info(f"Wrote manifest with {len(entries)} artifact(s) to {path}")
    return path
