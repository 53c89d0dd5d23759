"""Download trajectory datasets listed in a JSON manifest.

The manifest names every file, the scene it belongs to, where to get it and
its sha256::

    {"files": [{"scene": "eth", "path": "eth/biwi_eth.txt",
                "url": "raw/biwi_eth.txt", "sha256": "..."}]}

Relative URLs resolve against the manifest URL. Files already present with the
right checksum are skipped; others are streamed to ``<name>.download``,
verified, and atomically moved into place, so ``<data_dir>`` only ever holds
verified files in the ``<data_dir>/<scene>/*.txt`` layout the loaders expect.

Environment:
    BIGAT_DATASET_MANIFEST  manifest URL used when none is passed explicitly
    BIGAT_DATA_DIR          target directory (default: data)
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass
from pathlib import Path, PurePosixPath
from typing import Any, Optional
from urllib.parse import urljoin

import httpx

from . import constants as _ct
from .errors import DatasetFetchError

logger = logging.getLogger("bigat.fetch")

MANIFEST_URL_ENV = "BIGAT_DATASET_MANIFEST"
DATA_DIR_ENV = "BIGAT_DATA_DIR"
DEFAULT_DATA_DIR = "data"

_DOWNLOAD_TIMEOUT = httpx.Timeout(30.0, read=300.0)


@dataclass(frozen=True)
class DatasetFile:
    scene: str
    path: str
    url: str
    sha256: str


def parse_manifest(payload: dict[str, Any], manifest_url: str = "") -> list[DatasetFile]:
    """Validate the manifest payload; URLs come back absolute."""
    entries = payload.get("files") if isinstance(payload, dict) else None
    if not isinstance(entries, list) or not entries:
        raise DatasetFetchError("manifest must contain a nonempty 'files' list")
    files = []
    for index, entry in enumerate(entries):
        for field in ("scene", "path", "url", "sha256"):
            if field not in entry:
                raise DatasetFetchError(f"manifest entry {index} is missing required field: {field}")
        scene = str(entry["scene"]).lower()
        if scene not in _ct.SCENE_NAMES:
            raise DatasetFetchError(f"manifest entry {index}: unknown scene '{entry['scene']}'")
        relative = PurePosixPath(str(entry["path"]))
        if relative.is_absolute() or ".." in relative.parts:
            raise DatasetFetchError(f"manifest entry {index}: path must stay inside the data directory")
        files.append(
            DatasetFile(
                scene=scene,
                path=str(relative),
                url=urljoin(manifest_url, str(entry["url"])),
                sha256=str(entry["sha256"]).lower(),
            )
        )
    return files


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _download(http: httpx.Client, item: DatasetFile, target: Path) -> None:
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp_target = target.with_name(target.name + ".download")
    try:
        with http.stream("GET", item.url) as stream:
            stream.raise_for_status()
            with tmp_target.open("wb") as handle:
                for chunk in stream.iter_bytes():
                    handle.write(chunk)
        actual = sha256_file(tmp_target)
        if actual != item.sha256:
            raise DatasetFetchError(f"sha256 mismatch for {item.path}: expected {item.sha256}, got {actual}")
        os.replace(tmp_target, target)
    finally:
        tmp_target.unlink(missing_ok=True)


def fetch_datasets(
    manifest_url: Optional[str] = None,
    data_dir: Optional[str | Path] = None,
    client: Optional[httpx.Client] = None,
) -> list[DatasetFile]:
    """Make ``data_dir`` match the manifest; returns the manifest entries."""
    manifest_url = (manifest_url or os.getenv(MANIFEST_URL_ENV, "")).strip()
    if not manifest_url:
        raise DatasetFetchError(f"no manifest URL given; pass one or set {MANIFEST_URL_ENV}")
    root = Path(data_dir or os.getenv(DATA_DIR_ENV, "").strip() or DEFAULT_DATA_DIR)

    own_client = client is None
    http = client or httpx.Client(timeout=_DOWNLOAD_TIMEOUT, follow_redirects=True)
    try:
        response = http.get(manifest_url)
        response.raise_for_status()
        files = parse_manifest(response.json(), manifest_url)

        downloaded = 0
        for item in files:
            target = root / item.path
            if target.exists() and sha256_file(target) == item.sha256:
                logger.debug("%s already current", target)
                continue
            logger.info("downloading %s -> %s", item.url, target)
            _download(http, item, target)
            downloaded += 1
        logger.info("%d file(s) in %s, %d downloaded", len(files), root, downloaded)
        return files
    finally:
        if own_client:
            http.close()
