"""Manifest-driven corpus fetcher: plain HTTP with range resume, sha256
verification, bounded parallelism, and retry with backoff."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import ChecksumMismatch, NetworkFailure

log = logging.getLogger(__name__)

_CHUNK = 1 << 16


@dataclass(frozen=True)
class ManifestEntry:
    url: str
    path: str          # destination, relative to the dataset root
    size: int
    sha256: str


def load_manifest(path) -> list[ManifestEntry]:
    raw = json.loads(Path(path).read_text())
    entries = []
    for item in raw:
        entries.append(ManifestEntry(
            url=item["url"],
            path=item["path"],
            size=int(item["size"]),
            sha256=item["sha256"].lower(),
        ))
    return entries


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while chunk := fh.read(_CHUNK):
            h.update(chunk)
    return h.hexdigest()


def _verified(entry: ManifestEntry, dest: Path) -> bool:
    return dest.is_file() and dest.stat().st_size == entry.size and _sha256(dest) == entry.sha256


def _download_once(entry: ManifestEntry, dest: Path, timeout: float) -> None:
    partial = dest.with_suffix(dest.suffix + ".part")
    have = partial.stat().st_size if partial.is_file() else 0
    headers = {"Range": f"bytes={have}-"} if 0 < have < entry.size else {}
    if have >= entry.size:
        partial.unlink(missing_ok=True)
        have = 0
        headers = {}
    with requests.get(entry.url, headers=headers, stream=True, timeout=timeout) as resp:
        if headers and resp.status_code == 200:
            have = 0  # server ignored the range; start over
        elif headers and resp.status_code != 206:
            resp.raise_for_status()
        else:
            resp.raise_for_status()
        mode = "ab" if have else "wb"
        with open(partial, mode) as fh:
            for chunk in resp.iter_content(_CHUNK):
                fh.write(chunk)
    if partial.stat().st_size != entry.size:
        raise ChecksumMismatch(
            f"{entry.path}: got {partial.stat().st_size} bytes, expected {entry.size}")
    if _sha256(partial) != entry.sha256:
        partial.unlink()
        raise ChecksumMismatch(f"{entry.path}: sha256 mismatch")
    partial.replace(dest)


def fetch_entry(entry: ManifestEntry, dataset_root: Path, retries: int = 3,
                backoff: float = 0.5, timeout: float = 30.0) -> bool:
    """Ensure one manifest entry is present and verified.

    Returns True when a download happened, False when the file was already
    valid. Corrupt local files are re-fetched from scratch.
    """
    dest = dataset_root / entry.path
    dest.parent.mkdir(parents=True, exist_ok=True)
    if _verified(entry, dest):
        log.info("%s: already verified, skipping", entry.path)
        return False
    if dest.is_file():
        log.warning("%s: present but invalid, re-downloading", entry.path)
        dest.unlink()
    last_error: Exception | None = None
    for attempt in range(retries):
        if attempt:
            time.sleep(backoff * (2 ** (attempt - 1)))
        try:
            _download_once(entry, dest, timeout)
            return True
        except ChecksumMismatch as exc:
            last_error = exc
        except requests.RequestException as exc:
            last_error = exc
            log.warning("%s: attempt %d failed: %s", entry.path, attempt + 1, exc)
    if isinstance(last_error, ChecksumMismatch):
        raise last_error
    raise NetworkFailure(
        f"{entry.url}: unreachable after {retries} attempts ({last_error})")


def fetch_all(entries: list[ManifestEntry], dataset_root: Path, workers: int = 4,
              retries: int = 3, backoff: float = 0.5) -> int:
    """Fetch every entry (bounded parallel); returns the number downloaded."""
    dataset_root.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(
            lambda e: fetch_entry(e, dataset_root, retries=retries, backoff=backoff),
            entries))
    return sum(results)
