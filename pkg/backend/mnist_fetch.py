"""
MNIST download
Fetches the four official gzip IDX files from the configured mirror and verifies
their MD5 checksums before moving them into place.
"""

import hashlib
import logging
import os
from pathlib import Path
from typing import Dict, List, Optional

import requests

from settings import Settings, get_settings

logger = logging.getLogger(__name__)

MNIST_FILES: Dict[str, str] = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}


class DownloadError(RuntimeError):
    pass


class ChecksumMismatchError(ValueError):
    def __init__(self, name: str, expected: str, actual: str):
        self.name, self.expected, self.actual = name, expected, actual
        super().__init__(f"{name}: MD5 {actual} does not match expected {expected}")


def md5_of(path: Path) -> str:
    digest = hashlib.md5()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def fetch_file(name: str, expected_md5: str, target_dir: Path, settings: Settings,
               session: Optional[requests.Session] = None) -> Path:
    """Download one file unless a copy with the right checksum already exists"""
    target = target_dir / name
    if target.exists() and md5_of(target) == expected_md5:
        logger.info(f"{name} already present and verified")
        return target

    url = settings.mnist_mirror.rstrip("/") + "/" + name
    partial = target.with_suffix(target.suffix + ".part")
    http = session or requests
    logger.info(f"Downloading {url}")
    try:
        response = http.get(url, timeout=settings.download_timeout, stream=True)
        response.raise_for_status()
        with open(partial, "wb") as handle:
            for chunk in response.iter_content(chunk_size=1 << 16):
                handle.write(chunk)
    except requests.RequestException as e:
        partial.unlink(missing_ok=True)
        raise DownloadError(f"failed to download {url}: {e}") from e

    actual = md5_of(partial)
    if actual != expected_md5:
        partial.unlink(missing_ok=True)
        raise ChecksumMismatchError(name, expected_md5, actual)
    os.replace(partial, target)
    return target


def fetch_mnist(target_dir: Optional[Path] = None, settings: Optional[Settings] = None,
                session: Optional[requests.Session] = None) -> List[Path]:
    settings = settings or get_settings()
    target_dir = Path(target_dir or settings.data_dir)
    try:
        target_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DownloadError(f"cannot create {target_dir}: {e}") from e
    paths = [fetch_file(name, md5, target_dir, settings, session) for name, md5 in MNIST_FILES.items()]
    logger.info(f"MNIST ready in {target_dir}")
    return paths
