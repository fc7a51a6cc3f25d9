"""
Tests for the MNIST downloader, with a fake HTTP session
"""

import hashlib

import pytest
import requests

from mnist_fetch import ChecksumMismatchError, DownloadError, fetch_file, fetch_mnist
from settings import Settings


class FakeResponse:
    def __init__(self, payload: bytes, status: int = 200):
        self.payload = payload
        self.status = status

    def raise_for_status(self):
        if self.status >= 400:
            raise requests.HTTPError(f"{self.status} error")

    def iter_content(self, chunk_size=1):
        for start in range(0, len(self.payload), chunk_size):
            yield self.payload[start:start + chunk_size]


class FakeSession:
    def __init__(self, payloads=None, status=200, error=None):
        self.payloads = payloads or {}
        self.status = status
        self.error = error
        self.urls = []

    def get(self, url, timeout=None, stream=False):
        self.urls.append(url)
        if self.error is not None:
            raise self.error
        return FakeResponse(self.payloads.get(url.rsplit("/", 1)[-1], b""), self.status)


@pytest.fixture
def settings():
    return Settings(mnist_mirror="https://mirror.test/mnist", download_timeout=5.0)


def md5(data: bytes) -> str:
    return hashlib.md5(data).hexdigest()


# ==================== Download Tests ====================

class TestFetchFile:

    def test_download_verified(self, tmp_path, settings):
        """Test a download with the right checksum lands under its name"""
        session = FakeSession({"a.gz": b"payload"})
        path = fetch_file("a.gz", md5(b"payload"), tmp_path, settings, session)
        assert path.read_bytes() == b"payload"
        assert session.urls == ["https://mirror.test/mnist/a.gz"]
        assert not (tmp_path / "a.gz.part").exists()

    def test_existing_file_skipped(self, tmp_path, settings):
        """Test a verified local copy is not downloaded again"""
        (tmp_path / "a.gz").write_bytes(b"payload")
        session = FakeSession()
        fetch_file("a.gz", md5(b"payload"), tmp_path, settings, session)
        assert session.urls == []

    def test_checksum_mismatch(self, tmp_path, settings):
        """Test a corrupted download is discarded"""
        session = FakeSession({"a.gz": b"tampered"})
        with pytest.raises(ChecksumMismatchError) as info:
            fetch_file("a.gz", md5(b"payload"), tmp_path, settings, session)
        assert info.value.actual == md5(b"tampered")
        assert list(tmp_path.iterdir()) == []

    def test_http_error(self, tmp_path, settings):
        """Test an error status becomes DownloadError"""
        with pytest.raises(DownloadError):
            fetch_file("a.gz", md5(b""), tmp_path, settings, FakeSession(status=404))

    def test_connection_error(self, tmp_path, settings):
        """Test transport failures become DownloadError"""
        session = FakeSession(error=requests.ConnectionError("unreachable"))
        with pytest.raises(DownloadError, match="unreachable"):
            fetch_file("a.gz", md5(b""), tmp_path, settings, session)


class TestFetchMnist:

    def test_all_four_files_requested(self, tmp_path, settings, monkeypatch):
        """Test every official file is fetched into the target directory"""
        monkeypatch.setattr("mnist_fetch.MNIST_FILES", {"x.gz": md5(b"x"), "y.gz": md5(b"y")})
        session = FakeSession({"x.gz": b"x", "y.gz": b"y"})
        paths = fetch_mnist(tmp_path / "mnist", settings, session)
        assert [p.name for p in paths] == ["x.gz", "y.gz"]
        assert len(session.urls) == 2
