"""
Tests for the async annotation downloader against a local aiohttp server.
"""

import time

import pytest
from aiohttp import test_utils, web

from body_orient.core.models import DownloadError
from body_orient.network import AnnotationDownloader, RateLimiter, filename_for

BODY = b'{"images": [], "annotations": []}'


def _app(statuses):
    """Serve /ann.json, answering with the queued statuses first and 200 after."""
    calls = {"count": 0}

    async def handler(request):
        calls["count"] += 1
        if statuses:
            return web.Response(status=statuses.pop(0), text="nope")
        return web.Response(body=BODY, content_type="application/json")

    app = web.Application()
    app.router.add_get("/ann.json", handler)
    return app, calls


class TestDownloader:
    """AnnotationDownloader.download()"""

    async def test_success(self, tmp_path):
        app, calls = _app([])
        async with test_utils.TestServer(app) as server:
            async with AnnotationDownloader(rate_limit=0, backoff_base=0) as downloader:
                path = await downloader.download(str(server.make_url("/ann.json")), tmp_path)
        assert path == tmp_path / "ann.json"
        assert path.read_bytes() == BODY
        assert calls["count"] == 1
        assert downloader.stats["bytes"] == len(BODY)

    async def test_retry_then_success(self, tmp_path):
        app, calls = _app([503, 500])
        async with test_utils.TestServer(app) as server:
            async with AnnotationDownloader(rate_limit=0, backoff_base=0) as downloader:
                path = await downloader.download(str(server.make_url("/ann.json")), tmp_path)
        assert path.read_bytes() == BODY
        assert calls["count"] == 3
        assert downloader.stats["failures"] == 2

    async def test_client_error_not_retried(self, tmp_path):
        app, calls = _app([404])
        async with test_utils.TestServer(app) as server:
            async with AnnotationDownloader(rate_limit=0, backoff_base=0) as downloader:
                with pytest.raises(DownloadError) as exc:
                    await downloader.download(str(server.make_url("/ann.json")), tmp_path)
        assert exc.value.status == 404
        assert calls["count"] == 1
        assert not (tmp_path / "ann.json").exists()

    async def test_gives_up_after_retries(self, tmp_path):
        app, calls = _app([500, 500, 500, 500])
        async with test_utils.TestServer(app) as server:
            async with AnnotationDownloader(rate_limit=0, max_retries=2,
                                            backoff_base=0) as downloader:
                with pytest.raises(DownloadError) as exc:
                    await downloader.download(str(server.make_url("/ann.json")), tmp_path)
        assert exc.value.status == 500
        assert calls["count"] == 3
        assert list(tmp_path.iterdir()) == []

    async def test_download_all_keeps_order(self, tmp_path):
        app, _ = _app([])
        async with test_utils.TestServer(app) as server:
            url = str(server.make_url("/ann.json"))
            async with AnnotationDownloader(rate_limit=0, backoff_base=0) as downloader:
                paths = await downloader.download_all([url], tmp_path / "out")
        assert paths == [tmp_path / "out" / "ann.json"]


class TestHelpers:
    """RateLimiter and filename_for()"""

    async def test_rate_limiter_spacing(self):
        limiter = RateLimiter(requests_per_second=20.0)
        start = time.monotonic()
        for _ in range(3):
            await limiter.acquire()
        assert time.monotonic() - start >= 0.09

    async def test_unlimited(self):
        limiter = RateLimiter(requests_per_second=0)
        await limiter.acquire()
        assert limiter.min_interval == 0

    def test_filename(self):
        assert filename_for("http://host/a/b/annotations.zip?x=1") == "annotations.zip"
        with pytest.raises(DownloadError):
            filename_for("http://host/")
