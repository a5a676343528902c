"""
Async downloader for benchmark annotation files.

=== KEY FEATURES ===

1. RATE LIMITING: requests are spaced at least 1 / rate_limit seconds apart
2. RETRY LOGIC: failed transfers are retried with exponential backoff
   (1s, 2s, 4s, ... capped at 30s); 4xx responses are never retried
3. ATOMIC WRITES: bodies stream into `<name>.part` and are renamed into place
   only once complete, so an interrupted download never leaves a truncated file
4. CONNECTION POOLING: one aiohttp ClientSession per downloader

=== WHY ASYNC? ===
The annotation archives are a handful of large files on the same host. One
event loop streams them concurrently through a shared session while the
rate limiter keeps the request rate polite:

    3 files, rate_limit=2.0  ->  requests at t = 0.0s, 0.5s, 1.0s, bodies overlap

Usage:
    async with AnnotationDownloader(rate_limit=2.0) as downloader:
        path = await downloader.download(url, Path("data"))
"""

import asyncio
import logging
import os
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence
from urllib.parse import urlparse

import aiohttp
from aiohttp import ClientSession, ClientTimeout

from .core.models import DownloadError

logger = logging.getLogger(__name__)

MAX_BACKOFF = 30


class RateLimiter:
    """
    Async rate limiter: enforces a minimum interval between acquisitions.

    asyncio.Lock keeps concurrent downloads from reading the same timestamp.
    """

    def __init__(self, requests_per_second: float = 2.0):
        self.requests_per_second = requests_per_second
        self.min_interval = 1.0 / requests_per_second if requests_per_second > 0 else 0
        self.last_request_time = 0.0
        self._lock = asyncio.Lock()

    async def acquire(self) -> None:
        if self.min_interval == 0:
            return
        async with self._lock:
            elapsed = time.monotonic() - self.last_request_time
            if elapsed < self.min_interval:
                await asyncio.sleep(self.min_interval - elapsed)
            self.last_request_time = time.monotonic()


def filename_for(url: str) -> str:
    name = os.path.basename(urlparse(url).path)
    if not name:
        raise DownloadError(url, "URL has no file name component")
    return name


class AnnotationDownloader:
    """Streams files over HTTP(S) with rate limiting, retries and atomic writes."""

    def __init__(self, rate_limit: float = 2.0, timeout: float = 600, max_retries: int = 3,
                 chunk_size: int = 1 << 20, backoff_base: float = 1.0):
        self.rate_limiter = RateLimiter(rate_limit)
        self.max_retries = max_retries
        self.chunk_size = chunk_size
        self.backoff_base = backoff_base
        self._timeout = ClientTimeout(total=timeout)
        self._session: Optional[ClientSession] = None
        self.stats = {"requests": 0, "failures": 0, "bytes": 0}

    @classmethod
    def from_config(cls, download_config: Dict) -> "AnnotationDownloader":
        return cls(rate_limit=float(download_config["rate_limit"]),
                   timeout=float(download_config["timeout"]),
                   max_retries=int(download_config["max_retries"]),
                   chunk_size=int(download_config["chunk_size"]))

    async def _get_session(self) -> ClientSession:
        if self._session is None or self._session.closed:
            self._session = ClientSession(timeout=self._timeout)
        return self._session

    async def close(self):
        if self._session and not self._session.closed:
            await self._session.close()

    async def __aenter__(self):
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        await self.close()

    async def _fetch_once(self, url: str, target: Path) -> int:
        session = await self._get_session()
        partial = target.with_name(target.name + ".part")
        written = 0
        async with session.get(url) as response:
            response.raise_for_status()
            with open(partial, "wb") as handle:
                async for chunk in response.content.iter_chunked(self.chunk_size):
                    handle.write(chunk)
                    written += len(chunk)
        os.replace(partial, target)
        return written

    async def download(self, url: str, out_dir: Path, filename: Optional[str] = None) -> Path:
        """
        Download `url` into `out_dir`; returns the written path.

        Raises:
            DownloadError: 4xx response, or still failing after max_retries retries
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        target = out_dir / (filename or filename_for(url))
        last_error: Optional[Exception] = None
        status: Optional[int] = None

        for attempt in range(self.max_retries + 1):
            start_time = time.monotonic()
            try:
                await self.rate_limiter.acquire()
                self.stats["requests"] += 1
                written = await self._fetch_once(url, target)
                self.stats["bytes"] += written
                logger.info(f"Downloaded {url} -> {target} ({written} bytes, "
                            f"{time.monotonic() - start_time:.2f}s)")
                return target
            except (aiohttp.ClientError, asyncio.TimeoutError, OSError) as e:
                self.stats["failures"] += 1
                last_error = e
                target.with_name(target.name + ".part").unlink(missing_ok=True)
                if isinstance(e, aiohttp.ClientResponseError):
                    status = e.status
                    if 400 <= e.status < 500:
                        logger.error(f"Client error {e.status} for {url}, not retrying")
                        break
                if attempt < self.max_retries:
                    backoff = min(self.backoff_base * 2**attempt, MAX_BACKOFF)
                    logger.warning(f"Download failed, retrying in {backoff}s "
                                   f"(attempt {attempt + 1}/{self.max_retries + 1}): {e}")
                    await asyncio.sleep(backoff)

        raise DownloadError(url, str(last_error), status=status) from last_error

    async def download_all(self, urls: Sequence[str], out_dir: Path) -> List[Path]:
        """Concurrent downloads; results keep the order of `urls`."""
        return list(await asyncio.gather(*(self.download(u, out_dir) for u in urls)))


def fetch(urls: Sequence[str], out_dir: Path, download_config: Dict) -> List[Path]:
    """Blocking entry point for the CLI."""

    async def run() -> List[Path]:
        async with AnnotationDownloader.from_config(download_config) as downloader:
            return await downloader.download_all(urls, out_dir)

    return asyncio.run(run())
