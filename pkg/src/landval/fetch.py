"""Static-map tile client with on-disk caching, rate limiting and retries.

The whole pipeline runs without this module when tiles are synthetic or the
cache is pre-populated; network access is strictly optional.
"""

from __future__ import annotations

import os
import threading
import time
import urllib.error
import urllib.request
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from landval.data import LandParcel
from landval.tiles import Tile

API_KEY_ENV = "MAPS_API_KEY"

DEFAULT_URL_TEMPLATE = (
    "https://maps.example.com/staticmap?center={lat},{lon}"
    "&zoom={zoom}&size={side}x{side}&maptype={maptype}&key={key}"
)


class ConfigurationError(RuntimeError):
    """Missing API key or otherwise unusable fetch configuration."""


class FetchError(RuntimeError):
    """HTTP fetch failed after all retries."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


@dataclass
class FetchConfig:
    api_key: str | None = None  # falls back to the MAPS_API_KEY env var
    url_template: str = DEFAULT_URL_TEMPLATE
    zoom: int = 17
    side: int = 512
    kinds: tuple[str, ...] = ("satellite", "segmented")
    # Provider maptype per tile kind; "segmented" maps to any styled roadmap.
    maptypes: dict[str, str] = field(
        default_factory=lambda: {"satellite": "satellite", "segmented": "roadmap"}
    )
    rate_limit_per_sec: float = 10.0
    cache_dir: Path = Path("tile_cache")
    max_retries: int = 3
    backoff_base_s: float = 0.5

    def __post_init__(self):
        self.cache_dir = Path(self.cache_dir)
        if self.rate_limit_per_sec <= 0:
            raise ValueError("rate_limit_per_sec must be positive")
        if self.side > 640:
            raise ValueError("side exceeds provider maximum (640)")

    def resolved_key(self) -> str | None:
        return self.api_key if self.api_key is not None else os.environ.get(API_KEY_ENV)

    def store_root(self) -> Path:
        """Directory whose layout matches the tile store (<kind>/<id>.png)."""
        return self.cache_dir / f"z{self.zoom}_s{self.side}"

    def cache_path(self, parcel_id: str, kind: str) -> Path:
        # Pure function of (parcel_id, kind, zoom, side).
        return self.store_root() / kind / f"{parcel_id}.png"


class RateLimiter:
    """Sliding-window limiter: at most ``rate`` dispatches per 1-second window.

    Thread-safe; ``clock`` and ``sleep`` are injectable for tests.
    """

    def __init__(
        self,
        rate_per_sec: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if rate_per_sec <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate_per_sec
        self.clock = clock
        self.sleep = sleep
        self._events: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self.clock()
                while self._events and now - self._events[0] >= 1.0:
                    self._events.popleft()
                if len(self._events) < self.rate:
                    self._events.append(now)
                    return
                wait = self._events[0] + 1.0 - now
                if wait > 0:
                    self.sleep(wait)
                else:
                    # Rounding left an expired event behind; drop it so the
                    # loop always makes progress.
                    self._events.popleft()


def _default_http_get(url: str, timeout_s: float = 30.0) -> tuple[int, bytes]:
    try:
        with urllib.request.urlopen(url, timeout=timeout_s) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, b""


class TileFetcher:
    """Shareable fetch client; dispatch is serialized through the limiter."""

    def __init__(
        self,
        cfg: FetchConfig,
        http_get: Callable[[str], tuple[int, bytes]] | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.cfg = cfg
        self.http_get = http_get or _default_http_get
        self.sleep = sleep
        self.limiter = RateLimiter(cfg.rate_limit_per_sec, clock=clock, sleep=sleep)
        self.network_calls = 0

    def _url(self, p: LandParcel, kind: str, key: str) -> str:
        return self.cfg.url_template.format(
            lat=p.lat,
            lon=p.lon,
            zoom=self.cfg.zoom,
            side=self.cfg.side,
            maptype=self.cfg.maptypes.get(kind, kind),
            key=key,
        )

    def fetch_tile(self, p: LandParcel, kind: str) -> Tile:
        """Return the tile for (parcel, kind), from cache when possible.

        A cache hit never touches the network. On miss the request is
        throttled, retried up to cfg.max_retries times with exponential
        backoff, and the PNG bytes are written to the cache atomically.
        """
        path = self.cfg.cache_path(p.id, kind)
        if path.exists():
            return self._load(path, p.id, kind)

        key = self.cfg.resolved_key()
        if not key:
            raise ConfigurationError(
                f"no API key: set {API_KEY_ENV} or FetchConfig.api_key"
            )
        url = self._url(p, kind, key)
        last_status: int | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt > 0:
                self.sleep(self.cfg.backoff_base_s * 2 ** (attempt - 1))
            self.limiter.acquire()
            self.network_calls += 1
            try:
                status, body = self.http_get(url)
            except OSError as exc:
                last_status = None
                if attempt == self.cfg.max_retries:
                    raise FetchError(f"network error fetching {kind} tile for {p.id}: {exc}") from exc
                continue
            if status == 200 and body:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp")
                tmp.write_bytes(body)
                tmp.replace(path)
                return self._load(path, p.id, kind)
            last_status = status
        raise FetchError(
            f"fetch failed for ({p.id}, {kind}) after {self.cfg.max_retries} retries"
            f" (last status {last_status})",
            status=last_status,
        )

    def _load(self, path: Path, parcel_id: str, kind: str) -> Tile:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
        return Tile(parcel_id=parcel_id, kind=kind, pixels=pixels)


def fetch_tile(
    cfg: FetchConfig,
    p: LandParcel,
    kind: str,
    http_get: Callable[[str], tuple[int, bytes]] | None = None,
) -> Tile:
    return TileFetcher(cfg, http_get=http_get).fetch_tile(p, kind)
