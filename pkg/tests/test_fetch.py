import io

import numpy as np
import pytest
from PIL import Image

from landval.fetch import ConfigurationError, FetchConfig, FetchError, RateLimiter, TileFetcher
from tests.conftest import make_parcel


def png_bytes(value=90, side=64):
    px = np.full((side, side, 3), value, dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(px).save(buf, format="PNG")
    return buf.getvalue()


class FakeClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t

    def sleep(self, dt):
        assert dt >= 0
        self.t += dt


def make_fetcher(tmp_path, responses, rate=10.0, **cfg_kw):
    """responses: list of (status, body) served in order."""
    cfg = FetchConfig(api_key="k", cache_dir=tmp_path / "cache", side=64,
                      rate_limit_per_sec=rate, **cfg_kw)
    calls = []

    def http_get(url):
        calls.append(url)
        status, body = responses[min(len(calls) - 1, len(responses) - 1)]
        return status, body

    clock = FakeClock()
    fetcher = TileFetcher(cfg, http_get=http_get, clock=clock, sleep=clock.sleep)
    return fetcher, calls, clock


def test_fetch_then_cache_hit(tmp_path):
    fetcher, calls, _ = make_fetcher(tmp_path, [(200, png_bytes())])
    p = make_parcel("a", 13.7, 100.5, 1.0)
    t1 = fetcher.fetch_tile(p, "satellite")
    assert len(calls) == 1
    t2 = fetcher.fetch_tile(p, "satellite")
    assert len(calls) == 1  # served from cache, no network
    assert np.array_equal(t1.pixels, t2.pixels)


def test_missing_api_key_is_configuration_error(tmp_path, monkeypatch):
    monkeypatch.delenv("MAPS_API_KEY", raising=False)
    cfg = FetchConfig(cache_dir=tmp_path / "cache", side=64)
    fetcher = TileFetcher(cfg, http_get=lambda url: (200, png_bytes()))
    with pytest.raises(ConfigurationError):
        fetcher.fetch_tile(make_parcel("a", 13.7, 100.5, 1.0), "satellite")


def test_retry_after_500(tmp_path):
    fetcher, calls, clock = make_fetcher(tmp_path, [(500, b""), (200, png_bytes())])
    t = fetcher.fetch_tile(make_parcel("a", 13.7, 100.5, 1.0), "satellite")
    assert len(calls) == 2
    assert t.side == 64
    assert clock.t > 0  # backoff slept


def test_failure_after_retries_carries_status(tmp_path):
    fetcher, calls, _ = make_fetcher(tmp_path, [(503, b"")])
    with pytest.raises(FetchError) as exc:
        fetcher.fetch_tile(make_parcel("a", 13.7, 100.5, 1.0), "satellite")
    assert exc.value.status == 503
    assert len(calls) == 4  # initial + 3 retries


def test_cache_path_pure_function(tmp_path):
    cfg = FetchConfig(api_key="k", cache_dir=tmp_path, zoom=17, side=512)
    p1 = cfg.cache_path("abc", "satellite")
    assert p1 == cfg.cache_path("abc", "satellite")
    assert p1 != cfg.cache_path("abc", "segmented")
    assert p1 != FetchConfig(api_key="k", cache_dir=tmp_path, zoom=16, side=512).cache_path("abc", "satellite")
    assert p1 != FetchConfig(api_key="k", cache_dir=tmp_path, zoom=17, side=256).cache_path("abc", "satellite")


def test_url_template_filled(tmp_path):
    fetcher, calls, _ = make_fetcher(
        tmp_path, [(200, png_bytes())],
        url_template="http://x/{maptype}/{zoom}/{side}/{lat},{lon}?key={key}",
    )
    fetcher.fetch_tile(make_parcel("a", 13.75, 100.5, 1.0), "segmented")
    assert calls[0] == "http://x/roadmap/17/64/13.75,100.5?key=k"


def test_rate_limit_never_exceeded_in_any_window():
    clock = FakeClock()
    limiter = RateLimiter(5.0, clock=clock, sleep=clock.sleep)
    stamps = []
    for _ in range(23):
        limiter.acquire()
        stamps.append(clock.t)
        clock.t += 0.01  # requests arrive much faster than the limit
    stamps = np.asarray(stamps)
    for i in range(len(stamps)):
        in_window = np.sum((stamps >= stamps[i]) & (stamps < stamps[i] + 1.0))
        assert in_window <= 5
