"""HTTP transport layer with retries and offline replay fixtures.

Everything network-facing in the toolkit goes through a Transport object so
tests and `--offline` runs never touch the wire.
"""

import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FixtureMissing, NetworkError

log = logging.getLogger(__name__)

RETRY_ATTEMPTS = 3
RETRY_BACKOFF_S = 0.5


@dataclass
class Response:
    status: int
    body: bytes


class TransportError(Exception):
    """Connection-level failure; retryable."""


class HttpTransport:
    """Live transport backed by `requests`."""

    def __init__(self, timeout_s=60.0):
        self.timeout_s = timeout_s

    def request(self, method, url, data=None, headers=None):
        import requests

        try:
            r = requests.request(method, url, data=data, headers=headers, timeout=self.timeout_s)
        except requests.RequestException as e:
            raise TransportError(str(e)) from e
        return Response(status=r.status_code, body=r.content)


@dataclass
class ReplayTransport:
    """Scripted transport for tests: pops one queued response per request.

    A queued entry may be a Response, an int status (empty body), or an
    exception instance to raise. All requests are recorded in `calls`.
    """

    queue: list = field(default_factory=list)
    calls: list = field(default_factory=list)

    def request(self, method, url, data=None, headers=None):
        self.calls.append((method, url, data))
        if not self.queue:
            raise AssertionError(f"ReplayTransport exhausted at {method} {url}")
        item = self.queue.pop(0)
        if isinstance(item, Exception):
            raise item
        if isinstance(item, int):
            return Response(status=item, body=b"")
        return item


_TILE_RE = re.compile(r"(\d+)/(\d+)/(\d+)(?:\.\w+)?(?:\?.*)?$")


class OfflineFixtureTransport:
    """Serves recorded fixtures from a directory; never touches the network.

    POST requests (Overpass) resolve to `<dir>/overpass_block.json`.
    GET tile requests resolve z/x/y from the URL tail to
    `<dir>/tiles/<z>/<x>/<y>.png`.
    """

    def __init__(self, fixture_dir):
        self.fixture_dir = Path(fixture_dir)
        self.calls = []

    def request(self, method, url, data=None, headers=None):
        self.calls.append((method, url, data))
        if method.upper() == "POST":
            path = self.fixture_dir / "overpass_block.json"
        else:
            m = _TILE_RE.search(url)
            if not m:
                raise FixtureMissing(f"cannot map offline URL to a fixture: {url}")
            z, x, y = m.groups()
            path = self.fixture_dir / "tiles" / z / x / f"{y}.png"
        if not path.exists():
            raise FixtureMissing(f"offline fixture not found: {path}")
        return Response(status=200, body=path.read_bytes())


def request_with_retry(transport, method, url, data=None, headers=None,
                       attempts=RETRY_ATTEMPTS, backoff_s=RETRY_BACKOFF_S, sleep=time.sleep):
    """Issue a request, retrying transient failures with exponential backoff.

    Transient = TransportError or HTTP 5xx/429. Raises NetworkError once
    attempts are exhausted; non-transient HTTP errors fail immediately.
    """
    last = None
    for attempt in range(attempts):
        if attempt:
            sleep(backoff_s * (2 ** (attempt - 1)))
        try:
            resp = transport.request(method, url, data=data, headers=headers)
        except TransportError as e:
            last = f"connection error: {e}"
            log.warning("attempt %d/%d failed: %s", attempt + 1, attempts, last)
            continue
        if resp.status == 200:
            return resp
        if resp.status >= 500 or resp.status == 429:
            last = f"HTTP {resp.status}"
            log.warning("attempt %d/%d failed: %s", attempt + 1, attempts, last)
            continue
        raise NetworkError(f"{method} {url}: HTTP {resp.status}")
    raise NetworkError(f"{method} {url}: giving up after {attempts} attempts ({last})")
