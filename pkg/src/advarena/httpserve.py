"""HTTP adapter for the decision oracle.

Three endpoints, one tensor format:

    GET  /health   -> 200 "ok"
    GET  /meta     -> 200 "H W C K"
    POST /predict  -> 200 "<decimal label>" | 400 malformed input
                      | 429 budget exhausted | 503/504 model error/timeout

The same server fronts either a bare model (unmetered, for model
submissions; the referee meters client-side) or a referee-owned
QueryMeter (for external attack processes, which must see the budget
enforced server-side).
"""

from __future__ import annotations

import http.client
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlparse

from .images import Image
from .oracle import DecisionOracle, QueryMeter, Verdict, raw_verdict
from .tensorio import TensorFormatError, read_tensor, write_tensor

__all__ = ["OracleServer", "serve_model", "serve_meter", "HttpOracle"]

_VERDICT_STATUS = {
    "invalid_input": 400,
    "budget_exhausted": 429,
    "model_error": 503,
    "timeout": 504,
}

MAX_BODY = 1 << 30


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # quiet by default
        pass

    def _reply(self, status: int, body: str) -> None:
        payload = body.encode("ascii")
        self.send_response(status)
        self.send_header("Content-Type", "text/plain")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        if self.path == "/health":
            self._reply(200, "ok")
        elif self.path == "/meta":
            h, w, c = self.server.oracle_shape
            self._reply(200, f"{h} {w} {c} {self.server.oracle_classes}")
        else:
            self._reply(404, "not found")

    def do_POST(self):
        if self.path != "/predict":
            self._reply(404, "not found")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            self._reply(400, "bad content-length")
            return
        if not 0 < length <= MAX_BODY:
            self._reply(400, "bad content-length")
            return
        body = self.rfile.read(length)
        try:
            image = read_tensor(body)
        except TensorFormatError as exc:
            self._reply(400, f"malformed tensor: {exc.code}")
            return
        verdict = self.server.verdict_fn(image)
        if verdict.ok:
            self._reply(200, str(verdict.label))
        else:
            self._reply(_VERDICT_STATUS[verdict.error], verdict.error)


class OracleServer:
    """Threaded HTTP server around a verdict function; use as a context
    manager or call close() explicitly."""

    def __init__(self, verdict_fn, shape, num_classes,
                 host: str = "127.0.0.1", port: int = 0):
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.daemon_threads = True
        self._httpd.verdict_fn = verdict_fn
        self._httpd.oracle_shape = tuple(shape)
        self._httpd.oracle_classes = num_classes
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def serve_model(model: DecisionOracle, host: str = "127.0.0.1",
                port: int = 0) -> OracleServer:
    """Expose a bare model; budget enforcement stays with the caller."""
    return OracleServer(lambda img: raw_verdict(model, img),
                        model.shape, model.num_classes, host, port)


def serve_meter(meter: QueryMeter, host: str = "127.0.0.1",
                port: int = 0) -> OracleServer:
    """Expose a referee-owned meter to an external attack process."""
    return OracleServer(meter.predict, meter.shape, meter.num_classes,
                        host, port)


class HttpOracle(DecisionOracle):
    """Referee-side client for an HTTP model submission.

    predict() raises on any non-200 response or network trouble, which
    the metering layer absorbs into model_error / timeout verdicts.
    """

    def __init__(self, url: str, timeout: float = 5.0):
        parsed = urlparse(url)
        if parsed.scheme != "http" or not parsed.hostname:
            raise ValueError(f"expected an http:// URL, got {url!r}")
        self._host = parsed.hostname
        self._port = parsed.port or 80
        self._timeout = timeout
        meta = self._request("GET", "/meta").split()
        if len(meta) != 4:
            raise ValueError(f"bad /meta response: {meta!r}")
        h, w, c, k = (int(v) for v in meta)
        self.shape = (h, w, c)
        self.num_classes = k

    def _request(self, method: str, path: str, body: bytes | None = None) -> str:
        conn = http.client.HTTPConnection(self._host, self._port,
                                          timeout=self._timeout)
        try:
            conn.request(method, path, body=body)
            response = conn.getresponse()
            text = response.read().decode("ascii", "replace")
            if response.status != 200:
                if response.status == 504 or text == "timeout":
                    raise TimeoutError(f"{path} -> {response.status} {text}")
                raise RuntimeError(f"{path} -> {response.status} {text}")
            return text
        finally:
            conn.close()

    def healthy(self) -> bool:
        try:
            return self._request("GET", "/health") == "ok"
        except Exception:
            return False

    def predict(self, image: Image) -> int:
        return int(self._request("POST", "/predict", write_tensor(image)))


def metered_http_predict(url: str, image: Image,
                         timeout: float = 5.0) -> Verdict:
    """One predict call against a server-metered oracle URL, mapping HTTP
    statuses back to verdicts. Used by attack processes run out-of-tree."""
    parsed = urlparse(url)
    conn = http.client.HTTPConnection(parsed.hostname, parsed.port or 80,
                                      timeout=timeout)
    try:
        conn.request("POST", "/predict", body=write_tensor(image))
        response = conn.getresponse()
        text = response.read().decode("ascii", "replace")
    except TimeoutError:
        return Verdict(error="timeout")
    except OSError:
        return Verdict(error="model_error")
    finally:
        conn.close()
    if response.status == 200:
        return Verdict(label=int(text))
    for error, status in _VERDICT_STATUS.items():
        if response.status == status:
            return Verdict(error=error)
    return Verdict(error="model_error")
