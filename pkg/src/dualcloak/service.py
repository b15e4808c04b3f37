"""Verification-service client and a local mock server.

The wire contract is one endpoint: POST /verify with a JSON body
{"image_a": <base64 PNG>, "image_b": <base64 PNG>} returning
{"confidence": <float in [0, 100]>}. The mock server scores
100 * max(0, cos) with a held-out embedder, mimicking commercial
verification APIs that return a match confidence percentage.
"""

from __future__ import annotations

import base64
import binascii
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import requests

from .embedding import FaceEmbedder, cosine_similarity
from .errors import ProtocolError, TransportError
from .imaging import image_from_png_bytes, image_to_png_bytes

__all__ = [
    "MockVerificationServer",
    "VerificationServiceClient",
    "api_confidence",
    "mean_api_confidence",
]


def _encode_field(img: np.ndarray) -> str:
    return base64.b64encode(image_to_png_bytes(img)).decode("ascii")


class VerificationServiceClient:
    """Small requests-based client with bounded retries."""

    def __init__(self, base_url: str, timeout: float = 10.0, retries: int = 2,
                 session=None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self._session = session or requests.Session()

    def confidence(self, image_a: np.ndarray, image_b: np.ndarray) -> float:
        body = {"image_a": _encode_field(image_a), "image_b": _encode_field(image_b)}
        url = self.base_url + "/verify"
        attempts = self.retries + 1
        last = None
        for _ in range(attempts):
            try:
                resp = self._session.post(url, json=body, timeout=self.timeout)
            except requests.RequestException as exc:
                last = exc
                continue
            if resp.status_code != 200:
                raise ProtocolError(
                    f"verification service returned HTTP {resp.status_code}: "
                    f"{resp.text[:200]}"
                )
            try:
                payload = resp.json()
                value = float(payload["confidence"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ProtocolError(
                    f"malformed verification response: {resp.text[:200]}"
                ) from exc
            if not 0.0 <= value <= 100.0:
                raise ProtocolError(f"confidence {value} outside [0, 100]")
            return value
        raise TransportError(
            f"verification service unreachable after {attempts} attempts: {last}",
            retries=self.retries,
        )


def api_confidence(client: VerificationServiceClient, image_a: np.ndarray,
                   image_b: np.ndarray) -> float:
    return client.confidence(image_a, image_b)


def mean_api_confidence(client: VerificationServiceClient, pairs) -> float:
    values = [client.confidence(a, b) for a, b in pairs]
    if not values:
        raise ValueError("no pairs to score")
    return float(np.mean(values))


class MockVerificationServer:
    """Threaded local stand-in for a commercial verification API."""

    def __init__(self, embedder: FaceEmbedder, host: str = "127.0.0.1",
                 port: int = 0):
        self._embedder = embedder
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _reply(self, status: int, payload: dict):
                body = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_POST(self):
                if self.path != "/verify":
                    self._reply(404, {"error": "unknown endpoint"})
                    return
                try:
                    length = int(self.headers.get("Content-Length", "0"))
                    payload = json.loads(self.rfile.read(length))
                    img_a = image_from_png_bytes(
                        base64.b64decode(payload["image_a"], validate=True))
                    img_b = image_from_png_bytes(
                        base64.b64decode(payload["image_b"], validate=True))
                except (KeyError, ValueError, TypeError, binascii.Error) as exc:
                    self._reply(400, {"error": f"bad request: {exc}"})
                    return
                try:
                    value = outer.score(img_a, img_b)
                except Exception as exc:
                    self._reply(500, {"error": str(exc)})
                    return
                self._reply(200, {"confidence": value})

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True)

    def score(self, image_a: np.ndarray, image_b: np.ndarray) -> float:
        cos = cosine_similarity(self._embedder.embed(image_a),
                                self._embedder.embed(image_b))
        return 100.0 * max(0.0, cos)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockVerificationServer":
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
