import json
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from dualcloak import (
    MockVerificationServer,
    ToyLinearEmbedder,
    VerificationServiceClient,
    api_confidence,
    cosine_similarity,
)
from dualcloak.errors import ProtocolError, TransportError
from dualcloak.service import mean_api_confidence
from conftest import margin_image


@pytest.fixture(scope="module")
def mock_service():
    emb = ToyLinearEmbedder(seed=40)
    with MockVerificationServer(emb) as server:
        yield emb, server, VerificationServiceClient(server.url, timeout=5, retries=1)


class TestRoundTrip:
    def test_identical_images_near_hundred(self, mock_service):
        _, _, client = mock_service
        img = np.round(margin_image((16, 16, 3), seed=1) * 255) / 255
        assert client.confidence(img, img) == pytest.approx(100.0, abs=1e-6)

    def test_matches_local_score_modulo_quantization(self, mock_service):
        emb, server, client = mock_service
        a = np.round(margin_image((16, 16, 3), seed=2) * 255) / 255
        b = np.round(margin_image((16, 16, 3), seed=3) * 255) / 255
        remote = client.confidence(a, b)
        local = 100.0 * max(0.0, cosine_similarity(emb.embed(a), emb.embed(b)))
        assert remote == pytest.approx(local, abs=1e-9)

    def test_api_confidence_wrapper(self, mock_service):
        _, _, client = mock_service
        img = margin_image((16, 16, 3), seed=4)
        assert api_confidence(client, img, img) == client.confidence(img, img)

    def test_mean_api_confidence(self, mock_service):
        _, _, client = mock_service
        a = margin_image((16, 16, 3), seed=5)
        b = margin_image((16, 16, 3), seed=6)
        pairs = [(a, a), (a, b)]
        values = [client.confidence(x, y) for x, y in pairs]
        assert mean_api_confidence(client, pairs) == pytest.approx(np.mean(values))
        with pytest.raises(ValueError):
            mean_api_confidence(client, [])

    def test_concurrent_requests(self, mock_service):
        _, _, client = mock_service
        imgs = [margin_image((16, 16, 3), seed=i) for i in range(8)]
        with ThreadPoolExecutor(max_workers=4) as pool:
            values = list(pool.map(lambda im: client.confidence(im, imgs[0]), imgs))
        assert len(values) == 8
        assert all(0.0 <= v <= 100.0 for v in values)


class TestServerErrors:
    def test_unknown_endpoint_is_protocol_error(self, mock_service):
        _, server, _ = mock_service
        bad = VerificationServiceClient(server.url + "/nope", timeout=5, retries=0)
        with pytest.raises(ProtocolError, match="404"):
            bad.confidence(margin_image((8, 8, 3)), margin_image((8, 8, 3)))

    def test_unreachable_host_is_transport_error(self):
        client = VerificationServiceClient("http://127.0.0.1:9", timeout=0.2, retries=2)
        with pytest.raises(TransportError) as err:
            client.confidence(margin_image((8, 8, 3)), margin_image((8, 8, 3)))
        assert err.value.retries == 2

    def test_bad_payload_is_rejected_with_400(self, mock_service):
        import requests

        _, server, _ = mock_service
        resp = requests.post(server.url + "/verify", json={"image_a": "!!"}, timeout=5)
        assert resp.status_code == 400


def _fixed_response_server(payload: dict, status: int = 200):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_POST(self):
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    host, port = server.server_address[:2]
    return server, f"http://{host}:{port}"


class TestClientValidation:
    def test_out_of_range_confidence(self):
        server, url = _fixed_response_server({"confidence": 150.0})
        try:
            client = VerificationServiceClient(url, timeout=5, retries=0)
            with pytest.raises(ProtocolError, match="outside"):
                client.confidence(margin_image((8, 8, 3)), margin_image((8, 8, 3)))
        finally:
            server.shutdown()
            server.server_close()

    def test_missing_field_is_protocol_error(self):
        server, url = _fixed_response_server({"score": 10.0})
        try:
            client = VerificationServiceClient(url, timeout=5, retries=0)
            with pytest.raises(ProtocolError, match="malformed"):
                client.confidence(margin_image((8, 8, 3)), margin_image((8, 8, 3)))
        finally:
            server.shutdown()
            server.server_close()

    def test_http_error_not_retried_as_transport(self):
        server, url = _fixed_response_server({"error": "down"}, status=503)
        try:
            client = VerificationServiceClient(url, timeout=5, retries=3)
            with pytest.raises(ProtocolError, match="503"):
                client.confidence(margin_image((8, 8, 3)), margin_image((8, 8, 3)))
        finally:
            server.shutdown()
            server.server_close()
