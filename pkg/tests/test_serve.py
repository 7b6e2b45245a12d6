"""HTTP service contract: endpoints, validation, and concurrency."""

import concurrent.futures
import json
import math
import signal
import socket
import subprocess
import sys
import time
import urllib.error
import urllib.request

import pytest

from durastack.errors import ServiceError
from durastack.serve import DurastackService
from test_stack import FULL_PAYLOAD

RESPONSE_KEYS = {
    "predicted_minutes", "log_prediction_mean", "per_pipeline_log",
    "pipeline_spread", "imputed_fields", "model_version", "schema_version",
}


def http_get(base, path, headers=None):
    req = urllib.request.Request(base + path, headers=headers or {})
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, dict(resp.headers), resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, dict(exc.headers), exc.read()


def http_post(base, path, payload, raw=None):
    data = raw if raw is not None else json.dumps(payload).encode()
    req = urllib.request.Request(
        base + path, data=data,
        headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()


def json_payload():
    payload = dict(FULL_PAYLOAD)
    payload["asa"] = int(payload["asa"])
    return payload


@pytest.fixture(scope="module")
def static_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("static")
    (root / "index.html").write_text("<h1>duration calculator</h1>")
    (root / "app.js").write_text("console.log('ready');")
    return str(root)


@pytest.fixture(scope="module")
def service(model_path, static_dir):
    svc = DurastackService("127.0.0.1", 0, static_dir)
    svc.start()
    svc.load_model(model_path)
    host, port = svc.address
    yield svc, f"http://{host}:{port}"
    svc.shutdown()


class TestLifecycle:
    def test_responds_503_until_a_model_is_loaded(self, model_path):
        svc = DurastackService("127.0.0.1", 0)
        svc.start()
        host, port = svc.address
        base = f"http://{host}:{port}"
        try:
            status, _, body = http_get(base, "/api/v1/health")
            assert status == 503
            assert json.loads(body) == {"status": "loading"}
            status, _ = http_post(base, "/api/v1/predict", {})
            assert status == 503
            svc.load_model(model_path)
            status, _, body = http_get(base, "/api/v1/health")
            assert status == 200
            assert json.loads(body) == {"pipelines": 2, "status": "ok"}
        finally:
            svc.shutdown()

    def test_taken_port_is_reported(self, service):
        svc, base = service
        port = svc.address[1]
        with pytest.raises(ServiceError, match="cannot bind"):
            DurastackService("127.0.0.1", port)


class TestSchemaEndpoint:
    def test_every_predictor_is_described(self, service):
        _, base = service
        status, headers, body = http_get(base, "/api/v1/schema")
        assert status == 200
        doc = json.loads(body)
        assert len(doc["fields"]) == 16
        assert all("name" in f and "type" in f for f in doc["fields"])
        names = [f["name"] for f in doc["fields"]]
        assert "bmi" in names and "asa" in names
        assert not any("surgeon" in n for n in names)
        asa = [f for f in doc["fields"] if f["name"] == "asa"][0]
        assert asa["type"] == "enum"
        assert asa["levels"] == ["1", "2", "3", "4"]

    def test_etag_enables_caching(self, service):
        _, base = service
        status, headers, body = http_get(base, "/api/v1/schema")
        etag = headers.get("ETag")
        assert etag
        again_status, again_headers, again_body = http_get(
            base, "/api/v1/schema")
        assert again_body == body and again_headers.get("ETag") == etag
        status, _, body = http_get(base, "/api/v1/schema",
                                   {"If-None-Match": etag})
        assert status == 304 and body == b""


class TestModelEndpoint:
    def test_describes_the_loaded_model(self, service):
        _, base = service
        status, _, body = http_get(base, "/api/v1/model")
        assert status == 200
        doc = json.loads(body)
        assert "Research use only" in doc["disclaimer"]
        assert doc["pipelines"] == 2
        assert "seed" in doc["provenance"]


class TestPredictEndpoint:
    def test_empty_request_imputes_everything(self, service):
        _, base = service
        status, body = http_post(base, "/api/v1/predict", {"seed": 42})
        assert status == 200
        doc = json.loads(body)
        assert set(doc) == RESPONSE_KEYS
        assert len(doc["imputed_fields"]) == 16
        assert doc["predicted_minutes"] == pytest.approx(
            math.exp(doc["log_prediction_mean"]), rel=1e-9)

    def test_missing_bmi_is_imputed_and_reported(self, service):
        _, base = service
        payload = json_payload()
        del payload["bmi"]
        status, body = http_post(base, "/api/v1/predict",
                                 dict(payload, seed=7))
        doc = json.loads(body)
        assert status == 200
        assert doc["imputed_fields"] == ["bmi"]
        assert len(doc["per_pipeline_log"]) == 2
        spread = max(doc["per_pipeline_log"]) - min(doc["per_pipeline_log"])
        assert doc["pipeline_spread"] == pytest.approx(spread, abs=1e-15)

    def test_complete_request_imputes_nothing(self, service):
        _, base = service
        payload = dict(json_payload(), bmi=24.0, seed=7)
        status, body = http_post(base, "/api/v1/predict", payload)
        assert status == 200
        assert json.loads(body)["imputed_fields"] == []

    def test_seed_controls_the_draw(self, service):
        _, base = service
        payload = dict(json_payload(), seed=42)
        del payload["bmi"]
        _, body_a = http_post(base, "/api/v1/predict", payload)
        _, body_b = http_post(base, "/api/v1/predict", payload)
        assert body_a == body_b
        _, body_c = http_post(base, "/api/v1/predict",
                              dict(payload, seed=43))
        assert body_c != body_a
        unseeded = dict(payload)
        del unseeded["seed"]
        draws = {http_post(base, "/api/v1/predict", unseeded)[1]
                 for _ in range(3)}
        assert len(draws) > 1

    def test_unknown_field_is_rejected(self, service):
        _, base = service
        payload = dict(json_payload(), surgeon_id="S17")
        status, body = http_post(base, "/api/v1/predict", payload)
        assert status == 400
        errors = json.loads(body)["errors"]
        assert any(e["field"] == "surgeon_id" for e in errors)

    def test_bad_values_are_rejected(self, service):
        _, base = service
        status, body = http_post(base, "/api/v1/predict",
                                 dict(json_payload(), asa=9))
        assert status == 400
        assert any(e["field"] == "asa"
                   for e in json.loads(body)["errors"])
        status, _ = http_post(base, "/api/v1/predict",
                              dict(json_payload(), bmi="chunky"))
        assert status == 400
        status, body = http_post(base, "/api/v1/predict", {"seed": "abc"})
        assert status == 400
        assert json.loads(body)["errors"][0]["field"] == "seed"

    def test_malformed_bodies_are_rejected(self, service):
        _, base = service
        status, body = http_post(base, "/api/v1/predict", None,
                                 raw=b"{not json")
        assert status == 400
        assert "JSON object" in json.loads(body)["errors"][0]["message"]
        status, _ = http_post(base, "/api/v1/predict", None, raw=b"[1, 2]")
        assert status == 400

    def test_hundred_concurrent_seeded_requests_agree(self, service):
        _, base = service
        raw = json.dumps(dict(json_payload(), seed=11)).encode()

        def one(_):
            return http_post(base, "/api/v1/predict", None, raw=raw)[1]

        with concurrent.futures.ThreadPoolExecutor(max_workers=20) as pool:
            bodies = set(pool.map(one, range(100)))
        assert len(bodies) == 1


class TestStaticFiles:
    def test_index_and_assets_are_served(self, service):
        _, base = service
        status, headers, body = http_get(base, "/")
        assert status == 200 and b"duration calculator" in body
        assert headers["Content-Type"].startswith("text/html")
        status, headers, body = http_get(base, "/app.js")
        assert status == 200 and b"ready" in body

    def test_traversal_and_unknown_paths_are_404(self, service):
        _, base = service
        assert http_get(base, "/../etc/passwd")[0] == 404
        assert http_get(base, "/missing.css")[0] == 404
        assert http_get(base, "/api/v1/nothing")[0] == 404
        assert http_post(base, "/api/v1/nothing", {})[0] == 404


class TestCliServe:
    def test_serves_and_stops_cleanly(self, model_path):
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()
        proc = subprocess.Popen(
            [sys.executable, "-m", "durastack.cli", "serve",
             "--model", model_path, "--port", str(port)],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        base = f"http://127.0.0.1:{port}"
        try:
            deadline = time.time() + 30
            up = False
            while time.time() < deadline:
                try:
                    status, _, _ = http_get(base, "/api/v1/health")
                    if status == 200:
                        up = True
                        break
                except Exception:
                    time.sleep(0.2)
            assert up, proc.stderr
            proc.send_signal(signal.SIGINT)
            assert proc.wait(timeout=15) == 0
        finally:
            if proc.poll() is None:
                proc.kill()

    def test_bad_artifact_exits_with_data_code(self, tmp_path):
        done = subprocess.run(
            [sys.executable, "-m", "durastack.cli", "serve",
             "--model", str(tmp_path / "nope.dsm"), "--port", "0"],
            capture_output=True, text=True)
        assert done.returncode == 3
        assert "cannot read artifact" in done.stderr
