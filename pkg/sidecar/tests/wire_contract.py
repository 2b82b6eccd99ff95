"""Golden wire-protocol contract checks, shared by every backend server.

``run_fixture`` takes a transport-agnostic ``call(method, path, body) ->
(status, payload)`` function, so the same fixtures validate the in-process
reference handlers, the threaded reference server over HTTP, and any model
sidecar speaking the protocol.
"""

from __future__ import annotations

import base64
import io
import json
from pathlib import Path

from PIL import Image

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "wire"


def load_fixtures():
    return {p.name: json.loads(p.read_text()) for p in sorted(FIXTURE_DIR.glob("*.json"))}


def _png_size(b64_data: str) -> tuple[int, int]:
    raw = base64.b64decode(b64_data, validate=True)
    with Image.open(io.BytesIO(raw)) as im:
        return im.width, im.height


def run_fixture(name: str, doc: dict, call) -> None:
    endpoint = doc["endpoint"]
    expect = doc["expect"]
    method = "GET" if endpoint == "/v1/health" else "POST"
    status, payload = call(method, endpoint, doc["request"])

    if expect.get("error"):
        assert status == 400, f"{name}: expected a 400, got {status} {payload}"
        assert "error" in payload
        return

    assert status == 200, f"{name}: expected 200, got {status} {payload}"
    if endpoint == "/v1/health":
        assert payload["status"] in ("ok", "degraded")
        assert isinstance(payload.get("model_info"), dict)
    elif endpoint == "/v1/inpaint":
        width, height = _png_size(payload["image_png_b64"])
        assert (width, height) == (expect["width"], expect["height"])
        if expect.get("identical_to_input"):
            assert _decode(payload["image_png_b64"]) == _decode(
                doc["request"]["image_png_b64"]
            )
    elif endpoint == "/v1/detect":
        dets = payload["detections"]
        assert isinstance(dets, list)
        for det in dets:
            assert len(det["bbox"]) == 4
            assert isinstance(det["category_id"], int)
            assert expect.get("min_score", 0.0) <= det["score"] <= 1.0
        scores = [d["score"] for d in dets]
        assert scores == sorted(scores, reverse=True)
    elif endpoint == "/v1/lpips":
        value = payload["lpips"]
        assert isinstance(value, (int, float)) and value >= 0.0
        if expect.get("identical_inputs"):
            assert value == 0.0
    else:
        raise AssertionError(f"fixture {name} names unknown endpoint {endpoint}")


def _decode(b64_data: str) -> bytes:
    raw = base64.b64decode(b64_data, validate=True)
    with Image.open(io.BytesIO(raw)) as im:
        return im.convert("RGB").tobytes()
