"""Wire protocol shared with model sidecars: HTTP, JSON bodies, base64 PNG images.

Endpoints:
    POST /v1/inpaint {image_png_b64, mask_png_b64, prompt, seed, request_id} -> {image_png_b64}
    POST /v1/detect  {image_png_b64, score_threshold, request_id} -> {detections: [...]}
    POST /v1/lpips   {image_a_png_b64, image_b_png_b64, request_id} -> {lpips}
    GET  /v1/health  -> {status, model_info}

Mask PNG encoding is Gray8: 0 = keep, 255 = scrub.

Detect requests may carry an optional ``image_id`` extension field; servers
backed by replay fixtures key on it and model-backed servers ignore it.

This module provides the codec plus request handlers that serve the reference
backends, so the remote client and any sidecar can be exercised against the
same golden fixtures.
"""

from __future__ import annotations

import base64
import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from .backends import DetectBackend, InpaintBackend, InpaintRequest, DEFAULT_PROMPT
from .errors import ProtocolViolationError
from .imaging import BinaryMask, ImageBuffer


def image_to_b64(image: ImageBuffer) -> str:
    buf = io.BytesIO()
    image.to_pil().save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def mask_to_b64(mask: BinaryMask) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.where(mask.bits, 255, 0).astype(np.uint8), mode="L").save(
        buf, format="PNG"
    )
    return base64.b64encode(buf.getvalue()).decode("ascii")


def b64_to_image(data: str) -> ImageBuffer:
    try:
        raw = base64.b64decode(data, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            return ImageBuffer.from_pil(im)
    except Exception as e:
        raise ProtocolViolationError(f"payload is not a valid base64 PNG image: {e}") from None


def b64_to_mask(data: str) -> BinaryMask:
    try:
        raw = base64.b64decode(data, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
        return BinaryMask(arr >= 128)
    except Exception as e:
        raise ProtocolViolationError(f"payload is not a valid base64 PNG mask: {e}") from None


class BadRequest(Exception):
    """Client-side protocol mistake; maps to HTTP 400."""


def _require(body: dict, key: str):
    if key not in body:
        raise BadRequest(f"missing required field '{key}'")
    return body[key]


def handle_inpaint(body: dict, backend: InpaintBackend) -> dict:
    image = b64_to_image(_require(body, "image_png_b64"))
    mask = b64_to_mask(_require(body, "mask_png_b64"))
    req = InpaintRequest(
        image=image,
        mask=mask,
        prompt=str(body.get("prompt", DEFAULT_PROMPT)),
        seed=int(body.get("seed", 0)),
    )
    return {"image_png_b64": image_to_b64(backend.inpaint(req))}


def handle_detect(body: dict, backend: DetectBackend) -> dict:
    image = b64_to_image(_require(body, "image_png_b64"))
    threshold = float(body.get("score_threshold", 0.0))
    image_id = body.get("image_id")
    dets = backend.detect(
        image, threshold, image_id=int(image_id) if image_id is not None else None
    )
    return {
        "detections": [
            {
                "bbox": d.bbox.as_list(),
                "category_id": d.category_id,
                "score": d.score,
            }
            for d in dets
        ]
    }


def handle_lpips(body: dict, backend: InpaintBackend) -> dict:
    a = b64_to_image(_require(body, "image_a_png_b64"))
    b = b64_to_image(_require(body, "image_b_png_b64"))
    return {"lpips": float(backend.lpips(a, b))}


def handle_health(model_info: dict) -> dict:
    return {"status": "ok", "model_info": model_info}


class ReferenceProtocolServer:
    """Threaded local HTTP server exposing the reference backends over the wire
    protocol. Used to exercise the remote client end to end and as a stand-in
    for a model sidecar."""

    def __init__(
        self,
        inpainter: InpaintBackend,
        detector: DetectBackend | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.inpainter = inpainter
        self.detector = detector
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # quiet test output
                pass

            def _send(self, code: int, payload: dict):
                body = json.dumps(payload).encode("utf-8")
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path == "/v1/health":
                    info = {"inpainter": server.inpainter.name}
                    if server.detector is not None:
                        info["detector"] = server.detector.name
                    self._send(200, handle_health(info))
                else:
                    self._send(404, {"error": f"unknown path {self.path}"})

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length))
                except json.JSONDecodeError:
                    self._send(400, {"error": "request body is not valid JSON"})
                    return
                try:
                    if self.path == "/v1/inpaint":
                        self._send(200, handle_inpaint(body, server.inpainter))
                    elif self.path == "/v1/detect":
                        if server.detector is None:
                            self._send(404, {"error": "no detector configured"})
                        else:
                            self._send(200, handle_detect(body, server.detector))
                    elif self.path == "/v1/lpips":
                        self._send(200, handle_lpips(body, server.inpainter))
                    else:
                        self._send(404, {"error": f"unknown path {self.path}"})
                except (BadRequest, ProtocolViolationError) as e:
                    self._send(400, {"error": str(e)})
                except Exception as e:  # surface backend faults as 500s
                    self._send(500, {"error": str(e)})

        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "ReferenceProtocolServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self) -> "ReferenceProtocolServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
