"""FastAPI application implementing the roar-scrub wire protocol.

Endpoints mirror the protocol exactly: JSON bodies, base64 PNG images, Gray8
masks with 0 = keep and 255 = scrub. Malformed requests get a 400 with a
machine-readable reason; disabled endpoints answer 404; model faults answer
500. Health reports "degraded" whenever any enabled model runs on a fallback.
"""

from __future__ import annotations

import json
import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__
from .codec import DecodeError, b64_to_mask, b64_to_rgb, rgb_to_b64
from .config import SidecarConfig
from .models import DetectService, InpaintService, LpipsService

logger = logging.getLogger(__name__)


class BadRequest(Exception):
    pass


def _require(body: dict, key: str):
    if key not in body:
        raise BadRequest(f"missing required field '{key}'")
    return body[key]


async def _json_body(request: Request) -> dict:
    try:
        body = await request.json()
    except json.JSONDecodeError:
        raise BadRequest("request body is not valid JSON") from None
    if not isinstance(body, dict):
        raise BadRequest("request body must be a JSON object")
    return body


def create_app(config: SidecarConfig) -> FastAPI:
    app = FastAPI(title="roar-sidecar", version=__version__)

    inpainter = InpaintService(config.inpainter, config.device) if config.inpainter != "none" else None
    detector = DetectService(config.detector, config.device) if config.detector != "none" else None
    try:
        lpips = LpipsService(config.lpips, config.device) if config.lpips != "none" else None
    except ImportError as e:
        logger.warning("lpips endpoint disabled: %s", e)
        lpips = None

    @app.exception_handler(BadRequest)
    async def bad_request_handler(_request, exc):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(DecodeError)
    async def decode_error_handler(_request, exc):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(Exception)
    async def fault_handler(_request, exc):
        return JSONResponse(status_code=500, content={"error": str(exc)})

    def _disabled(name: str):
        return JSONResponse(status_code=404, content={"error": f"{name} endpoint is not enabled"})

    @app.get("/v1/health")
    async def health():
        services = {
            "inpainter": inpainter,
            "detector": detector,
            "lpips": lpips,
        }
        model_info = {
            name: svc.status.info() for name, svc in services.items() if svc is not None
        }
        degraded = any(info["status"] != "ok" for info in model_info.values())
        return {"status": "degraded" if degraded else "ok", "model_info": model_info}

    @app.post("/v1/inpaint")
    async def inpaint(request: Request):
        if inpainter is None:
            return _disabled("inpaint")
        body = await _json_body(request)
        image = b64_to_rgb(_require(body, "image_png_b64"))
        mask = b64_to_mask(_require(body, "mask_png_b64"))
        if image.shape[:2] != mask.shape:
            raise BadRequest(
                f"mask {mask.shape} does not match image {image.shape[:2]}"
            )
        out = inpainter.inpaint(
            image,
            mask,
            prompt=str(body.get("prompt", "generic background")),
            seed=int(body.get("seed", 0)),
        )
        return {"image_png_b64": rgb_to_b64(out)}

    @app.post("/v1/detect")
    async def detect(request: Request):
        if detector is None:
            return _disabled("detect")
        body = await _json_body(request)
        image = b64_to_rgb(_require(body, "image_png_b64"))
        try:
            threshold = float(body.get("score_threshold", 0.0))
        except (TypeError, ValueError):
            raise BadRequest("score_threshold must be a number") from None
        if not 0.0 <= threshold <= 1.0:
            raise BadRequest("score_threshold must lie in [0, 1]")
        return {"detections": detector.detect(image, threshold)}

    @app.post("/v1/lpips")
    async def lpips_endpoint(request: Request):
        if lpips is None:
            return _disabled("lpips")
        body = await _json_body(request)
        a = b64_to_rgb(_require(body, "image_a_png_b64"))
        b = b64_to_rgb(_require(body, "image_b_png_b64"))
        return {"lpips": lpips.distance(a, b)}

    return app
