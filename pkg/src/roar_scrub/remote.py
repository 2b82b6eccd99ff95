"""HTTP client for remote inpaint/detect/lpips backends.

Requests carry a stable, content-derived request id, so retries after network
faults are semantically safe: an identical request (same pixels, prompt, seed)
always names itself identically.
"""

from __future__ import annotations

import hashlib
import threading
import time

import requests

from .backends import (
    BackendEndpoint,
    DetectBackend,
    Detection,
    InpaintBackend,
    InpaintRequest,
    _filter_and_sort,
)
from .errors import BackendError, ProtocolViolationError
from .imaging import BBox, ImageBuffer
from . import wire

RETRYABLE_STATUS = {500, 502, 503, 504}
BACKOFF_BASE_SECONDS = 0.1


def _digest(*parts: bytes | str) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8") if isinstance(part, str) else part)
        h.update(b"\x00")
    return h.hexdigest()[:16]


class RemoteBackend(InpaintBackend, DetectBackend):
    """Client speaking the shared wire protocol against one endpoint.

    Safe under concurrent in-flight requests: each worker thread gets its own
    connection session.
    """

    name = "remote"

    def __init__(self, endpoint: BackendEndpoint, session: requests.Session | None = None):
        self.endpoint = endpoint
        self._fixed_session = session
        self._local = threading.local()

    @property
    def _session(self) -> requests.Session:
        if self._fixed_session is not None:
            return self._fixed_session
        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
        return self._local.session

    def _post(self, path: str, payload: dict, request_id: str) -> dict:
        url = self.endpoint.base_url.rstrip("/") + path
        payload = dict(payload, request_id=request_id)
        last_error: Exception | None = None
        for attempt in range(self.endpoint.retries + 1):
            if attempt:
                time.sleep(min(BACKOFF_BASE_SECONDS * (2 ** (attempt - 1)), 2.0))
            try:
                resp = self._session.post(url, json=payload, timeout=self.endpoint.timeout)
            except requests.RequestException as e:
                last_error = e
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last_error = BackendError(
                    f"{path} returned HTTP {resp.status_code}", request_id
                )
                continue
            if resp.status_code != 200:
                raise BackendError(
                    f"{path} returned HTTP {resp.status_code}: {resp.text[:200]}",
                    request_id,
                )
            try:
                return resp.json()
            except ValueError:
                raise ProtocolViolationError(
                    f"{path} response is not JSON [request_id={request_id}]"
                ) from None
        raise BackendError(
            f"{path} failed after {self.endpoint.retries + 1} attempts: {last_error}",
            request_id,
        )

    def health(self) -> dict:
        url = self.endpoint.base_url.rstrip("/") + "/v1/health"
        try:
            resp = self._session.get(url, timeout=self.endpoint.timeout)
        except requests.RequestException as e:
            raise BackendError(f"health check failed: {e}") from None
        if resp.status_code != 200:
            raise BackendError(f"health check returned HTTP {resp.status_code}")
        body = resp.json()
        if "status" not in body:
            raise ProtocolViolationError("health response missing 'status'")
        return body

    def inpaint(self, req: InpaintRequest) -> ImageBuffer:
        image_b64 = wire.image_to_b64(req.image)
        mask_b64 = wire.mask_to_b64(req.mask)
        request_id = _digest("inpaint", image_b64, mask_b64, req.prompt, str(req.seed))
        body = self._post(
            "/v1/inpaint",
            {
                "image_png_b64": image_b64,
                "mask_png_b64": mask_b64,
                "prompt": req.prompt,
                "seed": req.seed,
            },
            request_id,
        )
        if "image_png_b64" not in body:
            raise ProtocolViolationError(
                f"inpaint response missing 'image_png_b64' [request_id={request_id}]"
            )
        out = wire.b64_to_image(body["image_png_b64"])
        if (out.height, out.width) != (req.image.height, req.image.width):
            raise ProtocolViolationError(
                f"backend changed image dimensions from "
                f"{req.image.height}x{req.image.width} to {out.height}x{out.width} "
                f"[request_id={request_id}]"
            )
        return out

    def detect(
        self, image: ImageBuffer, score_threshold: float, image_id: int | None = None
    ) -> list[Detection]:
        image_b64 = wire.image_to_b64(image)
        request_id = _digest("detect", image_b64, str(score_threshold), str(image_id))
        payload = {"image_png_b64": image_b64, "score_threshold": score_threshold}
        if image_id is not None:
            payload["image_id"] = image_id
        body = self._post("/v1/detect", payload, request_id)
        if "detections" not in body:
            raise ProtocolViolationError(
                f"detect response missing 'detections' [request_id={request_id}]"
            )
        dets = []
        for rec in body["detections"]:
            try:
                dets.append(
                    Detection(
                        bbox=BBox(*(float(v) for v in rec["bbox"])),
                        category_id=int(rec["category_id"]),
                        score=float(rec["score"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as e:
                raise ProtocolViolationError(
                    f"malformed detection record {rec!r}: {e} [request_id={request_id}]"
                ) from None
        return _filter_and_sort(dets, score_threshold)

    def lpips(self, a: ImageBuffer, b: ImageBuffer) -> float:
        a_b64 = wire.image_to_b64(a)
        b_b64 = wire.image_to_b64(b)
        request_id = _digest("lpips", a_b64, b_b64)
        body = self._post(
            "/v1/lpips", {"image_a_png_b64": a_b64, "image_b_png_b64": b_b64}, request_id
        )
        if "lpips" not in body:
            raise ProtocolViolationError(
                f"lpips response missing 'lpips' [request_id={request_id}]"
            )
        value = float(body["lpips"])
        if value < 0:
            raise ProtocolViolationError(
                f"lpips must be non-negative, got {value} [request_id={request_id}]"
            )
        return value
