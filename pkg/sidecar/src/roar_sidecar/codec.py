"""Base64 PNG codec for the wire protocol. Masks are Gray8, 0=keep 255=scrub."""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


class DecodeError(Exception):
    pass


def b64_to_rgb(data: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as e:
        raise DecodeError(f"not a valid base64 PNG image: {e}") from None


def b64_to_mask(data: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8) >= 128
    except Exception as e:
        raise DecodeError(f"not a valid base64 PNG mask: {e}") from None


def rgb_to_b64(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(arr.astype(np.uint8), mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")
