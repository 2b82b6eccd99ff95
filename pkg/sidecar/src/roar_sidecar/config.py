"""Sidecar configuration: which model backs each endpoint, and where to bind."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

INPAINTER_CHOICES = ("stable-diffusion", "kandinsky", "aot-gan", "telea", "none")
DETECTOR_CHOICES = ("torchvision-frcnn", "blob", "none")
LPIPS_CHOICES = ("vgg16", "none")


@dataclass(frozen=True)
class SidecarConfig:
    host: str = "127.0.0.1"
    port: int = 8130
    inpainter: str = "telea"
    detector: str = "blob"
    lpips: str = "vgg16"
    device: str = "cpu"

    def __post_init__(self):
        if self.inpainter not in INPAINTER_CHOICES:
            raise ValueError(f"inpainter must be one of {INPAINTER_CHOICES}")
        if self.detector not in DETECTOR_CHOICES:
            raise ValueError(f"detector must be one of {DETECTOR_CHOICES}")
        if self.lpips not in LPIPS_CHOICES:
            raise ValueError(f"lpips must be one of {LPIPS_CHOICES}")
        if self.inpainter == self.detector == self.lpips == "none":
            raise ValueError("at least one endpoint must be enabled")

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "SidecarConfig":
        doc = json.loads(Path(path).read_text())
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)
