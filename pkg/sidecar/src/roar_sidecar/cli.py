"""Serve the sidecar: model selection via flags or a JSON config file."""

from __future__ import annotations

import argparse
import sys

from .config import DETECTOR_CHOICES, INPAINTER_CHOICES, LPIPS_CHOICES, SidecarConfig


def build_config(argv=None) -> SidecarConfig:
    parser = argparse.ArgumentParser(prog="roar-sidecar", description=__doc__)
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--host", default=None)
    parser.add_argument("--port", type=int, default=None)
    parser.add_argument("--inpainter", choices=INPAINTER_CHOICES, default=None)
    parser.add_argument("--detector", choices=DETECTOR_CHOICES, default=None)
    parser.add_argument("--lpips", choices=LPIPS_CHOICES, default=None)
    parser.add_argument("--device", default=None)
    args = parser.parse_args(argv)

    overrides = {
        k: getattr(args, k)
        for k in ("host", "port", "inpainter", "detector", "lpips", "device")
    }
    if args.config:
        return SidecarConfig.from_file(args.config, **overrides)
    return SidecarConfig(**{k: v for k, v in overrides.items() if v is not None})


def main(argv=None) -> int:
    import uvicorn

    from .app import create_app

    try:
        config = build_config(argv)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    uvicorn.run(create_app(config), host=config.host, port=config.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
