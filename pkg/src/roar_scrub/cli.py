"""Command-line entry points.

Exit codes: 0 clean, 2 run finished with per-image failures, 1 fatal error.
Remote backends default their URL from the ROAR_BACKEND_URL environment
variable when a bare ``remote`` is given.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from . import __version__
from .backends import BackendEndpoint, ReplayDetector, make_reference_inpainter
from .dataset import parse_dataset
from .detection_eval import EvalConfig, detections_from_results, evaluate
from .errors import RoarError
from .imaging import ImageBuffer
from .multiview import StitchConfig, load_manifest, scrub_scene
from .pipeline import (
    ReannotationConfig,
    RunManifest,
    ScrubPolicy,
    execute,
    plan,
    privacy_report_from_manifest,
    report,
)
from .privacy import format_privacy_table
from .quality import compare, scene_means
from .remote import RemoteBackend


def _remote_from_spec(spec: str) -> RemoteBackend:
    url = spec.split("=", 1)[1] if "=" in spec else os.environ.get("ROAR_BACKEND_URL", "")
    if not url:
        raise RoarError(
            "remote backend requested but no URL given and ROAR_BACKEND_URL is unset"
        )
    return RemoteBackend(BackendEndpoint(base_url=url))


def _resolve_inpainter(spec: str):
    if spec.startswith("remote"):
        return _remote_from_spec(spec)
    return make_reference_inpainter(spec)


def _resolve_oracle(spec: str):
    if spec.startswith("replay="):
        return ReplayDetector.from_file(spec.split("=", 1)[1])
    if spec.startswith("remote"):
        return _remote_from_spec(spec)
    raise RoarError(f"oracle must be replay=FILE or remote[=URL], got '{spec}'")


def _resolve_categories(dataset, spec: str) -> set[int]:
    by_name = {c.name: c.id for c in dataset.categories}
    ids = set()
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        if token in by_name:
            ids.add(by_name[token])
        elif token.isdigit():
            ids.add(int(token))
        else:
            raise RoarError(f"unknown category '{token}'")
    return ids


def _cmd_scrub(args) -> int:
    dataset = parse_dataset(Path(args.annotations).read_bytes())
    sensitive = _resolve_categories(dataset, args.categories)
    policy = ScrubPolicy(
        mode=args.mode.replace("-", "_"),
        sensitive_categories=frozenset(sensitive),
        dilate_px=args.dilate_px,
        selection_seed=args.selection_seed,
        global_seed=args.seed,
        score_threshold=args.score_threshold,
    )
    inpainter = _resolve_inpainter(args.inpainter)
    oracle = _resolve_oracle(args.oracle)
    if isinstance(inpainter, RemoteBackend):
        inpainter.health()
    if isinstance(oracle, RemoteBackend) and oracle is not inpainter:
        oracle.health()

    scrub_plan = plan(dataset, policy)
    for warning in scrub_plan.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    result = execute(
        scrub_plan,
        dataset,
        image_root=args.images,
        out_root=args.out,
        inpainter=inpainter,
        oracle=oracle,
        reann_cfg=ReannotationConfig(zeta=args.zeta, tau=args.tau),
        workers=args.workers,
    )
    run_report = report(dataset, result.dataset, result.manifest)
    print(format_privacy_table(run_report.privacy, method=policy.mode))
    out = Path(args.out)
    (out / "privacy_report.json").write_text(
        json.dumps(run_report.privacy.as_dict(), indent=2)
    )
    if result.failures:
        print(f"{result.failures} image(s) failed; see manifest", file=sys.stderr)
        return 2
    return 0


def _cmd_eval_ap(args) -> int:
    gt = parse_dataset(Path(args.gt).read_bytes())
    results = json.loads(Path(args.dets).read_text())
    dets = detections_from_results(results)
    utility = evaluate(gt, dets, EvalConfig(), baseline_ap=args.baseline_ap)
    print(utility.format_table())
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(utility.as_dict(), indent=2))
    return 0


def _cmd_eval_privacy(args) -> int:
    manifest = RunManifest.load(args.manifest)
    privacy = privacy_report_from_manifest(manifest)
    print(format_privacy_table(privacy, method=manifest.config.get("mode", "run")))
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(privacy.as_dict(), indent=2))
    return 0


def _cmd_eval_image(args) -> int:
    dir_a, dir_b = Path(args.dir_a), Path(args.dir_b)
    names = sorted(
        p.relative_to(dir_a).as_posix()
        for p in dir_a.rglob("*")
        if p.is_file() and (dir_b / p.relative_to(dir_a)).is_file()
    )
    if not names:
        raise RoarError(f"no common files between {dir_a} and {dir_b}")
    lpips_backend = _remote_from_spec(args.lpips) if args.lpips else None
    reports = []
    for name in names:
        a = ImageBuffer.load(dir_a / name)
        b = ImageBuffer.load(dir_b / name)
        lp = lpips_backend.lpips(a, b) if lpips_backend else None
        rep = compare(a, b, lpips=lp)
        reports.append(rep)
        psnr_txt = "inf" if math.isinf(rep.psnr_db) else f"{rep.psnr_db:.2f}"
        lp_txt = f" lpips={lp:.4f}" if lp is not None else ""
        print(f"{name}: psnr={psnr_txt} dB ssim={rep.ssim:.4f}{lp_txt}")
    means = scene_means(reports)
    print(json.dumps(means, indent=2))
    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps({"pairs": [r.as_dict() for r in reports], "means": means}, indent=2)
        )
    return 0


def _cmd_stitch_scene(args) -> int:
    scene = load_manifest(args.manifest)
    inpainter = _resolve_inpainter(args.inpainter)
    cfg = StitchConfig(ring_width=args.ring_width, blur_sigma=args.blur_sigma)
    result = scrub_scene(scene, inpainter, cfg)
    out = Path(args.out)
    for split, indices in (("train", result.train_indices), ("test", result.test_indices)):
        split_dir = out / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for idx in indices:
            name = Path(scene.views[idx][0]).name
            result.outputs[idx].save(split_dir / name)
    print(
        f"scene '{scene.name}': template view {result.template_index}, "
        f"{len(result.train_indices)}/{len(result.test_indices)} train/test views -> {out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roar", description=__doc__)
    parser.add_argument("--version", action="version", version=f"roar-scrub {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scrub", help="scrub a dataset end to end")
    p.add_argument("--annotations", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", required=True, choices=["fp", "sp", "fp-drop", "sp-drop"])
    p.add_argument("--categories", default="person")
    p.add_argument("--dilate-px", type=float, default=0.0)
    p.add_argument("--inpainter", default="laplacian",
                   help="constant | border-mean | laplacian | remote[=URL]")
    p.add_argument("--oracle", required=True, help="replay=FILE | remote[=URL]")
    p.add_argument("--zeta", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=3407)
    p.add_argument("--selection-seed", type=int, default=42)
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_scrub)

    p = sub.add_parser("eval-ap", help="COCO-protocol AP over a results file")
    p.add_argument("--gt", required=True)
    p.add_argument("--dets", required=True)
    p.add_argument("--baseline-ap", type=float, default=None)
    p.add_argument("--json-out", default=None)
    p.set_defaults(func=_cmd_eval_ap)

    p = sub.add_parser("eval-privacy", help="privacy report from a run manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--json-out", default=None)
    p.set_defaults(func=_cmd_eval_privacy)

    p = sub.add_parser("eval-image", help="PSNR/SSIM (and remote LPIPS) between two trees")
    p.add_argument("--dir-a", required=True)
    p.add_argument("--dir-b", required=True)
    p.add_argument("--lpips", default=None, help="remote[=URL]")
    p.add_argument("--json-out", default=None)
    p.set_defaults(func=_cmd_eval_image)

    p = sub.add_parser("stitch-scene", help="scrub a multi-view scene via stitching")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--inpainter", default="laplacian")
    p.add_argument("--ring-width", type=int, default=8)
    p.add_argument("--blur-sigma", type=float, default=3.0)
    p.set_defaults(func=_cmd_stitch_scene)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RoarError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
