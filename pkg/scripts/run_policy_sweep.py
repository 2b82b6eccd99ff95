#!/usr/bin/env python3
"""Sweep the four scrub policies over a demo dataset and print one summary row
per policy (privacy efficiency, image loss, annotation reduction).

Expects the layout produced by make_demo_dataset.py:
    demo/annotations.json  demo/images/  demo/oracle_after_scrub.json

Usage: python3 scripts/run_policy_sweep.py --data demo --out sweep_runs
"""

import argparse
import json
from pathlib import Path

from roar_scrub.backends import ReplayDetector, make_reference_inpainter
from roar_scrub.dataset import parse_dataset
from roar_scrub.pipeline import ReannotationConfig, ScrubPolicy, execute, plan, report

PERSON = 1


def fmt(value):
    return f"{value:.2f}" if value is not None else "-"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data", required=True)
    parser.add_argument("--out", default="sweep_runs")
    parser.add_argument("--inpainter", default="laplacian")
    parser.add_argument("--dilate-px", type=float, default=0.0)
    parser.add_argument("--workers", type=int, default=4)
    args = parser.parse_args()

    data = Path(args.data)
    dataset = parse_dataset((data / "annotations.json").read_bytes())
    oracle = ReplayDetector.from_file(data / "oracle_after_scrub.json")

    header = (
        f"{'Method':<14}{'PE (%)':>9}{'IE (%)':>9}"
        f"{'Img. Lost':>18}{'Annot. Red.':>18}"
    )
    print(header)
    print("-" * len(header))
    for mode in ("fp", "sp", "fp_drop", "sp_drop"):
        policy = ScrubPolicy(
            mode=mode,
            sensitive_categories=frozenset({PERSON}),
            dilate_px=args.dilate_px,
        )
        result = execute(
            plan(dataset, policy),
            dataset,
            image_root=data / "images",
            out_root=Path(args.out) / mode,
            inpainter=make_reference_inpainter(args.inpainter),
            oracle=oracle,
            reann_cfg=ReannotationConfig(),
            workers=args.workers,
        )
        privacy = report(dataset, result.dataset, result.manifest).privacy
        lost_n, lost_pct = privacy.images_lost
        red_n, red_pct = privacy.annotation_reduction
        tag = mode.replace("_", ".") + ("" if args.dilate_px == 0 else ".bd")
        print(
            f"{tag:<14}{fmt(privacy.pe_percent):>9}{fmt(privacy.ie_percent):>9}"
            f"{f'{lost_n} ({lost_pct:.1f}%)':>18}{f'{red_n} ({red_pct:.1f}%)':>18}"
        )
        (Path(args.out) / mode / "privacy_report.json").write_text(
            json.dumps(privacy.as_dict(), indent=2)
        )


if __name__ == "__main__":
    main()
