import json

import numpy as np
import pytest

from conftest import CHAIR, PERSON, ann_rec, coco_doc, image_rec, write_image_tree
from roar_scrub.backends import (
    ConstantFillInpainter,
    Detection,
    InpaintRequest,
    ReplayDetector,
)
from roar_scrub.dataset import parse_dataset, serialize_dataset
from roar_scrub.errors import RoarError
from roar_scrub.imaging import BBox, ImageBuffer
from roar_scrub.pipeline import (
    RunManifest,
    ScrubPolicy,
    execute,
    plan,
    privacy_report_from_manifest,
    report,
    stable_seed,
    target_mask,
)

SILENT_ORACLE = ReplayDetector({})


def fp_policy(**kw):
    defaults = dict(mode="fp", sensitive_categories=frozenset({PERSON}))
    defaults.update(kw)
    return ScrubPolicy(**defaults)


class TestPlan:
    def test_fp_targets_every_sensitive_annotation(self):
        doc = coco_doc(
            images=[image_rec(1), image_rec(2), image_rec(3)],
            annotations=[
                ann_rec(1, 1, PERSON, [0, 0, 5, 5]),
                ann_rec(2, 2, PERSON, [0, 0, 5, 5]),
                ann_rec(3, 2, PERSON, [10, 10, 5, 5]),
                ann_rec(4, 3, CHAIR, [0, 0, 5, 5]),
            ],
        )
        d = parse_dataset(json.dumps(doc))
        p = plan(d, fp_policy())
        scrubs = p.scrub_actions
        assert len(scrubs) == 2
        assert {t for a in scrubs for t in a.target_ids} == {1, 2, 3}
        kinds = {a.image_id: a.kind for a in p.actions}
        assert kinds == {1: "scrub", 2: "scrub", 3: "keep"}

    def ten_sensitive_images(self):
        images = [image_rec(i) for i in range(1, 11)]
        annotations = []
        ann_id = 0
        for i in range(1, 11):
            for _ in range(3):
                ann_id += 1
                annotations.append(ann_rec(ann_id, i, PERSON, [0, 0, 5, 5]))
        return parse_dataset(json.dumps(coco_doc(images=images, annotations=annotations)))

    def test_sp_selects_half_with_one_target_each(self):
        d = self.ten_sensitive_images()
        p = plan(d, fp_policy(mode="sp", selection_seed=42))
        scrubs = p.scrub_actions
        assert len(scrubs) == 5
        assert all(len(a.target_ids) == 1 for a in scrubs)
        again = plan(d, fp_policy(mode="sp", selection_seed=42))
        assert p.actions == again.actions
        other_seed = plan(d, fp_policy(mode="sp", selection_seed=7))
        assert p.actions != other_seed.actions

    def test_sp_drop_drops_the_same_half(self):
        d = self.ten_sensitive_images()
        scrubbed = {a.image_id for a in plan(d, fp_policy(mode="sp")).scrub_actions}
        dropped = {
            a.image_id
            for a in plan(d, fp_policy(mode="sp_drop")).actions
            if a.kind == "drop"
        }
        assert scrubbed == dropped

    def test_fp_drop_drops_every_sensitive_image(self, small_descriptor):
        p = plan(small_descriptor, fp_policy(mode="fp_drop"))
        dropped = {a.image_id for a in p.actions if a.kind == "drop"}
        assert dropped == {1, 2, 4}

    def test_crowd_annotations_never_targeted(self):
        doc = coco_doc(
            images=[image_rec(1)],
            annotations=[
                ann_rec(1, 1, PERSON, [0, 0, 5, 5], iscrowd=1),
                ann_rec(2, 1, PERSON, [10, 10, 5, 5]),
            ],
        )
        d = parse_dataset(json.dumps(doc))
        p = plan(d, fp_policy())
        assert p.scrub_actions[0].target_ids == (2,)

    def test_no_sensitive_images_warns(self):
        doc = coco_doc(
            images=[image_rec(1)],
            annotations=[ann_rec(1, 1, CHAIR, [0, 0, 5, 5])],
        )
        p = plan(parse_dataset(json.dumps(doc)), fp_policy())
        assert p.warnings
        assert all(a.kind == "keep" for a in p.actions)

    def test_unknown_sensitive_category(self, small_descriptor):
        with pytest.raises(RoarError):
            plan(small_descriptor, fp_policy(sensitive_categories=frozenset({99})))

    def test_stable_seed_is_stable(self):
        assert stable_seed(3407, 12) == stable_seed(3407, 12)
        assert stable_seed(3407, 12) != stable_seed(3407, 13)
        assert stable_seed(3407, 12) != stable_seed(42, 12)


class TestTargetMask:
    def test_polygon_segmentation_used(self, small_descriptor):
        ann = next(a for a in small_descriptor.annotations if a.id == 10)
        mask = target_mask(ann, 64, 48)
        assert mask.area == 12 * 16

    def test_bbox_fallback_without_segmentation(self, small_descriptor):
        ann = next(a for a in small_descriptor.annotations if a.id == 16)
        assert ann.segmentation is None
        mask = target_mask(ann, 64, 48)
        assert mask.area == 18 * 20


class TestExecute:
    def test_single_image_scrub_keeps_disjoint_chair(self, tmp_path):
        doc = coco_doc(
            images=[image_rec(1)],
            annotations=[
                ann_rec(10, 1, PERSON, [4, 4, 12, 16]),
                ann_rec(11, 1, CHAIR, [40, 20, 16, 16]),
            ],
        )
        d = parse_dataset(json.dumps(doc))
        images = write_image_tree(tmp_path / "in", d)
        result = execute(
            plan(d, fp_policy()),
            d,
            image_root=images,
            out_root=tmp_path / "out",
            inpainter=ConstantFillInpainter(),
            oracle=SILENT_ORACLE,
            workers=1,
        )
        assert [a.id for a in result.dataset.annotations] == [11]
        assert result.failures == 0
        rec = result.manifest.records[0]
        assert rec["annotation_update"]["scrub_targets_removed"] == [10]
        assert rec["annotation_update"]["retained_untouched"] == [11]

    def test_pixels_outside_mask_untouched(self, tmp_path):
        doc = coco_doc(
            images=[image_rec(1)],
            annotations=[ann_rec(10, 1, PERSON, [4, 4, 12, 16])],
        )
        d = parse_dataset(json.dumps(doc))
        images = write_image_tree(tmp_path / "in", d)
        original = ImageBuffer.load(images / "img_001.png")
        ann = d.annotations[0]
        mask = target_mask(ann, 64, 48)
        result = execute(
            plan(d, fp_policy()),
            d,
            image_root=images,
            out_root=tmp_path / "out",
            inpainter=ConstantFillInpainter(),
            oracle=ReplayDetector({1: [Detection(BBox(40, 20, 8, 8), CHAIR, 0.9)]}),
            workers=1,
        )
        # image had only the person; annotation-empty images are dropped
        assert result.dataset.images == ()
        assert result.manifest.records[0]["dropped_annotation_empty"] is True
        # rerun with a second annotation so the image is written
        doc["annotations"].append(ann_rec(11, 1, CHAIR, [40, 20, 16, 16]))
        d2 = parse_dataset(json.dumps(doc))
        result = execute(
            plan(d2, fp_policy()),
            d2,
            image_root=images,
            out_root=tmp_path / "out2",
            inpainter=ConstantFillInpainter(),
            oracle=SILENT_ORACLE,
            workers=1,
        )
        out = ImageBuffer.load(tmp_path / "out2" / "images" / "img_001.png")
        outside = ~mask.bits
        assert np.array_equal(out.data[outside], original.data[outside])
        assert (out.data[mask.bits] == 127).all()

    def test_drop_mode_empties_output(self, dataset_on_disk, tmp_path):
        d = dataset_on_disk["descriptor"]
        result = execute(
            plan(d, fp_policy(mode="fp_drop")),
            d,
            image_root=dataset_on_disk["images"],
            out_root=tmp_path / "out",
            inpainter=ConstantFillInpainter(),
            oracle=SILENT_ORACLE,
        )
        assert {im.id for im in result.dataset.images} == {3}
        lost = result.manifest.totals["input_images"] - result.manifest.totals["output_images"]
        assert lost == 3

    def test_backend_failure_marks_image_and_continues(self, dataset_on_disk, tmp_path):
        class Exploding(ConstantFillInpainter):
            name = "exploding"

            def inpaint(self, req: InpaintRequest):
                raise RuntimeError("boom")

        d = dataset_on_disk["descriptor"]
        result = execute(
            plan(d, fp_policy()),
            d,
            image_root=dataset_on_disk["images"],
            out_root=tmp_path / "out",
            inpainter=Exploding(),
            oracle=SILENT_ORACLE,
        )
        failed = [r for r in result.manifest.records if r["status"] == "failed"]
        assert len(failed) == 3  # images 1, 2, 4 hold persons
        assert result.failures == 3
        # untouched image 3 still present
        assert {im.id for im in result.dataset.images} == {3}

    def test_worker_counts_agree(self, dataset_on_disk, tmp_path):
        d = dataset_on_disk["descriptor"]
        outs = {}
        for workers in (1, 4):
            result = execute(
                plan(d, fp_policy()),
                d,
                image_root=dataset_on_disk["images"],
                out_root=tmp_path / f"out{workers}",
                inpainter=ConstantFillInpainter(),
                oracle=SILENT_ORACLE,
                workers=workers,
            )
            outs[workers] = result.manifest.canonical_bytes()
        assert outs[1] == outs[4]

    def test_manifest_roundtrip(self, dataset_on_disk, tmp_path):
        d = dataset_on_disk["descriptor"]
        result = execute(
            plan(d, fp_policy()),
            d,
            image_root=dataset_on_disk["images"],
            out_root=tmp_path / "out",
            inpainter=ConstantFillInpainter(),
            oracle=SILENT_ORACLE,
        )
        loaded = RunManifest.load(tmp_path / "out" / "manifest.json")
        assert loaded.canonical_bytes() == result.manifest.canonical_bytes()


class TestKeepPath:
    def test_interleaved_annotation_order_survives(self, tmp_path):
        # annotations deliberately interleave image ids; an all-keep run must
        # serialize to the exact input bytes
        doc = coco_doc(
            images=[image_rec(1), image_rec(2)],
            annotations=[
                ann_rec(1, 2, CHAIR, [0, 0, 5, 5]),
                ann_rec(2, 1, CHAIR, [0, 0, 5, 5]),
                ann_rec(3, 2, CHAIR, [8, 8, 5, 5]),
            ],
        )
        d = parse_dataset(json.dumps(doc))
        images = write_image_tree(tmp_path / "in", d)
        result = execute(
            plan(d, fp_policy()),
            d,
            image_root=images,
            out_root=tmp_path / "out",
            inpainter=ConstantFillInpainter(),
            oracle=SILENT_ORACLE,
        )
        assert serialize_dataset(result.dataset) == serialize_dataset(d)

    def test_all_keep_plan_copies_everything(self, dataset_on_disk, tmp_path):
        d = dataset_on_disk["descriptor"]
        doc = json.loads(serialize_dataset(d))
        for ann in doc["annotations"]:
            ann["category_id"] = CHAIR  # nothing sensitive anywhere
        neutral = parse_dataset(json.dumps(doc))
        p = plan(neutral, fp_policy())
        assert p.warnings
        result = execute(
            p,
            neutral,
            image_root=dataset_on_disk["images"],
            out_root=tmp_path / "out",
            inpainter=ConstantFillInpainter(),
            oracle=SILENT_ORACLE,
        )
        assert serialize_dataset(result.dataset) == serialize_dataset(neutral)
        for rec in neutral.images:
            src = (dataset_on_disk["images"] / rec.file_name).read_bytes()
            dst = (tmp_path / "out" / "images" / rec.file_name).read_bytes()
            assert src == dst


class TestReport:
    def run_fp(self, dataset_on_disk, tmp_path, oracle=SILENT_ORACLE):
        d = dataset_on_disk["descriptor"]
        result = execute(
            plan(d, fp_policy()),
            d,
            image_root=dataset_on_disk["images"],
            out_root=tmp_path / "out",
            inpainter=ConstantFillInpainter(),
            oracle=oracle,
        )
        return d, result

    def test_full_scrub_reaches_perfect_privacy(self, dataset_on_disk, tmp_path):
        original, result = self.run_fp(dataset_on_disk, tmp_path)
        run_report = report(original, result.dataset, result.manifest)
        assert run_report.privacy.pe_percent == 100.0
        assert run_report.privacy.ie_percent == 100.0

    def test_unscrubbed_run_has_undefined_pe(self, dataset_on_disk, tmp_path):
        d = dataset_on_disk["descriptor"]
        doc = json.loads(serialize_dataset(d))
        for ann in doc["annotations"]:
            ann["category_id"] = CHAIR
        neutral = parse_dataset(json.dumps(doc))
        result = execute(
            plan(neutral, fp_policy()),
            neutral,
            image_root=dataset_on_disk["images"],
            out_root=tmp_path / "out",
            inpainter=ConstantFillInpainter(),
            oracle=SILENT_ORACLE,
        )
        run_report = report(neutral, result.dataset, result.manifest)
        assert run_report.privacy.pe_percent is None
        assert run_report.privacy.images_lost == (0, 0.0)

    def test_report_matches_module_level_metrics(self, dataset_on_disk, tmp_path):
        # oracle still sees one person in image 2
        lingering = ReplayDetector(
            {2: [Detection(BBox(2, 2, 10, 20), PERSON, 0.9)]}
        )
        original, result = self.run_fp(dataset_on_disk, tmp_path, oracle=lingering)
        run_report = report(original, result.dataset, result.manifest)
        from roar_scrub.privacy import ie, pe_fp

        pairs = [
            (c.gt_persons, c.scrubbed_persons)
            for c in run_report.privacy.per_image_counts
        ]
        assert run_report.privacy.pe_percent == pytest.approx(pe_fp(pairs))
        assert run_report.privacy.ie_percent == pytest.approx(
            ie([s for _, s in pairs])
        )
        # images 1, 2, 4 are sensitive; persons: 1, 2, 1; image 2 keeps one
        assert run_report.privacy.pe_percent == pytest.approx(100 * 3 / 4)
        assert run_report.privacy.ie_percent == pytest.approx(100 * 2 / 3)

    def test_privacy_report_from_manifest_alone(self, dataset_on_disk, tmp_path):
        original, result = self.run_fp(dataset_on_disk, tmp_path)
        direct = report(original, result.dataset, result.manifest).privacy
        from_manifest = privacy_report_from_manifest(
            RunManifest.load(tmp_path / "out" / "manifest.json")
        )
        assert from_manifest.pe_percent == direct.pe_percent
        assert from_manifest.ie_percent == direct.ie_percent
        assert from_manifest.images_lost == direct.images_lost
        assert from_manifest.annotation_reduction == direct.annotation_reduction

    def test_report_with_utility(self, dataset_on_disk, tmp_path):
        original, result = self.run_fp(dataset_on_disk, tmp_path)
        dets = {}
        for ann in original.annotations:
            dets.setdefault(ann.image_id, []).append(
                Detection(BBox(*ann.bbox), ann.category_id, 1.0)
            )
        run_report = report(
            original, result.dataset, result.manifest, detections=dets, baseline_ap=1.0
        )
        assert run_report.utility.mean_ap == pytest.approx(1.0)
        assert run_report.utility.relative_to_baseline == pytest.approx(1.0)
