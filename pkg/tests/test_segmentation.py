"""Tests for region growing, level-set refinement, and mask splitting."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage

from gravicell.config import PipelineConfig
from gravicell.errors import ParameterError
from gravicell.pipeline import detect_frame
from gravicell.segmentation import (
    CellMaskSet,
    SegParams,
    chan_vese_refine,
    region_grow,
    segment_frame,
    split_mask,
)
from gravicell.synth import SynthSpec, generate


def disk(shape, cx, cy, r):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


class TestSegParams:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"contrast_delta": 0.0},
            {"contrast_delta": 1.0},
            {"cv_iterations": 0},
            {"h_maxima_h": 0.0},
            {"min_seed_separation": -1.0},
        ],
    )
    def test_rejects_bad_params(self, kwargs):
        with pytest.raises(ParameterError):
            SegParams(**kwargs)

    def test_defaults_valid(self):
        SegParams()


class TestCellMaskSet:
    def build(self):
        labels = np.zeros((12, 12), dtype=np.int32)
        labels[2:5, 2:5] = 1  # 9 px at 0.9
        labels[7:9, 7:10] = 2  # 6 px at 0.6
        image = np.full((12, 12), 0.1)
        image[labels == 1] = 0.9
        image[labels == 2] = 0.6
        return CellMaskSet.from_labels(labels, image)

    def test_areas_and_means(self):
        cs = self.build()
        assert cs.ids == [1, 2]
        assert cs.areas == {1: 9, 2: 6}
        assert cs.interior_means[1] == pytest.approx(0.9)
        assert cs.interior_means[2] == pytest.approx(0.6)

    def test_contrast_is_interior_minus_rim(self):
        cs = self.build()
        # Both rims sit entirely on 0.1 background.
        assert cs.rim_means[1] == pytest.approx(0.1)
        assert cs.contrast(1) == pytest.approx(0.8)
        assert cs.contrast(2) == pytest.approx(0.5)

    def test_mask_accessor(self):
        cs = self.build()
        m = cs.mask(1)
        assert m.sum() == 9 and m[3, 3] and not m[8, 8]

    def test_add_instance_claims_free_pixels_only(self):
        cs = self.build()
        image = np.full((12, 12), 0.1)
        new = np.zeros((12, 12), dtype=bool)
        new[4:8, 4:8] = True  # touches cell 1 at (4,4) and cell 2 at (7,7)
        cell_id = cs.add_instance(new, image)
        assert cell_id == 3
        assert cell_id in cs.recovered
        assert cs.labels[4, 4] == 1  # existing pixels not stolen
        assert cs.labels[7, 7] == 2
        assert cs.labels[6, 6] == 3
        assert cs.areas[3] == new.sum() - 2

    def test_add_instance_with_no_free_pixels(self):
        cs = self.build()
        covered = cs.mask(1)
        assert cs.add_instance(covered, np.zeros((12, 12))) == 0
        assert 3 not in cs.areas


class TestRegionGrow:
    def test_two_plateaus_stay_separate(self):
        # Two bright plateaus divided by a dark channel: each seed's mask
        # must cover its own plateau and never cross the channel.
        img = np.full((20, 30), 0.1)
        img[4:16, 2:13] = 0.9
        img[4:16, 17:28] = 0.9
        seeds = np.array([[7.0, 10.0], [22.0, 10.0]])  # (x, y)
        cs = region_grow(img, seeds, SegParams())
        assert cs.ids == [1, 2]
        left, right = cs.mask(1), cs.mask(2)
        assert not (left & right).any()
        assert left[4:16, 2:13].all()
        assert right[4:16, 17:28].all()
        # The dark channel belongs to nobody.
        assert (cs.labels[:, 14:16] == 0).all()

    def test_no_seeds(self):
        cs = region_grow(np.ones((8, 8)), np.empty((0, 2)), SegParams())
        assert cs.ids == [] and (cs.labels == 0).all()

    def test_seed_outside_bounds_is_clipped(self):
        img = np.full((10, 10), 0.5)
        cs = region_grow(img, np.array([[50.0, -3.0]]), SegParams())
        assert cs.labels[0, 9] == 1

    def test_duplicate_seed_pixel_keeps_first(self):
        img = np.full((10, 10), 0.5)
        seeds = np.array([[4.0, 4.0], [4.2, 4.1]])
        cs = region_grow(img, seeds, SegParams())
        assert cs.ids == [1]

    def test_uniform_image_fills_from_single_seed(self):
        img = np.full((10, 10), 0.5)
        cs = region_grow(img, np.array([[5.0, 5.0]]), SegParams())
        assert (cs.labels == 1).all()


class TestChanVeseRefine:
    def test_recovers_disk_from_poor_initial_mask(self):
        rng = np.random.default_rng(0)
        truth = disk((48, 48), 24, 24, 10)
        img = np.where(truth, 0.8, 0.2) + rng.normal(0, 0.05, (48, 48))
        # Start from a shifted, undersized guess.
        init = disk((48, 48), 21, 21, 7)
        refined, collapsed = chan_vese_refine(img, init, SegParams())
        assert not collapsed
        iou_init = (init & truth).sum() / (init | truth).sum()
        iou_ref = (refined & truth).sum() / (refined | truth).sum()
        assert iou_ref > iou_init
        assert iou_ref > 0.75

    def test_empty_mask_collapses(self):
        refined, collapsed = chan_vese_refine(
            np.zeros((10, 10)), np.zeros((10, 10), bool), SegParams()
        )
        assert collapsed and not refined.any()

    def test_collapse_returns_input_unchanged(self):
        # On a uniform image a small mask has no distributional edge to
        # find; whatever happens, a collapse must hand back the input.
        img = np.full((20, 20), 0.5)
        init = disk((20, 20), 10, 10, 3)
        refined, collapsed = chan_vese_refine(img, init, SegParams())
        if collapsed:
            np.testing.assert_array_equal(refined, init)
        else:
            assert refined.any()

    def test_keeps_single_component(self):
        rng = np.random.default_rng(1)
        truth = disk((40, 40), 20, 20, 8)
        img = np.where(truth, 0.9, 0.1) + rng.normal(0, 0.03, (40, 40))
        refined, collapsed = chan_vese_refine(img, truth, SegParams())
        assert not collapsed
        _, n = ndimage.label(refined)
        assert n == 1


class TestSplitMask:
    def test_dumbbell_splits_in_two(self):
        mask = disk((40, 60), 18, 20, 9) | disk((40, 60), 42, 20, 9)
        mask[18:23, 18:43] = True  # neck joining the lobes
        pieces = split_mask(mask, SegParams())
        assert len(pieces) == 2
        union = np.zeros_like(mask)
        for p in pieces:
            assert not (union & p).any()
            union |= p
        np.testing.assert_array_equal(union, mask)
        # One lobe center per piece.
        for cx in (18, 42):
            owners = [p[20, cx] for p in pieces]
            assert sum(owners) == 1

    def test_single_disk_stays_whole(self):
        mask = disk((30, 30), 15, 15, 9)
        pieces = split_mask(mask, SegParams())
        assert len(pieces) == 1
        np.testing.assert_array_equal(pieces[0], mask)

    def test_empty_mask(self):
        assert split_mask(np.zeros((10, 10), bool), SegParams()) == []

    def test_close_cores_merge_into_one_seed(self):
        # Two cores closer than min_seed_separation must not split.
        mask = disk((30, 42), 18, 15, 8) | disk((30, 42), 22, 15, 8)
        pieces = split_mask(mask, SegParams(min_seed_separation=10.0))
        assert len(pieces) == 1


class TestSegmentFrame:
    def test_synthetic_frame_instances(self):
        spec = SynthSpec(frame_count=1, height=256, width=256, blob_count=4, seed=3)
        result = generate(spec)
        cfg = PipelineConfig().validate()
        norm = result.frames[0]
        log_frame, minima_xy, _ = detect_frame(norm, cfg)
        assert len(minima_xy) == 4
        cells = segment_frame(log_frame, minima_xy, cfg.seg_params(), cfg.clahe_params())
        assert len(cells.ids) == 4
        # Each true center is covered, and by a different instance.
        gt = result.gt_masks[0]
        owners = set()
        for label, frames in result.centers.items():
            cx, cy = frames[0]
            owner = cells.labels[int(round(cy)), int(round(cx))]
            assert owner > 0
            owners.add(owner)
        assert len(owners) == 4
        # Masks roughly match ground-truth scale.
        for cell_id in cells.ids:
            area = cells.areas[cell_id]
            assert 0.3 * np.pi * spec.radius_min**2 < area < 3.0 * np.pi * spec.radius_max**2

    def test_no_minima_gives_empty_set(self):
        cells = segment_frame(
            np.full((32, 32), 0.2), np.empty((0, 2)), SegParams(), None
        )
        assert cells.ids == [] and (cells.labels == 0).all()
