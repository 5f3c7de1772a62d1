"""Tests for frame-to-frame association, gap repair, and tracklet filtering."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage

from gravicell.basins import BasinExtraction
from gravicell.errors import ParameterError
from gravicell.evaluate import read_track_file
from gravicell.segmentation import CellMaskSet, SegParams
from gravicell.tracking import (
    TrackGraph,
    Tracklet,
    TrackParams,
    associate,
    filter_tracklets,
    interpolate_gap,
    mask_contrast,
    merge_basins,
    recover_missing,
    track_sequence,
    tracklet_label_map,
    write_track_file,
)


def disk(shape, cx, cy, r):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def frame_with(labels, hi=0.9, lo=0.1):
    img = np.full(labels.shape, lo)
    img[labels > 0] = hi
    return img


def cell_set(labels):
    labels = np.asarray(labels, dtype=np.int32)
    return CellMaskSet.from_labels(labels, frame_with(labels))


class TestTrackParams:
    @pytest.mark.parametrize(
        "kwargs",
        [{"match_min_fraction": 0.0}, {"match_min_fraction": 1.5}, {"contrast_accept_ratio": -0.1}],
    )
    def test_rejects_bad_params(self, kwargs):
        with pytest.raises(ParameterError):
            TrackParams(**kwargs)


class TestMergeBasins:
    def test_basins_take_owning_cell_id(self):
        basins = BasinExtraction(
            labels=np.array([[1, 1, 1, 1, 1, 2, 2, 2, 2, 2]], dtype=np.int32),
            minima=np.array([[2.0, 0.0], [7.0, 0.0]]),
        )
        cell_labels = np.array([[0, 0, 5, 5, 5, 0, 0, 0, 0, 0]], dtype=np.int32)
        cells = CellMaskSet.from_labels(cell_labels, frame_with(cell_labels))
        merged = merge_basins(basins, cells)
        # Basin 1's minimum sits inside cell 5; basin 2's sits on background.
        np.testing.assert_array_equal(merged[0], [5, 5, 5, 5, 5, 0, 0, 0, 0, 0])

    def test_two_basins_in_one_cell_collapse(self):
        basins = BasinExtraction(
            labels=np.array([[1, 1, 2, 2]], dtype=np.int32),
            minima=np.array([[0.0, 0.0], [3.0, 0.0]]),
        )
        cell_labels = np.array([[7, 7, 7, 7]], dtype=np.int32)
        cells = CellMaskSet.from_labels(cell_labels, frame_with(cell_labels))
        np.testing.assert_array_equal(merge_basins(basins, cells)[0], [7, 7, 7, 7])


class TestAssociate:
    def build_cells(self):
        labels = np.zeros((4, 10), dtype=np.int32)
        labels[1, 0:10] = 1  # one 10-px cell
        return cell_set(labels)

    def test_majority_vote(self):
        cells = self.build_cells()
        inst = np.zeros((4, 10), dtype=np.int32)
        inst[1, 0:6] = 3  # 6 of 10 pixels in target 3
        m = associate(cells, inst, 0.2)
        assert m.best == {1: 3}
        assert (1, 3, 0.6) in [(c, t, round(f, 6)) for c, t, f in m.entries]

    def test_below_threshold_unmatched(self):
        cells = self.build_cells()
        inst = np.zeros((4, 10), dtype=np.int32)
        inst[1, 0] = 3  # 1 of 10 pixels: fraction 0.1 < 0.2
        assert associate(cells, inst, 0.2).best == {}

    def test_tie_takes_lower_id(self):
        cells = self.build_cells()
        inst = np.zeros((4, 10), dtype=np.int32)
        inst[1, 0:5] = 4
        inst[1, 5:10] = 2
        assert associate(cells, inst, 0.2).best == {1: 2}

    def test_background_votes_ignored(self):
        cells = self.build_cells()
        inst = np.zeros((4, 10), dtype=np.int32)  # everything votes 0
        assert associate(cells, inst, 0.2).best == {}


class TestMaskContrast:
    def test_flat_step(self):
        mask = np.zeros((12, 12), dtype=bool)
        mask[4:7, 4:7] = True
        img = np.where(mask, 0.9, 0.1)
        assert mask_contrast(img, mask) == pytest.approx(0.8)

    def test_empty_mask(self):
        assert mask_contrast(np.ones((5, 5)), np.zeros((5, 5), bool)) == 0.0

    def test_full_mask_has_no_ring(self):
        assert mask_contrast(np.ones((5, 5)), np.ones((5, 5), bool)) == 0.0


class TestRecoverMissing:
    def test_finds_shifted_cell(self):
        rng = np.random.default_rng(0)
        truth = disk((48, 48), 24, 24, 8)
        frame = np.where(truth, 0.8, 0.2) + rng.normal(0, 0.03, (48, 48))
        prev = disk((48, 48), 22, 22, 8)
        got = recover_missing(prev, frame, 0.6, SegParams(), TrackParams())
        assert got is not None
        iou = (got & truth).sum() / (got | truth).sum()
        assert iou > 0.8

    def test_rejects_vanished_cell(self):
        rng = np.random.default_rng(1)
        frame = 0.5 + rng.normal(0, 0.02, (48, 48))  # cell is gone
        prev = disk((48, 48), 24, 24, 8)
        got = recover_missing(prev, frame, 0.6, SegParams(), TrackParams())
        assert got is None


class TestInterpolateGap:
    def test_overlapping_translation_lands_between(self):
        before = disk((40, 40), 17, 20, 8)
        after = disk((40, 40), 23, 20, 8)
        mid = interpolate_gap(before, after)
        cy, cx = ndimage.center_of_mass(mid)
        assert cx == pytest.approx(20.0, abs=0.5)
        assert cy == pytest.approx(20.0, abs=0.5)
        assert mid[20, 20]
        assert 0.7 * before.sum() < mid.sum() < 1.2 * before.sum()

    def test_identical_masks_unchanged(self):
        m = disk((30, 30), 15, 15, 6)
        np.testing.assert_array_equal(interpolate_gap(m, m), m)

    def test_disjoint_masks_stamp_smaller_at_midpoint(self):
        before = disk((60, 60), 10, 10, 4)
        after = disk((60, 60), 40, 40, 6)
        mid = interpolate_gap(before, after)
        np.testing.assert_array_equal(mid, disk((60, 60), 25, 25, 4))

    def test_empty_input_gives_empty(self):
        m = disk((20, 20), 10, 10, 4)
        assert not interpolate_gap(m, np.zeros_like(m)).any()
        assert not interpolate_gap(np.zeros_like(m), m).any()


def build_sequence(mask_lists):
    """CellMaskSets + basin maps + frames from per-frame lists of masks."""
    cells, inst, frames = [], [], []
    for masks in mask_lists:
        labels = np.zeros(masks[0].shape if masks else (40, 40), dtype=np.int32)
        for i, m in enumerate(masks):
            labels[m] = i + 1
        img = frame_with(labels)
        cells.append(CellMaskSet.from_labels(labels, img))
        inst.append(labels.copy())
        frames.append(img)
    return cells, inst, frames


class TestTrackSequence:
    def test_single_moving_cell(self):
        shape = (40, 40)
        masks = [[disk(shape, 10 + 4 * t, 20, 5)] for t in range(4)]
        cells, inst, frames = build_sequence(masks)
        g = track_sequence(cells, inst, frames, SegParams(), TrackParams())
        assert len(g.tracklets) == 1
        tr = g.tracklets[0]
        assert (tr.label, tr.begin, tr.end, tr.parent) == (1, 0, 3, 0)
        assert sorted(tr.cells) == [0, 1, 2, 3]
        assert tr.areas[0] == disk(shape, 10, 20, 5).sum()

    def test_division_closes_parent_and_links_children(self):
        shape = (48, 48)
        parent = [disk(shape, 24, 24, 6)]
        kids = [disk(shape, 20, 24, 4), disk(shape, 28, 24, 4)]
        cells, inst, frames = build_sequence([parent, parent, kids, kids])
        g = track_sequence(cells, inst, frames, SegParams(), TrackParams())
        assert len(g.tracklets) == 3
        by_label = {tr.label: tr for tr in g.tracklets}
        assert (by_label[1].begin, by_label[1].end, by_label[1].parent) == (0, 1, 0)
        for lab in (2, 3):
            assert (by_label[lab].begin, by_label[lab].end) == (2, 3)
            assert by_label[lab].parent == 1

    def test_gap_is_interpolated(self):
        shape = (40, 40)
        m0, m1, m3 = (disk(shape, x, 20, 5) for x in (10, 13, 19))
        cells, inst, frames = build_sequence([[m0], [m1], [], [m3]])
        g = track_sequence(cells, inst, frames, SegParams(), TrackParams())
        assert len(g.tracklets) == 1
        tr = g.tracklets[0]
        assert (tr.begin, tr.end) == (0, 3)
        assert 2 in tr.cells
        assert cells[2].recovered  # the repaired instance is marked

    def test_two_parallel_cells_stay_distinct(self):
        shape = (40, 60)
        masks = [
            [disk(shape, 12 + 2 * t, 14, 5), disk(shape, 12 + 2 * t, 32, 5)]
            for t in range(4)
        ]
        cells, inst, frames = build_sequence(masks)
        g = track_sequence(cells, inst, frames, SegParams(), TrackParams())
        assert len(g.tracklets) == 2
        for tr in g.tracklets:
            assert (tr.begin, tr.end, tr.parent) == (0, 3, 0)
            # The instance chain follows one row of disks only.
            rows = {
                int(ndimage.center_of_mass(cells[t].mask(tr.cells[t]))[0])
                for t in range(4)
            }
            assert len(rows) == 1

    def test_empty_sequence(self):
        g = track_sequence([], [], [], SegParams(), TrackParams())
        assert g.tracklets == [] and g.n_frames == 0

    def test_misaligned_inputs_rejected(self):
        cells, inst, frames = build_sequence([[disk((20, 20), 10, 10, 4)]])
        with pytest.raises(ParameterError):
            track_sequence(cells, inst + [inst[0]], frames, SegParams(), TrackParams())


def make_tracklet(label, begin, end, areas, parent=0, contrast=0.5):
    frames = range(begin, end + 1)
    return Tracklet(
        label=label,
        begin=begin,
        end=end,
        parent=parent,
        cells={t: 1 for t in frames},
        areas={t: a for t, a in zip(frames, areas)},
        contrasts={t: contrast for t in frames},
    )


class TestFilterTracklets:
    def run(self, areas_by_label, lower=100.0, upper=300.0):
        g = TrackGraph(
            tracklets=[
                make_tracklet(lab, 0, len(a) - 1, a)
                for lab, a in sorted(areas_by_label.items())
            ],
            n_frames=max(len(a) for a in areas_by_label.values()),
        )
        out = filter_tracklets(g, lower, upper, 0.05)
        return out

    def test_keep_rules(self):
        out = self.run(
            {
                1: [150, 350, 200],  # min>=100, max>=300: kept
                2: [90, 400, 400],  # one mask below the lower bound: gone
                3: [150, 250, 299],  # never reaches the upper bound: gone
                4: [100, 300],  # boundary equality on both: kept
            }
        )
        spans = {(tr.begin, tr.end, tuple(tr.areas.values())) for tr in out.tracklets}
        assert len(out.tracklets) == 2
        kept_areas = {tuple(tr.areas.values()) for tr in out.tracklets}
        assert kept_areas == {(150, 350, 200), (100, 300)}
        assert spans  # labels renumber 1..K
        assert sorted(tr.label for tr in out.tracklets) == [1, 2]

    def test_low_contrast_removed(self):
        g = TrackGraph(
            tracklets=[make_tracklet(1, 0, 2, [200, 350, 200], contrast=0.01)],
            n_frames=3,
        )
        assert filter_tracklets(g, 100.0, 300.0, 0.05).tracklets == []

    def test_orphaned_child_becomes_root(self):
        g = TrackGraph(
            tracklets=[
                make_tracklet(1, 0, 1, [50, 50]),  # parent: culled (too small)
                make_tracklet(2, 2, 4, [200, 400, 200], parent=1),
                make_tracklet(3, 2, 4, [200, 400, 200], parent=1),
            ],
            n_frames=5,
        )
        out = filter_tracklets(g, 100.0, 300.0, 0.05)
        assert sorted(tr.label for tr in out.tracklets) == [1, 2]
        assert all(tr.parent == 0 for tr in out.tracklets)

    def test_surviving_parent_link_renumbered(self):
        g = TrackGraph(
            tracklets=[
                make_tracklet(1, 0, 1, [50, 50]),  # culled
                make_tracklet(2, 0, 1, [200, 400], parent=0),
                make_tracklet(3, 2, 4, [200, 400, 200], parent=2),
            ],
            n_frames=5,
        )
        out = filter_tracklets(g, 100.0, 300.0, 0.05)
        by_label = {tr.label: tr for tr in out.tracklets}
        assert sorted(by_label) == [1, 2]
        assert by_label[2].parent == 1

    def test_bad_bounds(self):
        with pytest.raises(ParameterError):
            filter_tracklets(TrackGraph(), 300.0, 100.0, 0.05)


class TestLabelMapAndFile:
    def test_tracklet_label_map(self):
        labels = np.array([[0, 2, 2], [0, 1, 0]], dtype=np.int32)
        cells = CellMaskSet.from_labels(labels, frame_with(labels))
        g = TrackGraph(
            tracklets=[
                Tracklet(label=7, begin=0, end=0, cells={0: 2}),
                Tracklet(label=4, begin=0, end=0, cells={0: 1}),
            ],
            n_frames=1,
        )
        out = tracklet_label_map(g, cells, 0)
        assert out.dtype == np.uint16
        np.testing.assert_array_equal(out, [[0, 7, 7], [0, 4, 0]])

    def test_instance_without_tracklet_maps_to_zero(self):
        labels = np.array([[3]], dtype=np.int32)
        cells = CellMaskSet.from_labels(labels, frame_with(labels))
        out = tracklet_label_map(TrackGraph(n_frames=1), cells, 0)
        np.testing.assert_array_equal(out, [[0]])

    def test_track_file_round_trip(self, tmp_path):
        g = TrackGraph(
            tracklets=[
                make_tracklet(2, 3, 5, [1, 1, 1], parent=1),
                make_tracklet(1, 0, 2, [1, 1, 1]),
            ],
            n_frames=6,
        )
        path = tmp_path / "res_track.txt"
        write_track_file(g, str(path))
        assert path.read_text() == "1 0 2 0\n2 3 5 1\n"
        assert read_track_file(str(path)) == [(1, 0, 2, 0), (2, 3, 5, 1)]
