import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dptrack.evaluation import (
    Occluder,
    Sequence,
    SyntheticSpec,
    compare_boxes,
    load_frames,
    make_synthetic_sequence,
    overlap,
    parse_box,
    read_boxes,
    run_no_reset,
    run_reset_based,
    write_boxes,
)

box_st = st.tuples(
    st.floats(-50, 50), st.floats(-50, 50), st.floats(0.5, 60), st.floats(0.5, 60)
)


class TestOverlap:
    def test_identical(self):
        assert overlap((1, 2, 3, 4), (1, 2, 3, 4)) == 1.0

    def test_half_shift_is_one_third(self):
        assert overlap((0, 0, 10, 10), (5, 0, 10, 10)) == pytest.approx(1 / 3)

    def test_disjoint_and_touching(self):
        assert overlap((0, 0, 10, 10), (20, 20, 5, 5)) == 0.0
        assert overlap((0, 0, 10, 10), (10, 0, 10, 10)) == 0.0

    def test_nested(self):
        assert overlap((0, 0, 10, 10), (2, 2, 5, 5)) == pytest.approx(0.25)

    @given(box_st, box_st)
    def test_symmetric_and_bounded(self, a, b):
        o = overlap(a, b)
        assert 0.0 <= o <= 1.0
        assert o == pytest.approx(overlap(b, a))

    @given(box_st, st.floats(-20, 20), st.floats(-20, 20))
    def test_translation_invariant(self, a, dx, dy):
        b = (a[0] + 1, a[1] - 2, a[2], a[3])
        shift = lambda z: (z[0] + dx, z[1] + dy, z[2], z[3])
        assert overlap(shift(a), shift(b)) == pytest.approx(overlap(a, b), abs=1e-9)


class TestBoxIO:
    def test_parse_separators(self):
        assert parse_box("1,2,3,4") == (1, 2, 3, 4)
        assert parse_box("1 2\t3  4") == (1, 2, 3, 4)

    @pytest.mark.parametrize("text", ["1,2,3", "a,b,c,d", "1,2,nan,4"])
    def test_parse_rejects(self, text):
        with pytest.raises(ValueError):
            parse_box(text)

    def test_roundtrip(self, tmp_path):
        boxes = [(1.0, 2.5, 30.25, 40.0), (0.0, 0.0, 1.0, 1.0)]
        write_boxes(tmp_path / "b.txt", boxes)
        assert read_boxes(tmp_path / "b.txt") == boxes


class FixedTracker:
    """Returns the same box every frame."""

    def __init__(self, box):
        self.box = box

    def initialize(self, image, bbox):
        pass

    def update(self, image):
        return self.box


class OracleTracker:
    def __init__(self, gt):
        self.gt, self.f = gt, 0

    def initialize(self, image, bbox):
        self.f = self.gt.index(tuple(bbox))

    def update(self, image):
        self.f += 1
        return self.gt[self.f]


def blank_sequence(n, gt=None):
    gt = gt or [(10.0 + i, 10.0, 20.0, 20.0) for i in range(n)]
    return Sequence([np.zeros((4, 4), np.uint8)] * n, gt)


class TestProtocols:
    def test_oracle_scores_perfectly(self):
        seq = blank_sequence(30)
        rep = run_reset_based(OracleTracker(seq.groundtruth), seq)
        assert rep.failure_count == 0
        assert rep.accuracy == 1.0
        assert sum(rep.valid) == 30 - 10
        assert run_no_reset(OracleTracker(seq.groundtruth), seq).average_overlap == 1.0

    def test_off_target_failure_arithmetic(self):
        # a tracker stuck far away fails on every frame right after init
        seq = blank_sequence(23)
        rep = run_reset_based(FixedTracker((500, 500, 5, 5)), seq)
        # inits at 0, 6, 12, 18; failures one frame later each time
        assert rep.failures == [1, 7, 13, 19]
        assert rep.failure_count == 4
        assert np.isnan(rep.accuracy)

    def test_failure_frames_skip_five(self):
        seq = blank_sequence(40)
        rep = run_reset_based(FixedTracker((500, 500, 5, 5)), seq, skip=5)
        assert np.all(np.diff(rep.failures) == 6)

    def test_burn_in_excluded_from_accuracy(self):
        gt = [(0.0, 0.0, 10.0, 10.0)] * 25
        seq = blank_sequence(25, gt)
        rep = run_reset_based(FixedTracker((5.0, 0.0, 10.0, 10.0)), seq)
        assert rep.failure_count == 0
        assert rep.valid[:10] == [False] * 10 and all(rep.valid[10:])
        assert rep.accuracy == pytest.approx(1 / 3)

    def test_no_reset_average_overlap(self):
        gt = [(0.0, 0.0, 10.0, 10.0)] * 11
        seq = blank_sequence(11, gt)
        rep = run_no_reset(FixedTracker((5.0, 0.0, 10.0, 10.0)), seq)
        # frame 0 is the initialization box
        assert rep.average_overlap == pytest.approx((1 + 10 / 3) / 11)

    def test_compare_boxes_half_overlap(self):
        gt = [(0.0, 0.0, 10.0, 10.0)] * 4
        out = [(0.0, 0.0, 10.0, 10.0), (5.0, 0.0, 10.0, 10.0)] * 2
        rep = compare_boxes(out, gt)
        assert rep.average_overlap == pytest.approx((1 + 1 / 3) / 2)

    def test_compare_boxes_length_mismatch(self):
        with pytest.raises(ValueError):
            compare_boxes([(0, 0, 1, 1)], [(0, 0, 1, 1)] * 2)

    def test_report_json(self, tmp_path):
        seq = blank_sequence(12)
        rep = run_reset_based(OracleTracker(seq.groundtruth), seq)
        data = json.loads(rep.to_json(tmp_path / "r.json"))
        assert data["summary"]["failures"] == 0
        assert len(data["overlaps"]) == 12

    def test_sequence_validates(self):
        with pytest.raises(ValueError):
            Sequence([np.zeros((2, 2))], [])
        with pytest.raises(ValueError):
            Sequence([np.zeros((2, 2))], [(0, 0, 0, 5)])


class TestSynthetic:
    def test_deterministic(self):
        spec = SyntheticSpec(n_frames=5, deformation=2.0, distractors=2)
        a = make_synthetic_sequence(spec, seed=4)
        b = make_synthetic_sequence(spec, seed=4)
        for i in range(5):
            np.testing.assert_array_equal(a.image(i), b.image(i))
        assert a.groundtruth == b.groundtruth

    def test_seeds_differ(self):
        a = make_synthetic_sequence(SyntheticSpec(n_frames=2), seed=0)
        b = make_synthetic_sequence(SyntheticSpec(n_frames=2), seed=1)
        assert not np.array_equal(a.image(0), b.image(0))

    def test_ground_truth_motion(self):
        spec = SyntheticSpec(n_frames=20, velocity=(2.0, 0.5), scale_rate=0.01)
        seq = make_synthetic_sequence(spec)
        centers = np.array([(x + w / 2, y + h / 2) for x, y, w, h in seq.groundtruth])
        np.testing.assert_allclose(np.diff(centers, axis=0), [[2.0, 0.5]] * 19, atol=1e-9)
        widths = np.array([b[2] for b in seq.groundtruth])
        np.testing.assert_allclose(widths[1:] / widths[:-1], 1.01)

    def test_frames_are_uint8_rgb(self):
        seq = make_synthetic_sequence(SyntheticSpec(n_frames=2))
        img = seq.image(1)
        assert img.dtype == np.uint8 and img.shape == (240, 400, 3)

    def test_occluder_changes_only_its_frames(self):
        plain = make_synthetic_sequence(SyntheticSpec(n_frames=6, noise=0), seed=2)
        occ = make_synthetic_sequence(SyntheticSpec(n_frames=6, noise=0, occluders=[Occluder(2, 4)]), seed=2)
        for i in range(6):
            same = np.array_equal(plain.image(i), occ.image(i))
            assert same == (i not in (2, 3))
        x, y, w, h = (int(round(v)) for v in occ.groundtruth[2])
        top_same = np.array_equal(plain.image(2)[y + 2 : y + h // 2 - 2, x : x + w], occ.image(2)[y + 2 : y + h // 2 - 2, x : x + w])
        assert top_same

    def test_target_leaving_frame_raises(self):
        with pytest.raises(ValueError):
            make_synthetic_sequence(SyntheticSpec(n_frames=400, velocity=(5.0, 0.0)))

    def test_save_and_load(self, tmp_path):
        seq = make_synthetic_sequence(SyntheticSpec(n_frames=3))
        seq.save(tmp_path / "s")
        back = load_frames(tmp_path / "s")
        assert len(back) == 3
        np.testing.assert_array_equal(back.image(2), seq.image(2))
        np.testing.assert_allclose(back.groundtruth, seq.groundtruth, atol=0.005)
