import json
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import ap_staircase_fixture

from mapgen.evaluation import (
    AlignmentError,
    Detection,
    GroundTruth,
    MatchResult,
    ablation_run,
    ablation_table,
    average_precision,
    evaluate_label_dirs,
    evaluate_model,
    interpolated_ap,
    label_quality,
    quality_from_matches,
    recovery_error,
    report_table,
)
from mapgen.geometry import Box3D
from mapgen.training import load_model

CAR = Box3D(10.0, 2.0, -0.8, 1.5, 3.9, 1.6, 0.3)


def scaled_along_length(box, iou):
    """Same box stretched along its length so that the overlap is exactly ``iou``."""
    return Box3D(box.cx, box.cy, box.cz, box.h, box.l / iou, box.w, box.yaw)


def test_identical_labels_score_one():
    miou, recall, matches = label_quality({"a": CAR, "b": CAR}, {"a": CAR, "b": CAR})
    assert miou == pytest.approx(1.0) and recall == 1.0 and len(matches) == 2


def test_two_objects_point_eight_and_point_six():
    pseudo = {"a": scaled_along_length(CAR, 0.8), "b": scaled_along_length(CAR, 0.6)}
    miou, recall, matches = label_quality(pseudo, {"a": CAR, "b": CAR})
    assert [m.iou3d for m in matches] == pytest.approx([0.8, 0.6])
    assert miou == pytest.approx(0.7) and recall == 0.5


def test_id_mismatch_lists_orphans():
    with pytest.raises(AlignmentError) as err:
        label_quality({"a": CAR, "x": CAR}, {"a": CAR, "y": CAR})
    assert err.value.pred_orphans == ["x"] and err.value.gt_orphans == ["y"]


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
def test_recall_consistent_with_ious(ious):
    matches = [MatchResult(i, v, v) for i, v in enumerate(ious)]
    miou, recall = quality_from_matches(matches)
    assert 0.0 <= recall <= 1.0 and 0.0 <= miou <= 1.0
    if max(ious) < 0.7:
        assert recall == 0.0
    assert recall == pytest.approx(np.mean(np.array(ious) >= 0.7))


def test_empty_matches_are_absent():
    assert quality_from_matches([]) == (None, None)


def test_recovery_error_examples():
    assert recovery_error(np.zeros((4, 3)), np.zeros((4, 3))) == 0.0
    assert recovery_error([[0.3, 0.4, 0.0]], [[0.0, 0.0, 0.0]]) == pytest.approx(0.5)
    assert recovery_error(np.zeros((0, 3)), np.zeros((0, 3))) is None
    with pytest.raises(ValueError):
        recovery_error(np.zeros((2, 3)), np.zeros((3, 3)))


def test_ap_single_perfect_and_empty():
    gts = [GroundTruth("f", CAR, "easy")]
    assert average_precision([Detection("f", CAR, 1.0)], gts, difficulty="easy") == pytest.approx(100.0)
    assert average_precision([], gts, difficulty="easy") == 0.0
    assert average_precision([], [GroundTruth("f", CAR, "hard")], difficulty="easy") is None


def test_ap_staircase_fixture():
    dets, gts, ap40, ap11 = ap_staircase_fixture()
    assert average_precision(dets, gts, 0.7, "3d", "moderate") == pytest.approx(ap40, abs=1e-12)
    assert average_precision(dets, gts, 0.7, "bev", "moderate") == pytest.approx(ap40, abs=1e-12)
    assert average_precision(dets, gts, 0.7, "3d", "moderate", points=11) == pytest.approx(ap11, abs=1e-12)
    assert average_precision(dets, gts, 0.7, "3d", "hard") == pytest.approx(ap40, abs=1e-12)
    assert average_precision(dets, gts, 0.7, "3d", "easy") is None


@settings(max_examples=25, deadline=None)
@given(st.permutations(range(3)))
def test_ap_ignores_detection_order(perm):
    dets, gts, ap40, _ = ap_staircase_fixture()
    assert average_precision([dets[i] for i in perm], gts) == pytest.approx(ap40, abs=1e-12)


def test_each_gt_matched_once():
    dets = [Detection("f", CAR, 0.9), Detection("f", CAR, 0.8)]
    # second copy is a false positive: precision 1, 1/2 at recall 1
    assert average_precision(dets, [GroundTruth("f", CAR, "easy")], difficulty="easy") == pytest.approx(100.0)
    assert average_precision(dets[::-1], [GroundTruth("f", CAR, "easy"), GroundTruth("f", CAR, "easy")],
                             difficulty="easy") == pytest.approx(100.0)


def test_detection_on_ignored_object_is_not_a_false_positive():
    other = Box3D(25.0, 0.0, -0.8, 1.5, 3.9, 1.6, 0.0)
    gts = [GroundTruth("f", CAR, "easy"), GroundTruth("f", other, "ignored")]
    dets = [Detection("f", other, 0.9), Detection("f", CAR, 0.5)]
    assert average_precision(dets, gts, difficulty="easy") == pytest.approx(100.0)


def test_detections_in_other_frames_do_not_match():
    gts = [GroundTruth("f", CAR, "easy")]
    assert average_precision([Detection("g", CAR, 1.0)], gts, difficulty="easy") == 0.0


def test_interpolation_grids():
    assert interpolated_ap(np.array([1.0]), np.array([1.0])) == pytest.approx(100.0)
    assert interpolated_ap(np.array([1.0]), np.array([0.5]), points=11) == pytest.approx(600 / 11)
    with pytest.raises(ValueError):
        interpolated_ap(np.array([1.0]), np.array([1.0]), points=20)


def test_label_dirs_against_themselves(small_dataset):
    rep = evaluate_label_dirs(small_dataset, small_dataset)
    assert rep.miou == pytest.approx(1.0) and rep.recall == 1.0
    assert rep.counts["unlabeled_gt"] == 0
    assert 100.0 * rep.miou == pytest.approx(100.0)


def test_label_dirs_unmatched_prediction_is_alignment_error(small_dataset, tmp_path):
    pred = tmp_path / "pred"
    shutil.copytree(small_dataset / "label_2", pred / "label_2")
    first = sorted((pred / "label_2").glob("*.txt"))[0]
    lines = first.read_text().splitlines()
    parts = lines[0].split()
    parts[4:8] = ["0.00", "0.00", "1.00", "1.00"]  # a 2D box no gt object has
    first.write_text("\n".join([" ".join(parts), *lines[1:]]) + "\n")
    with pytest.raises(AlignmentError):
        evaluate_label_dirs(pred, small_dataset)


def test_model_report(trained_chain, small_samples):
    model = load_model(trained_chain["box"])
    rep = evaluate_model(model, small_samples)
    assert rep.counts["objects"] == len(small_samples)
    assert 0.0 <= rep.miou <= 1.0 and 0.0 <= rep.recall <= 1.0
    assert rep.merr is not None and rep.merr >= 0 and rep.merr_unit == "m"
    for table in (rep.ap_3d, rep.ap_bev):
        assert all(v is None or 0.0 <= v <= 100.0 for v in table.values())
    assert json.loads(rep.to_json())["fingerprint"] == rep.fingerprint
    assert "mErr (m)" in report_table(rep)
    again = evaluate_model(model, small_samples)
    assert again.to_dict() == rep.to_dict()


def test_ablation_rows(trained_chain, small_samples, tmp_path):
    variants = {"full": trained_chain["box"], "copy": trained_chain["box"], "gating": tmp_path / "none.mgck"}
    rows = ablation_run(small_samples[:10], variants)
    assert [r["variant"] for r in rows] == ["full", "copy", "gating"]
    assert {k: rows[0][k] for k in ("mErr", "mIoU", "recall")} == {k: rows[1][k] for k in ("mErr", "mIoU", "recall")}
    assert rows[2]["absent"] and rows[2]["mIoU"] is None
    table = ablation_table(rows)
    assert len(table.splitlines()) == 1 + len(variants)
    assert "absent" in table.splitlines()[-1]
