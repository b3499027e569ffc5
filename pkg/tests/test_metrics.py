import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import mann_whitney_auc, ssim_brute

from lensmae.metrics import (
    CLS_COLUMNS,
    SR_COLUMNS,
    MetricsReport,
    accuracy,
    auc_ovr_macro,
    binary_auc,
    classification_report,
    confusion_matrix,
    macro_f1,
    mse,
    per_class_f1,
    psnr,
    psnr_from_mse,
    reliability_bins,
    roc_curve,
    rows_to_csv,
    sr_report,
    ssim,
)

# --- confusion / accuracy / F1 -----------------------------------------------


def test_confusion_perfect_is_diagonal():
    y = np.array([0, 0, 1, 2, 2, 2])
    np.testing.assert_array_equal(confusion_matrix(y, y), np.diag([2, 1, 3]))


def test_confusion_single_predicted_column():
    y = np.array([0, 1, 2, 1])
    cm = confusion_matrix(y, np.zeros(4, int))
    assert cm[:, 0].tolist() == [1, 2, 1] and cm[:, 1:].sum() == 0
    assert cm.sum() == 4


def test_confusion_rows_are_true_class():
    cm = confusion_matrix([2], [0])
    assert cm[2, 0] == 1


def test_confusion_label_out_of_range():
    with pytest.raises(ValueError):
        confusion_matrix([0, 3], [0, 0])


def test_perfect_scores():
    cm = confusion_matrix([0, 1, 2], [0, 1, 2])
    assert accuracy(cm) == 1.0 and macro_f1(cm) == 1.0


def test_never_predicted_class_has_zero_f1():
    cm = confusion_matrix([0, 1, 2, 2], [0, 1, 1, 0])
    assert per_class_f1(cm)[2] == 0.0


def test_hand_computed_f1_and_accuracy():
    cm = np.array([[5, 1, 0], [2, 3, 1], [0, 2, 4]])
    f1 = per_class_f1(cm)
    np.testing.assert_allclose(f1, [10 / 13, 1 / 2, 8 / 11], rtol=0, atol=1e-12)
    assert abs(macro_f1(cm) - (10 / 13 + 1 / 2 + 8 / 11) / 3) < 1e-12
    assert abs(accuracy(cm) - 2 / 3) < 1e-12


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        accuracy(np.zeros((3, 3)))


# --- ROC / AUC ---------------------------------------------------------------


def test_perfect_separation_auc_one():
    assert binary_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0


def test_all_tied_auc_half_and_curve_is_diagonal_step():
    fpr, tpr = roc_curve([0.5] * 4, [0, 1, 0, 1])
    np.testing.assert_array_equal(fpr, [0, 1])
    np.testing.assert_array_equal(tpr, [0, 1])
    assert binary_auc([0.5] * 4, [0, 1, 0, 1]) == 0.5


def test_auc_matches_mann_whitney_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(5, 60))
        # coarse rounding forces plenty of ties
        scores = np.round(rng.random(n), int(rng.integers(1, 3)))
        pos = rng.random(n) < 0.4
        pos[0], pos[1] = True, False
        assert abs(binary_auc(scores, pos) - mann_whitney_auc(scores, pos)) < 1e-9


def test_independent_labels_auc_near_half():
    rng = np.random.default_rng(1)
    probs = rng.dirichlet(np.ones(3), size=2000)
    labels = rng.integers(0, 3, 2000)
    per, macro = auc_ovr_macro(probs, labels)
    assert np.all(np.abs(per - 0.5) < 0.03)
    assert abs(macro - 0.5) < 0.03


def test_missing_class_warns_and_averages_rest():
    probs = np.array([[0.8, 0.1, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1], [0.1, 0.8, 0.1]])
    with pytest.warns(UserWarning, match="undefined"):
        per, macro = auc_ovr_macro(probs, [0, 1, 0, 1])
    assert math.isnan(per[2])
    assert macro == pytest.approx(np.nanmean(per))


def test_roc_needs_both_classes():
    with pytest.raises(ValueError):
        roc_curve([0.1, 0.2], [1, 1])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10), st.floats(-5, 5))
def test_auc_invariant_under_monotone_maps(seed, scale, shift):
    rng = np.random.default_rng(seed)
    scores = np.round(rng.random(30), 2)
    pos = rng.random(30) < 0.5
    pos[:2] = [True, False]
    base = binary_auc(scores, pos)
    assert binary_auc(np.exp(scores), pos) == pytest.approx(base, abs=1e-12)
    assert binary_auc(scale * scores + shift, pos) == pytest.approx(base, abs=1e-12)


def test_macro_metrics_invariant_under_class_relabeling():
    rng = np.random.default_rng(2)
    probs = rng.dirichlet(np.ones(3), size=90)
    labels = rng.integers(0, 3, 90)
    perm = np.array([2, 0, 1])  # new class index of old class c is perm[c]
    new_probs = np.empty_like(probs)
    new_probs[:, perm] = probs
    new_labels = perm[labels]
    assert auc_ovr_macro(new_probs, new_labels)[1] == pytest.approx(auc_ovr_macro(probs, labels)[1], abs=1e-12)
    cm = confusion_matrix(labels, probs.argmax(1))
    cm2 = confusion_matrix(new_labels, new_probs.argmax(1))
    assert macro_f1(cm2) == pytest.approx(macro_f1(cm), abs=1e-12)


# --- reliability -------------------------------------------------------------


def test_confident_correct_single_top_bin():
    probs = np.eye(3)[[0, 1, 2, 1]]
    rb = reliability_bins(probs, [0, 1, 2, 1])
    assert rb.count[-1] == 4 and rb.count[:-1].sum() == 0
    assert rb.confidence[-1] == 1.0 and rb.accuracy[-1] == 1.0 and rb.ece == 0.0


def test_uniform_probs_land_in_third_bin():
    rb = reliability_bins(np.full((5, 3), 1 / 3), [0, 1, 2, 0, 1])
    assert rb.count[3] == 5 and rb.count.sum() == 5


def test_ece_hand_fixture():
    probs = np.array([
        [0.90, 0.05, 0.05],
        [0.85, 0.10, 0.05],
        [0.20, 0.70, 0.10],
        [0.30, 0.60, 0.10],
        [0.50, 0.25, 0.25],
        [0.34, 0.33, 0.33],
    ])
    labels = [0, 1, 1, 0, 0, 2]
    rb = reliability_bins(probs, labels)
    # bins (0.8,0.9]: |1 - 1.75|; (0.6,0.7]: |1 - .7|; (0.5,0.6]: |0 - .6|; (0.4,0.5]: |1 - .5|; (0.3,0.4]: |0 - .34|
    assert rb.ece == pytest.approx((0.75 + 0.3 + 0.6 + 0.5 + 0.34) / 6, abs=1e-12)
    assert rb.count.tolist() == [0, 0, 0, 1, 1, 1, 1, 0, 2, 0]


def test_reliability_rejects_zero_bins():
    with pytest.raises(ValueError):
        reliability_bins(np.eye(3), [0, 1, 2], n_bins=0)


# --- PSNR / SSIM -------------------------------------------------------------


def test_psnr_log_identities():
    assert psnr_from_mse(0.01) == 20.0
    assert psnr_from_mse(1.0) == 0.0
    x = np.random.default_rng(0).random((8, 8))
    assert psnr(x, x) == math.inf


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((3, 3)))


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-8, 10), st.floats(1e-8, 10))
def test_psnr_strictly_decreasing_in_mse(a, b):
    if a == b:
        return
    lo, hi = min(a, b), max(a, b)
    assert psnr_from_mse(lo) > psnr_from_mse(hi)


def test_mse_basic():
    assert mse(np.full((4, 4), 0.1), np.zeros((4, 4))) == pytest.approx(0.01, abs=1e-15)


def test_ssim_identity_exactly_one():
    x = np.random.default_rng(1).random((20, 20))
    assert ssim(x, x) == 1.0


def test_ssim_inverted_checkerboard_negative():
    board = (np.indices((16, 16)).sum(0) % 2).astype(float)
    assert ssim(board, 1 - board) < 0


def test_ssim_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(3):
        a, b = rng.random((16, 16)), rng.random((16, 16))
        assert abs(ssim(a, b) - ssim_brute(a, b)) < 1e-9
    a = rng.random((16, 16))
    b = np.clip(a + 0.05 * rng.standard_normal((16, 16)), 0, 1)
    assert abs(ssim(a, b) - ssim_brute(a, b)) < 1e-9


def test_ssim_symmetric():
    rng = np.random.default_rng(3)
    a, b = rng.random((24, 24)), rng.random((24, 24))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


def test_ssim_batched_is_mean_of_images():
    rng = np.random.default_rng(4)
    a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
    assert ssim(a, b) == pytest.approx(np.mean([ssim(a[i], b[i]) for i in range(3)]), abs=1e-12)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 10)), np.zeros((10, 10)))


# --- reports -----------------------------------------------------------------


def test_classification_report_invariants():
    rng = np.random.default_rng(5)
    probs = rng.dirichlet(np.ones(3), size=60)
    labels = rng.integers(0, 3, 60)
    rep = classification_report(probs, labels, "demo", "abc")
    cm = np.array(rep.confusion)
    assert cm.sum() == 60
    assert rep.accuracy == np.trace(cm) / 60
    assert sum(rep.reliability["count"]) == 60
    assert list(rep.row()) == list(CLS_COLUMNS)
    back = MetricsReport.from_json(rep.to_json())
    assert back.auc_macro == rep.auc_macro and back.confusion == rep.confusion


def test_sr_report_infinite_sentinel_round_trip():
    x = np.random.default_rng(6).random((2, 16, 16))
    rep = sr_report(x, x, "perfect")
    assert rep.psnr_infinite and rep.psnr_db == math.inf
    data = json.loads(rep.to_json())
    assert data["psnr_db"] == "inf"
    assert MetricsReport.from_json(rep.to_json()).psnr_db == math.inf
    assert list(rep.row()) == list(SR_COLUMNS)


def test_report_json_has_no_nan_tokens():
    probs = np.array([[0.8, 0.1, 0.1], [0.3, 0.6, 0.1], [0.7, 0.2, 0.1], [0.2, 0.7, 0.1]])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = classification_report(probs, [0, 1, 0, 1], "x")
    text = rep.to_json()
    assert "NaN" not in text
    assert json.loads(text)["auc_per_class"][2] is None


def test_rows_to_csv_format():
    text = rows_to_csv(("experiment", "psnr_db"), [{"experiment": "a", "psnr_db": math.inf},
                                                   {"experiment": "b", "psnr_db": 0.1}])
    assert text == "experiment,psnr_db\na,inf\nb,0.1\n"
