from collections import Counter

import numpy as np
import pytest

from csff import classify
from csff.errors import DataError


# --- centers ---------------------------------------------------------------

def test_estimate_centers_singleton():
    cs = classify.estimate_centers(np.array([[1.0, 2.0]]), np.array([1]), 1)
    assert np.array_equal(cs.centers[0], [1.0, 2.0])


def test_estimate_centers_midpoint():
    feats = np.array([[0.0, 0.0], [2.0, 2.0], [5.0, 5.0]])
    cs = classify.estimate_centers(feats, np.array([1, 1, 2]), 2)
    assert np.array_equal(cs.centers[0], [1.0, 1.0])


def test_estimate_centers_permutation_invariant():
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((30, 4))
    labels = rng.integers(1, 4, size=30)
    a = classify.estimate_centers(feats, labels, 3)
    perm = rng.permutation(30)
    b = classify.estimate_centers(feats[perm], labels[perm], 3)
    assert np.allclose(a.centers, b.centers, atol=1e-12)


def test_estimate_centers_empty_class_named():
    with pytest.raises(DataError, match="class 2"):
        classify.estimate_centers(np.ones((2, 2)), np.array([1, 1]), 2)


# --- center classifier -----------------------------------------------------

def test_classify_center_exact_hit():
    cs = classify.CenterSet(np.array([[0.0, 0.0], [3.0, 3.0], [9.0, 9.0]]))
    assert classify.classify_center(np.array([3.0, 3.0]), cs) == 2


def test_classify_center_two_distances():
    cs = classify.CenterSet(np.array([[0.0, 0.0], [1.0, 1.0]]))
    assert classify.classify_center(np.array([0.9, 0.9]), cs) == 2


def test_classify_center_tie_lowest_index():
    cs = classify.CenterSet(np.array([[0.0, 1.0], [0.0, -1.0]]))
    assert classify.classify_center(np.array([5.0, 0.0]), cs) == 1


def test_classify_center_scaling_invariant():
    rng = np.random.default_rng(1)
    centers = rng.standard_normal((4, 6))
    cs = classify.CenterSet(centers)
    for _ in range(50):
        f = rng.standard_normal(6)
        base = classify.classify_center(f, cs)
        for scale in (0.25, 3.0, 1e3):
            scaled = classify.CenterSet(centers * scale)
            assert classify.classify_center(f * scale, scaled) == base


def test_classify_center_batch_matches_single():
    rng = np.random.default_rng(2)
    cs = classify.CenterSet(rng.standard_normal((5, 3)))
    feats = rng.standard_normal((20, 3))
    batch = classify.classify_center_batch(feats, cs)
    assert all(batch[i] == classify.classify_center(feats[i], cs) for i in range(20))


# --- kNN ---------------------------------------------------------------

def brute_force_knn(f, train, labels, k):
    d2 = [float(np.sum((t - f) ** 2)) for t in train]
    order = sorted(range(len(train)), key=lambda i: (d2[i], i))
    votes = Counter(labels[i] for i in order[:k])
    best = max(votes.values())
    return min(c for c, v in votes.items() if v == best)


def test_knn_k1_nearest():
    train = np.array([[0.0], [10.0]])
    labels = np.array([1, 2])
    assert classify.classify_knn(np.array([1.0]), train, labels, 1) == 1


def test_knn_unanimous():
    train = np.array([[0.0], [0.1], [0.2], [50.0]])
    labels = np.array([3, 3, 3, 1])
    assert classify.classify_knn(np.array([0.05]), train, labels, 3) == 3


def test_knn_matches_brute_force_oracle():
    rng = np.random.default_rng(3)
    for trial in range(30):
        n = rng.integers(5, 25)
        train = rng.standard_normal((n, 3)).round(1)  # rounding forces ties
        labels = rng.integers(1, 5, size=n)
        f = rng.standard_normal(3).round(1)
        for k in (1, 3, 5):
            if k > n:
                continue
            got = classify.classify_knn(f, train, labels, k)
            assert got == brute_force_knn(f, train, labels, k)


def test_knn_k_validation():
    train = np.zeros((3, 2))
    labels = np.array([1, 1, 2])
    with pytest.raises(ValueError):
        classify.classify_knn(np.zeros(2), train, labels, 0)
    with pytest.raises(ValueError):
        classify.classify_knn(np.zeros(2), train, labels, 4)


# --- confusion matrix ------------------------------------------------------

def test_confusion_perfect_diagonal():
    truth = np.array([1, 2, 3, 1, 2, 3])
    cm = classify.confusion_matrix(truth, truth, 3)
    assert np.array_equal(cm, np.diag([2, 2, 2]))


def test_confusion_single_off_diagonal():
    cm = classify.confusion_matrix(np.array([2]), np.array([1]), 2)
    assert cm[0, 1] == 1 and cm.sum() == 1


def test_confusion_row_sums_count_truth():
    rng = np.random.default_rng(4)
    truth = rng.integers(1, 5, size=200)
    pred = rng.integers(1, 5, size=200)
    cm = classify.confusion_matrix(pred, truth, 4)
    for cls in range(1, 5):
        assert cm[cls - 1].sum() == (truth == cls).sum()


def test_confusion_rejects_label_zero():
    with pytest.raises(DataError):
        classify.confusion_matrix(np.array([0]), np.array([1]), 2)


# --- metrics ---------------------------------------------------------------

def metrics_from_lists(pred, truth, k):
    """Brute-force recomputation straight from label lists."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    oa = (pred == truth).mean()
    accs = []
    for cls in range(1, k + 1):
        m = truth == cls
        if m.any():
            accs.append((pred[m] == cls).mean())
    aa = float(np.mean(accs))
    pe = sum((truth == c).mean() * (pred == c).mean() for c in range(1, k + 1))
    kappa = (oa - pe) / (1 - pe)
    return oa, aa, kappa


def test_metrics_perfect():
    rep = classify.compute_metrics(np.diag([3, 4, 5]))
    assert rep.oa == rep.aa == rep.kappa == 1.0


def test_metrics_hand_case():
    rep = classify.compute_metrics(np.array([[1, 1], [1, 1]]))
    assert rep.oa == 0.5 and rep.aa == 0.5 and rep.kappa == 0.0


def test_metrics_match_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(200):
        k = int(rng.integers(2, 11))
        n = int(rng.integers(k, 300))
        truth = rng.integers(1, k + 1, size=n)
        pred = np.where(rng.uniform(size=n) < 0.6, truth, rng.integers(1, k + 1, size=n))
        cm = classify.confusion_matrix(pred, truth, k)
        rep = classify.compute_metrics(cm)
        oa, aa, kappa = metrics_from_lists(pred, truth, k)
        assert abs(rep.oa - oa) <= 1e-12
        assert abs(rep.aa - aa) <= 1e-12
        assert abs(rep.kappa - kappa) <= 1e-12


def test_metrics_relabeling_invariant():
    rng = np.random.default_rng(6)
    truth = rng.integers(1, 5, size=120)
    pred = rng.integers(1, 5, size=120)
    base = classify.compute_metrics(classify.confusion_matrix(pred, truth, 4))
    perm = np.array([3, 1, 4, 2])  # class relabeling
    rep = classify.compute_metrics(
        classify.confusion_matrix(perm[pred - 1], perm[truth - 1], 4))
    assert rep.oa == pytest.approx(base.oa, abs=1e-12)
    assert rep.aa == pytest.approx(base.aa, abs=1e-12)
    assert rep.kappa == pytest.approx(base.kappa, abs=1e-12)


def test_kappa_bounds_and_diagonal_condition():
    rng = np.random.default_rng(7)
    for _ in range(100):
        k = int(rng.integers(2, 6))
        cm = rng.integers(0, 20, size=(k, k))
        if cm.sum() == 0:
            continue
        try:
            rep = classify.compute_metrics(cm)
        except DataError:
            continue
        assert rep.kappa <= 1.0 + 1e-12
        if rep.kappa == 1.0:
            assert np.array_equal(cm, np.diag(np.diag(cm)))


def test_metrics_empty_row_excluded_from_aa():
    cm = np.array([[4, 0], [0, 0]])
    rep = classify.compute_metrics(cm)
    assert rep.aa == 1.0
    assert np.isnan(rep.per_class[1])


def test_metrics_degenerate_single_cell():
    # all mass in one diagonal cell is the only way to reach p_e = 1
    rep = classify.compute_metrics(np.array([[7]]))
    assert rep.kappa == 1.0


def test_metrics_empty_matrix_rejected():
    with pytest.raises(DataError):
        classify.compute_metrics(np.zeros((2, 2)))
