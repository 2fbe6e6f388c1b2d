import itertools
import json
import math

import numpy as np
import pytest

from models.errors import ArgumentError
from models.metrics import (MetricsReport, acc_f1_from_predictions, compute_acc_f1, compute_auc, compute_gap,
                            evaluate_scores, min_max_normalize, pixel_metrics)

EXAMPLE = [(0.1, "normal"), (0.4, "abnormal"), (0.35, "normal"), (0.8, "abnormal")]
# One of the four abnormal/normal pairs is out of order
ONE_SWAPPED = [(0.1, "normal"), (0.4, "abnormal"), (0.5, "normal"), (0.8, "abnormal")]


def _pair_count_auc(scores, labels):
    positives = [s for s, l in zip(scores, labels) if l]
    negatives = [s for s, l in zip(scores, labels) if not l]
    total = 0.0
    for p, n in itertools.product(positives, negatives):
        total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(positives) * len(negatives))


class TestAuc:
    def test_worked_example(self):
        assert compute_auc(EXAMPLE) == 1.0
        assert compute_auc(ONE_SWAPPED) == pytest.approx(0.75)

    def test_perfect_and_inverted(self):
        assert compute_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert compute_auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0

    def test_all_tied(self):
        assert compute_auc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5

    def test_matches_pair_counting(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 40))
            labels = rng.integers(0, 2, size=n)
            labels[0], labels[1] = 0, 1
            scores = np.round(rng.random(n), 1)
            assert compute_auc(scores, labels) == pytest.approx(_pair_count_auc(scores, labels), abs=1e-12)

    def test_monotone_transform_invariance(self, rng):
        scores = rng.random(30)
        labels = np.arange(30) % 2
        assert compute_auc(np.exp(3 * scores) + 7, labels) == pytest.approx(compute_auc(scores, labels))

    def test_single_class(self):
        with pytest.raises(ArgumentError):
            compute_auc([0.1, 0.2], ["normal", "normal"])

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            compute_auc([0.1, 0.2, 0.3], [0, 1])


class TestAccF1:
    def test_confusion_example(self):
        predictions = [1, 1, 1, 0, 0]
        labels = [1, 1, 0, 1, 0]
        acc, f1 = acc_f1_from_predictions(predictions, labels)
        assert f1 == pytest.approx(2 / 3)
        assert acc == pytest.approx(3 / 5)

    def test_no_positive_predictions(self):
        assert acc_f1_from_predictions([0, 0, 0], [1, 0, 1])[1] == 0.0

    def test_worked_example_at_half(self):
        acc, f1 = compute_acc_f1([s for s, _ in EXAMPLE], [l for _, l in EXAMPLE])
        assert acc == pytest.approx(0.75)
        assert f1 == pytest.approx(2 / 3)

    def test_threshold_is_inclusive(self):
        acc, _ = compute_acc_f1([0.0, 0.5, 1.0], [0, 1, 1], threshold=0.5)
        assert acc == 1.0

    def test_threshold_range(self):
        with pytest.raises(ArgumentError):
            compute_acc_f1([0.1, 0.2], [0, 1], threshold=1.5)


class TestGap:
    def test_separated(self):
        assert compute_gap([0, 0, 1, 1], [0, 0, 1, 1]) == (0.0, 1.0, 1.0)

    def test_equal_means(self):
        assert compute_gap([0.2, 0.8, 0.8, 0.2], [0, 0, 1, 1])[2] == pytest.approx(0.0)

    def test_worked_example(self):
        mean_n, mean_a, gap = compute_gap([s for s, _ in EXAMPLE], [l for _, l in EXAMPLE])
        assert mean_n == pytest.approx(0.25 / 1.4)
        assert mean_a == pytest.approx(1.0 / 1.4)
        assert gap == pytest.approx(0.75 / 1.4)

    def test_constant_scores(self):
        assert not min_max_normalize([3.0, 3.0]).any()
        assert compute_gap([3.0, 3.0], [0, 1])[2] == 0.0


class TestReport:
    def test_evaluate_scores(self):
        report = evaluate_scores([s for s, _ in EXAMPLE], [l for _, l in EXAMPLE], tag="row8")
        assert (report.n_normal, report.n_abnormal) == (2, 2)
        assert report.auc == 1.0
        assert "auc = 1.000000" in report.to_text()

    def test_json_is_strict(self):
        report = MetricsReport(0.5, 0.5, 0.5, 0.0, 1.0, 1.0, extra={"pixel_auc_per_image": float("nan")})
        data = json.loads(report.to_json())
        assert data["extra"]["pixel_auc_per_image"] is None
        assert not math.isnan(data["auc"])


class TestPixelMetrics:
    def test_lesion_pixels_lit_up(self):
        mask = np.zeros((16, 16))
        mask[4:8, 4:8] = 1
        result = pixel_metrics([mask * 0.9, np.zeros((16, 16))], [mask, None])
        assert result["pixel_auc"] == 1.0
        assert result["pixel_auc_per_image"] == 1.0
        assert result["pixel_f1"] == 1.0

    def test_no_positive_pixels(self):
        assert pixel_metrics([np.zeros((16, 16))], [None]) == {}
