import math

import numpy as np
import pytest

from gradegate.calibration import (
    CalibrationError,
    GridSpec,
    TemperatureParam,
    apply_temperature,
    calibration_report,
    compute_ece,
    fit_temperature,
    max_confidence_gap,
    softmax,
)
from gradegate.dataset import Rubric
from gradegate.scoring import LogitVector


def ece_oracle(confidences, corrects, bins):
    """Brute-force ECE: explicit per-bin loops, no vectorization.

    Bin b covers [b/bins, (b+1)/bins), last bin closed at 1; edge values go up.
    """
    n = len(confidences)
    total = 0.0
    for b in range(bins):
        members = [
            i
            for i, c in enumerate(confidences)
            if (min(int(c * bins), bins - 1)) == b
        ]
        if not members:
            continue
        acc = sum(1.0 for i in members if corrects[i]) / len(members)
        conf = sum(confidences[i] for i in members) / len(members)
        total += (len(members) / n) * abs(acc - conf)
    return total


def vec(z, g_max=None, iid=None):
    z = np.asarray(z, dtype=float)
    return LogitVector(Rubric(g_max if g_max is not None else len(z) - 1), z, instance_id=iid)


def preds_from(z_rows, temperature):
    return [apply_temperature(vec(z), temperature) for z in z_rows]


def random_pred_set(rng, n, g_max):
    z = rng.normal(0, 2.0, (n, g_max + 1))
    preds = preds_from(z, 1.0)
    golds = rng.integers(0, g_max + 1, n).tolist()
    return preds, golds


def generate_calibrated_logits(n, k, seed, spread=1.5):
    """Logits whose softmax probabilities are calibrated by construction."""
    rng = np.random.default_rng(seed)
    raw = rng.normal(0.0, spread, (n, k))
    p = np.exp(raw - raw.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    golds = [int(rng.choice(k, p=pi)) for pi in p]
    return np.log(p), golds


class TestSoftmaxAndApply:
    def test_softmax_t1_example(self):
        p = softmax(np.array([2.0, 1.0, 0.0]), 1.0)
        assert np.allclose(p, [0.665, 0.245, 0.090], atol=5e-4)

    def test_softmax_t_half_example(self):
        p = softmax(np.array([2.0, 1.0, 0.0]), 0.5)
        assert np.allclose(p, [0.867, 0.117, 0.016], atol=5e-4)

    def test_normalization_and_confidence_floor(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            k = int(rng.integers(2, 12))
            t = float(rng.uniform(0.1, 2.0))
            z = rng.normal(0, 5, k)
            p = softmax(z, t)
            assert abs(p.sum() - 1.0) < 1e-9
            pred = apply_temperature(vec(z, k - 1), t)
            assert pred.confidence >= 1.0 / k
            assert pred.grade == int(np.argmax(pred.probabilities))

    def test_argmax_invariance(self):
        rng = np.random.default_rng(1)
        grid = GridSpec().points()
        sample_ts = grid[:: len(grid) // 20]
        for _ in range(200):
            z = rng.normal(0, 3, int(rng.integers(2, 12)))
            base = int(np.argmax(z))
            for t in sample_ts:
                assert int(np.argmax(softmax(z, float(t)))) == base

    def test_apply_temperature_fields(self):
        pred = apply_temperature(vec([3.0, 1.0, 0.0], iid="a1"), 2.0)
        assert pred.instance_id == "a1"
        assert pred.grade == 0
        assert pred.confidence == pred.probabilities.max()
        assert pred.confidence >= 1.0 / 3
        assert pred.temperature_used == 2.0

    def test_tie_breaks_to_lowest_grade(self):
        pred = apply_temperature(vec([1.0, 1.0, 0.0]), 1.0)
        assert pred.grade == 0

    def test_overflow_safe(self):
        pred = apply_temperature(vec([1e4, 0.0]), 0.1)
        assert pred.confidence == 1.0

    def test_bad_temperature(self):
        with pytest.raises(CalibrationError):
            apply_temperature(vec([1.0, 0.0]), 0.0)
        with pytest.raises(CalibrationError):
            TemperatureParam(value=-1.0)

    def test_smoothing_limit_monotone(self):
        z = vec([4.0, 2.0, 1.0, 0.5])
        confidences = [apply_temperature(z, float(t)).confidence for t in GridSpec().points()]
        assert all(a >= b for a, b in zip(confidences, confidences[1:]))
        assert apply_temperature(z, 1e6).confidence == pytest.approx(0.25, abs=1e-5)


class TestEce:
    def test_perfect_predictions(self):
        preds = preds_from([[50.0, 0.0], [50.0, 0.0]], 1.0)
        report = compute_ece(preds, [0, 0], bins=10)
        assert report.ece == pytest.approx(0.0, abs=1e-9)

    def test_single_bin_hand_example(self):
        # all confidences 0.95, 2 of 4 correct: ECE = |0.5 - 0.95| = 0.45
        logit = math.log(0.95 / 0.05)
        preds = preds_from([[logit, 0.0]] * 4, 1.0)
        report = compute_ece(preds, [0, 0, 1, 1], bins=10)
        assert report.ece == pytest.approx(0.45, abs=1e-9)
        assert report.bins.counts[9] == 4

    def test_empty_errors(self):
        with pytest.raises(CalibrationError):
            compute_ece([], [], bins=10)

    def test_mismatched_errors(self):
        preds = preds_from([[1.0, 0.0]], 1.0)
        with pytest.raises(CalibrationError):
            compute_ece(preds, [0, 1], bins=10)

    def test_oracle_equivalence(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            n = int(rng.integers(1, 400))
            g_max = int(rng.integers(1, 11))
            preds, golds = random_pred_set(rng, n, g_max)
            report = compute_ece(preds, golds, bins=10)
            expected = ece_oracle(
                [p.confidence for p in preds],
                [p.grade == g for p, g in zip(preds, golds)],
                bins=10,
            )
            assert abs(report.ece - expected) < 1e-12

    def test_bin_bookkeeping(self):
        rng = np.random.default_rng(8)
        preds, golds = random_pred_set(rng, 500, 4)
        report = compute_ece(preds, golds, bins=10)
        assert report.bins.counts.sum() == 500
        assert 0.0 <= report.ece <= 1.0


class TestMaxConfidenceGap:
    def test_perfect_single_bin(self):
        preds = preds_from([[60.0, 0.0]] * 3, 1.0)
        assert max_confidence_gap(preds, [0, 0, 0], bins=10) == pytest.approx(0.0, abs=1e-9)

    def test_two_bin_max(self):
        # bin A: conf ~0.55 all correct (gap ~0.45); bin B: conf ~0.95 all correct (gap ~0.05)
        za = math.log(0.55 / 0.45)
        zb = math.log(0.95 / 0.05)
        preds = preds_from([[za, 0.0], [zb, 0.0]], 1.0)
        gap = max_confidence_gap(preds, [0, 0], bins=10)
        assert gap == pytest.approx(0.45, abs=1e-9)

    def test_equals_ece_when_one_bin(self):
        logit = math.log(0.93 / 0.07)
        preds = preds_from([[logit, 0.0]] * 6, 1.0)
        golds = [0, 0, 0, 0, 1, 1]
        assert max_confidence_gap(preds, golds, 10) == pytest.approx(
            compute_ece(preds, golds, 10).ece, abs=1e-12
        )


class TestFitTemperature:
    def test_recovers_distortion(self):
        z, golds = generate_calibrated_logits(2000, 5, seed=11)
        pairs = [(vec(row), g) for row, g in zip(z * 0.5, golds)]
        fitted = fit_temperature(pairs)
        assert abs(fitted.value - 0.5) <= 0.05

    def test_fit_is_global_grid_minimum(self):
        z, golds = generate_calibrated_logits(300, 4, seed=13)
        pairs = [(vec(row), g) for row, g in zip(z * 1.4, golds)]
        grid = GridSpec(lo=0.5, hi=2.0, step=0.01)
        fitted = fit_temperature(pairs, grid=grid)
        eces = {}
        for t in grid.points():
            preds = [apply_temperature(v, float(t)) for v, _ in pairs]
            eces[float(t)] = compute_ece(preds, golds).ece
        assert eces[fitted.value] == min(eces.values())

    def test_ece_at_fit_not_worse_than_unit(self):
        rng = np.random.default_rng(21)
        z = rng.normal(0, 3, (400, 6))
        golds = rng.integers(0, 6, 400).tolist()
        pairs = [(vec(row), g) for row, g in zip(z, golds)]
        fitted = fit_temperature(pairs)
        at_fit = compute_ece([apply_temperature(v, fitted.value) for v, _ in pairs], golds).ece
        at_one = compute_ece([apply_temperature(v, 1.0) for v, _ in pairs], golds).ece
        assert at_fit <= at_one + 1e-12

    def test_tie_breaks_toward_one(self):
        # constant confidence 0.5 regardless of T: every grid point ties
        pairs = [(vec([0.0, 0.0]), 0), (vec([0.0, 0.0]), 1)]
        fitted = fit_temperature(pairs)
        assert fitted.value == 1.0

    def test_mixed_rubric_widths(self):
        za, ga = generate_calibrated_logits(300, 6, seed=3)
        zb, gb = generate_calibrated_logits(300, 11, seed=4)
        pairs = [(vec(r), g) for r, g in zip(za * 0.5, ga)]
        pairs += [(vec(r), g) for r, g in zip(zb * 0.5, gb)]
        fitted = fit_temperature(pairs)
        assert abs(fitted.value - 0.5) <= 0.08

    def test_empty_errors(self):
        with pytest.raises(CalibrationError):
            fit_temperature([])

    def test_grid_bounds_respected(self):
        z, golds = generate_calibrated_logits(500, 5, seed=5)
        pairs = [(vec(row), g) for row, g in zip(z * 3.0, golds)]  # wants T ~ 3
        fitted = fit_temperature(pairs)
        assert fitted.value <= 2.0

    def test_report_shape(self):
        z, golds = generate_calibrated_logits(400, 5, seed=6)
        pairs = [(vec(row), g) for row, g in zip(z * 0.5, golds)]
        temp, report = calibration_report(pairs, fitted_on="cal")
        payload = report.to_dict()
        assert payload["schema_version"] == 1
        assert payload["T_star"] == temp.value
        assert len(payload["bins"]) == 10
        assert payload["ece_after"] <= payload["ece_before"]
