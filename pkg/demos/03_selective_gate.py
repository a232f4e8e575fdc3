"""Sweep the confidence threshold and pick an operating point.

Higher thresholds trade coverage for accepted-set quality; the selector takes
the largest threshold that clears the reliability target above the coverage
floor. Run: python3 demos/03_selective_gate.py
"""

import numpy as np

from gradegate import (
    ReliabilityTarget,
    ScorerProfile,
    apply_temperature,
    fit_temperature,
    load_template,
    score_instance,
    select_operating_point,
    sweep_thresholds,
    synthetic_backend,
)
from gradegate.gate import curve_to_csv
from gradegate.dataset import GradingInstance, Rubric

rng = np.random.default_rng(1)
backend = synthetic_backend(ScorerProfile(sharpness=8.0, noise=1.0, correlation=0.8), seed=9)
template = load_template("basic")


def corpus(tag, n, prefix):
    out = []
    for i in range(n):
        out.append(GradingInstance(
            id=f"{prefix}{i:04d}",
            question=f"Question about topic {i % 40}?",
            answer=f"Answer {i} with some discussion of topic {i % 40}.",
            rubric=Rubric(5),
            gold_grade=int(rng.integers(0, 6)),
            split_tag=tag,
        ))
    return out


cal = corpus("cal", 500, "c")
temperature = fit_temperature(
    [(score_instance(backend, template, inst), inst.gold_grade) for inst in cal]
)
print(f"T* fitted on {len(cal)} calibration answers: {temperature.value:.3f}")

test = corpus("test_UA", 1000, "t")
preds, golds = [], []
for inst in test:
    preds.append(apply_temperature(score_instance(backend, template, inst), temperature))
    golds.append(inst.gold_grade)

curve = sweep_thresholds(preds, golds, (0.4, 0.5, 0.6, 0.8, 0.9))
print()
print(curve_to_csv(curve))

selection = select_operating_point(
    curve, ReliabilityTarget(metric="qwk", min_value=0.80), coverage_floor=0.35
)
flag = " (target missed; best-effort point)" if selection.target_miss else ""
print(f"selected tau={selection.point.tau}: coverage={selection.point.coverage:.3f}, "
      f"accepted QWK={selection.point.accepted_qwk:.3f}{flag}")
