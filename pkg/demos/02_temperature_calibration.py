"""Fit a temperature on held-out logits and watch ECE fall.

The demo fabricates a miscalibrated model by sharpening calibrated logits,
then recovers the distortion with the ECE grid search and prints the
reliability bins before and after. Run: python3 demos/02_temperature_calibration.py
"""

import numpy as np

from gradegate import Rubric, apply_temperature, compute_ece, fit_temperature
from gradegate.scoring import LogitVector

rng = np.random.default_rng(0)
n, k = 2000, 6

# calibrated by construction: labels drawn from the softmax itself
raw = rng.normal(0.0, 1.5, (n, k))
p = np.exp(raw - raw.max(axis=1, keepdims=True))
p /= p.sum(axis=1, keepdims=True)
golds = [int(rng.choice(k, p=pi)) for pi in p]

# the "deployed model" is overconfident: logits sharpened by 1/0.4
distorted = np.log(p) * 0.4
pairs = [(LogitVector(Rubric(k - 1), row), g) for row, g in zip(distorted, golds)]

before = [apply_temperature(v, 1.0) for v, _ in pairs]
report_before = compute_ece(before, golds)
print(f"ECE at T=1.0:  {report_before.ece:.4f}")

temperature = fit_temperature(pairs, fitted_on="demo-cal")
after = [apply_temperature(v, temperature.value) for v, _ in pairs]
report_after = compute_ece(after, golds)
print(f"fitted T* = {temperature.value:.3f}")
print(f"ECE at T*:     {report_after.ece:.4f}")
print()

print("reliability bins after scaling (confidence -> empirical accuracy):")
bins = report_after.bins
for row in bins.to_dicts():
    if row["count"] == 0:
        continue
    bar = "#" * int(40 * row["accuracy"])
    print(f"  [{row['lo']:.1f},{row['hi']:.1f})  n={row['count']:5d}  "
          f"conf={row['mean_confidence']:.3f}  acc={row['accuracy']:.3f}  {bar}")
