"""Ordinal agreement metrics and the accepted/rejected quality gap.

QWK penalizes disagreements by squared grade distance; the split report
contrasts gate-accepted and gate-rejected subsets the way the cycle reports
do. Run: python3 demos/04_agreement_metrics.py
"""

import numpy as np

from gradegate import ConfusionMatrix, basic_metrics, qwk, shift_delta, split_report

preds = [0, 1, 2, 2, 3, 4, 5, 5, 1, 0, 3, 2]
golds = [0, 1, 2, 1, 3, 5, 5, 4, 1, 2, 3, 2]

cm = ConfusionMatrix.from_pairs(preds, golds, max_grade=5)
print("confusion counts (rows = predicted, cols = gold):")
print(cm.counts)
print(f"QWK = {qwk(cm):.3f}")
print()

report = basic_metrics(preds, golds)
print(f"n={report.n}  mae={report.mae:.3f}  exact={report.exact_match:.3f}  "
      f"off_by_1={report.off_by_1:.3f}  offset={report.mean_offset:+.3f}")
print()

# pretend the first eight were confident enough to auto-release
accepted_mask = [True] * 8 + [False] * 4
sides = split_report(preds, golds, accepted_mask)
print(f"accepted: n={sides.accepted.n} qwk={sides.accepted.qwk:.3f} "
      f"mae={sides.accepted.mae:.3f}")
print(f"rejected: n={sides.rejected.n} qwk={sides.rejected.qwk:.3f} "
      f"mae={sides.rejected.mae:.3f}")
print(f"accepted-minus-rejected QWK gap: {sides.gap_qwk:+.3f}")
print()

# distribution-shift delta: loss increase from seen to unseen questions
seen = basic_metrics([0, 1, 2, 3, 4], [0, 1, 2, 3, 4])
unseen = basic_metrics([0, 3, 2, 0, 4], [0, 1, 2, 3, 4])
print(f"shift delta (mae): {shift_delta(seen, unseen):+.3f}")
