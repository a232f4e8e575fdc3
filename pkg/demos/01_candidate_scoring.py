"""Score every candidate grade for one student answer.

Each grade in the rubric becomes a structured completion; the backend reports
one summed log-likelihood per candidate. Run: python3 demos/01_candidate_scoring.py
"""

import numpy as np

from gradegate import (
    GradingInstance,
    Rubric,
    ScorerProfile,
    enumerate_candidates,
    load_template,
    render_prompt,
    score_instance,
    synthetic_backend,
)

instance = GradingInstance(
    id="demo-1",
    question="Why does bagging reduce the variance of a decision-tree ensemble?",
    answer="Averaging many trees trained on bootstrap samples cancels out "
           "their individual fluctuations.",
    rubric=Rubric(5),
    gold_grade=4,
    split_tag="test_UA",
)

template = load_template("basic")
system, user = render_prompt(template, instance)
print("system prompt:", system)
print("user prompt:")
print(user)
print()

print("candidate completions (scored in one batched request):")
for cand in enumerate_candidates(instance.rubric):
    print("  ", cand.completion_text)
print()

backend = synthetic_backend(ScorerProfile(sharpness=6.0, noise=0.8, correlation=0.9), seed=3)
vector = score_instance(backend, template, instance)
print("logit vector z:", np.round(vector.z, 3))
print("argmax grade:", int(np.argmax(vector.z)), "(gold is", instance.gold_grade, ")")
