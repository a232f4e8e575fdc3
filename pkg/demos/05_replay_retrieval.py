"""Build a scale-aware replay buffer from a correction set.

For each corrected question the k most similar training questions are
retrieved, then the buffer is down-sampled so corrections-plus-buffer mirror
the corrections' grade-scale mix. Run: python3 demos/05_replay_retrieval.py
"""

from gradegate import build_replay_buffer
from gradegate.dataset import DatasetSplit, GradingInstance, Rubric

TOPICS = ["k-means clustering", "support vector margins", "random forest depth",
          "page rank damping", "markov chain mixing", "bayes rule priors",
          "gradient boosting residuals", "activation saturation"]


def pool(scale, prefix, answers=4):
    out = []
    for q, topic in enumerate(TOPICS):
        for a in range(answers):
            out.append(GradingInstance(
                id=f"{prefix}{q}{a}",
                question=f"Discuss {topic} on a {scale}-point exercise?",
                answer=f"Answer {a} about {topic}.",
                rubric=Rubric(scale),
                gold_grade=(q + a) % (scale + 1),
                split_tag="train",
            ))
    return out


train = DatasetSplit(name="train", instances=tuple(pool(5, "f") + pool(10, "t")),
                     role="source")

corrections = [
    GradingInstance(id="h1", question="Discuss k-means clustering on a 5-point exercise?",
                    answer="...", rubric=Rubric(5), gold_grade=3, split_tag="D21"),
    GradingInstance(id="h2", question="Discuss bayes rule priors on a 5-point exercise?",
                    answer="...", rubric=Rubric(5), gold_grade=1, split_tag="D21"),
    GradingInstance(id="h3", question="Discuss page rank damping on a 10-point exercise?",
                    answer="...", rubric=Rubric(10), gold_grade=7, split_tag="D21"),
]

buffer = build_replay_buffer(corrections, train, k=3, answers_per_question=2, seed=0)

print("retrieved neighbors per corrected question:")
for question, neighbors in buffer.retrieved_questions.items():
    print(f"  {question}")
    for n in neighbors:
        print(f"    <- {n}")
print()

h_scales = {}
for inst in corrections:
    h_scales[inst.rubric.max_grade] = h_scales.get(inst.rubric.max_grade, 0) + 1
print(f"correction scale mix: {h_scales}")
print(f"buffer scale mix:     {buffer.scale_counts()}  ({len(buffer)} items)")
union = dict(h_scales)
for s, c in buffer.scale_counts().items():
    union[s] = union.get(s, 0) + c
total = sum(union.values())
for s, c in sorted(union.items()):
    print(f"  scale {s}: corrections+buffer share {c / total:.2f} "
          f"vs corrections share {h_scales.get(s, 0) / len(corrections):.2f}")
