import math

import numpy as np
import pytest

from gradegate.dataset import DatasetSplit
from gradegate.replay import (
    LexicalEmbedder,
    ReplayError,
    build_replay_buffer,
    buffer_to_jsonl,
    cosine_similarity,
    embed_question,
    rank_similar_questions,
    tokenize,
)

from conftest import make_corpus, make_instance


def token_cosine(a, b):
    """Independent similarity oracle straight from the token sets."""
    ta, tb = set(tokenize(a)), set(tokenize(b))
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / math.sqrt(len(ta) * len(tb))


def oracle_top_k(query, candidates, k):
    ranked = sorted(candidates, key=lambda c: (-round(token_cosine(query, c), 12), c))
    return ranked[:k]


class TestEmbedder:
    def test_identical_questions_similarity_one(self):
        emb = LexicalEmbedder(["what is a decision tree?"])
        a = embed_question(emb, "what is a decision tree?")
        b = embed_question(emb, "what is a decision tree?")
        assert np.array_equal(a.values, b.values)
        assert cosine_similarity(a, b) == pytest.approx(1.0)

    def test_disjoint_tokens_similarity_zero(self):
        corpus = ["alpha beta gamma", "delta epsilon zeta"]
        emb = LexicalEmbedder(corpus)
        a = embed_question(emb, corpus[0])
        b = embed_question(emb, corpus[1])
        assert cosine_similarity(a, b) == 0.0

    def test_out_of_vocabulary_embeds_to_zero(self):
        emb = LexicalEmbedder(["known words only"])
        v = embed_question(emb, "totally different tokens")
        assert np.all(v.values == 0.0)
        assert cosine_similarity(v, v) == 0.0

    def test_empty_text_rejected(self):
        emb = LexicalEmbedder(["x"])
        with pytest.raises(ReplayError):
            embed_question(emb, "")

    def test_dimension_fixed_within_index(self):
        emb = LexicalEmbedder(["a b c", "d e"])
        assert embed_question(emb, "a").values.shape == embed_question(emb, "d e").values.shape


class TestRanking:
    def test_matches_exhaustive_oracle(self):
        corpus = make_corpus(30, 1, seed=5)
        questions = [inst.question for inst in corpus]
        emb = LexicalEmbedder(questions)
        for query in questions[:10]:
            for k in (1, 3, 7):
                assert rank_similar_questions(query, questions, emb, k) == oracle_top_k(
                    query, questions, k
                )

    def test_ties_break_lexicographically(self):
        candidates = ["zz common token", "aa common token"]
        emb = LexicalEmbedder(candidates + ["common token query"])
        top = rank_similar_questions("common token query", candidates, emb, 2)
        assert top == ["aa common token", "zz common token"]

    def test_k_zero(self):
        emb = LexicalEmbedder(["a"])
        assert rank_similar_questions("a", ["a"], emb, 0) == []


class TestBuildBuffer:
    def test_empty_corrections_empty_buffer(self):
        train = make_corpus(5, 2, seed=1)
        buffer = build_replay_buffer([], train, k=3)
        assert len(buffer) == 0

    def test_missing_train_pool_errors(self):
        corr = [make_instance(0, "Q?", gold=1, split="D21")]
        with pytest.raises(ReplayError):
            build_replay_buffer(corr, None, k=3)

    def test_scale_mirroring_single_scale(self):
        # corrections all on G=5; train mixes G in {5, 10} -> buffer stays on G=5
        train5 = make_corpus(6, 3, max_grade=5, seed=2, id_prefix="a")
        train10 = make_corpus(6, 3, max_grade=10, seed=3, id_prefix="b")
        train = DatasetSplit(
            name="train", instances=train5.instances + train10.instances, role="source"
        )
        corrections = [
            make_instance(900 + i, train5.instances[i].question, max_grade=5, gold=2, split="D21")
            for i in range(4)
        ]
        buffer = build_replay_buffer(corrections, train, k=3)
        assert len(buffer) > 0
        assert set(buffer.scale_counts()) == {5}

    def test_retrieval_trace_capped_by_k(self):
        train = make_corpus(12, 1, seed=4)
        corrections = [
            make_instance(800 + i, train.instances[i].question, gold=1, split="D21")
            for i in range(4)
        ]
        buffer = build_replay_buffer(corrections, train, k=3, answers_per_question=1)
        assert len(buffer.retrieved_questions) == 4
        assert all(len(v) <= 3 for v in buffer.retrieved_questions.values())
        assert len(buffer) <= 12  # 4 questions x k=3 x 1 answer, pre-rebalance bound

    def test_retrieved_sets_match_oracle(self):
        train = make_corpus(25, 2, seed=6)
        questions = sorted({i.question for i in train.instances})
        corrections = [
            make_instance(700 + i, train.instances[i * 5].question, gold=3, split="D21")
            for i in range(5)
        ]
        buffer = build_replay_buffer(corrections, train, k=3)
        for corrected_q, neighbors in buffer.retrieved_questions.items():
            assert list(neighbors) == oracle_top_k(corrected_q, questions, 3)

    def test_mirroring_within_one_item(self):
        rng = np.random.default_rng(0)
        for trial in range(30):
            train = make_corpus(
                10, 3, seed=100 + trial, scales=[5, 8, 10], id_prefix=f"t{trial}"
            )
            n_corr = int(rng.integers(1, 8))
            corrections = [
                make_instance(
                    1000 + i,
                    train.instances[int(rng.integers(0, len(train)))].question,
                    max_grade=int(rng.choice([5, 8, 10])),
                    gold=1,
                    split="D21",
                )
                for i in range(n_corr)
            ]
            buffer = build_replay_buffer(corrections, train, k=3, seed=trial)
            h_counts = {}
            for inst in corrections:
                h_counts[inst.rubric.max_grade] = h_counts.get(inst.rubric.max_grade, 0) + 1
            union_counts = dict(h_counts)
            for scale, count in buffer.scale_counts().items():
                union_counts[scale] = union_counts.get(scale, 0) + count
            total = sum(union_counts.values())
            for scale in set(union_counts) | set(h_counts):
                ideal = total * h_counts.get(scale, 0) / n_corr
                assert abs(union_counts.get(scale, 0) - ideal) <= 1.0 + 1e-9

    def test_determinism(self):
        train = make_corpus(8, 3, seed=7)
        corrections = [
            make_instance(600 + i, train.instances[i].question, gold=2, split="D21")
            for i in range(3)
        ]
        a = build_replay_buffer(corrections, train, k=2, seed=9)
        b = build_replay_buffer(corrections, train, k=2, seed=9)
        assert [i.id for i in a.items] == [i.id for i in b.items]

    def test_dedup_by_instance_id(self):
        train = make_corpus(3, 2, seed=8)
        # two corrections pointing at the same neighborhood
        corrections = [
            make_instance(500, train.instances[0].question, gold=1, split="D21"),
            make_instance(501, train.instances[0].question + " extra", gold=2, split="D21"),
        ]
        buffer = build_replay_buffer(corrections, train, k=3)
        ids = [i.id for i in buffer.items]
        assert len(ids) == len(set(ids))

    def test_k_larger_than_pool(self):
        train = make_corpus(2, 2, seed=9)
        corrections = [make_instance(400, train.instances[0].question, gold=1, split="D21")]
        buffer = build_replay_buffer(corrections, train, k=50)
        assert set(buffer.retrieved_questions[corrections[0].question]) == {
            i.question for i in train.instances
        }

    def test_answers_per_question_cap(self):
        train = make_corpus(1, 9, seed=10)
        corrections = [make_instance(300, train.instances[0].question, gold=1, split="D21")]
        buffer = build_replay_buffer(corrections, train, k=1, answers_per_question=4)
        assert len(buffer) <= 4

    def test_jsonl_export(self):
        train = make_corpus(3, 2, seed=11)
        corrections = [make_instance(200, train.instances[0].question, gold=1, split="D21")]
        buffer = build_replay_buffer(corrections, train, k=2)
        lines = buffer_to_jsonl(buffer).strip().splitlines()
        assert len(lines) == len(buffer)
