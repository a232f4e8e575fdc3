import json

import numpy as np
import pytest

from gradegate.calibration import apply_temperature
from gradegate.dataset import Rubric
from gradegate.scoring import (
    LogitVector,
    ProtocolError,
    ScoreRequest,
    ScorerProfile,
    ScoringError,
    completion_text,
    enumerate_candidates,
    load_template,
    render_prompt,
    score_instance,
    synthetic_backend,
)

from conftest import make_corpus, make_instance


class AbsDistanceBackend:
    """Inline test backend: z[g] = -|g - gold|."""

    capabilities = frozenset({"score_completions"})
    version = 0

    def score_completions(self, request: ScoreRequest):
        gold = request.instance.gold_grade
        grades = [json.loads(c)["grade"] for c in request.candidates]
        return [-abs(g - gold) for g in grades]


class WrongCountBackend:
    capabilities = frozenset({"score_completions"})
    version = 0

    def score_completions(self, request: ScoreRequest):
        return [0.0]


class TestTemplates:
    def test_basic_scale_line(self):
        inst = make_instance(0, "Q?", max_grade=5, gold=3, answer="A.")
        system, user = render_prompt(load_template("basic"), inst)
        assert "Target Scale: 0 to 5" in user
        assert "Q?" in user and "A." in user
        assert "{" not in user.replace("{q}", "")  # no unresolved placeholders

    def test_rubric_template_ending(self):
        inst = make_instance(0, "Q?", max_grade=8, gold=2)
        _, user = render_prompt(load_template("rubric"), inst)
        assert user.endswith("(Apply the rubric framework proportionally to this scale)")

    def test_render_deterministic_bytes(self):
        inst = make_instance(1, "What is entropy?", max_grade=10, gold=9)
        tpl = load_template("detailed")
        assert render_prompt(tpl, inst) == render_prompt(tpl, inst)

    def test_all_templates_load(self):
        for name in ("basic", "detailed", "json_strict", "rubric"):
            tpl = load_template(name)
            assert tpl.name == name
            assert "{q}" in tpl.user_text and "{a}" in tpl.user_text

    def test_unknown_template(self):
        with pytest.raises(ScoringError):
            load_template("fancy")


class TestCandidates:
    def test_counts(self):
        assert len(enumerate_candidates(Rubric(2))) == 3
        assert len(enumerate_candidates(Rubric(0))) == 1
        assert len(enumerate_candidates(Rubric(10))) == 11

    def test_ascending_and_canonical(self):
        cands = enumerate_candidates(Rubric(2))
        assert [c.grade for c in cands] == [0, 1, 2]
        assert cands[1].completion_text == '{"grade": 1, "max_grade": 2}'
        for c in cands:
            parsed = json.loads(c.completion_text)
            assert parsed == {"grade": c.grade, "max_grade": 2}

    def test_completion_bytes(self):
        assert completion_text(4, 5) == '{"grade": 4, "max_grade": 5}'


class TestScoreInstance:
    def test_abs_distance_example(self):
        inst = make_instance(0, "Q?", max_grade=4, gold=3)
        vec = score_instance(AbsDistanceBackend(), load_template("basic"), inst)
        assert vec.z.tolist() == [-3, -2, -1, 0, -1]

    def test_degenerate_rubric(self):
        inst = make_instance(0, "Q?", max_grade=0, gold=0)
        vec = score_instance(AbsDistanceBackend(), load_template("basic"), inst)
        assert vec.z.shape == (1,)

    def test_deterministic(self):
        inst = make_instance(0, "Q?", max_grade=5, gold=2)
        backend = synthetic_backend(ScorerProfile(noise=1.5, correlation=0.5), seed=3)
        tpl = load_template("basic")
        a = score_instance(backend, tpl, inst)
        b = score_instance(backend, tpl, inst)
        assert np.array_equal(a.z, b.z)

    def test_wrong_candidate_count(self):
        inst = make_instance(0, "Q?", max_grade=5, gold=2)
        with pytest.raises(ProtocolError):
            score_instance(WrongCountBackend(), load_template("basic"), inst)

    def test_non_finite_rejected(self):
        with pytest.raises(ScoringError):
            LogitVector(Rubric(1), np.array([0.0, np.inf]))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ScoringError):
            LogitVector(Rubric(3), np.zeros(3))


class TestSyntheticBackend:
    def test_noiseless_oracle_matches_gold(self):
        backend = synthetic_backend(ScorerProfile(noise=0.0, correlation=1.0), seed=11)
        tpl = load_template("basic")
        for inst in make_corpus(6, 4, max_grade=5, seed=1):
            vec = score_instance(backend, tpl, inst)
            assert int(np.argmax(vec.z)) == inst.gold_grade

    def test_sharp_profile_confident(self):
        backend = synthetic_backend(ScorerProfile(sharpness=10.0, noise=0.0), seed=0)
        tpl = load_template("basic")
        for g_max in (2, 5, 10):
            inst = make_instance(g_max, "Q?", max_grade=g_max, gold=1)
            pred = apply_temperature(score_instance(backend, tpl, inst), 1.0)
            assert pred.confidence > 0.99

    def test_memorization_after_update(self):
        backend = synthetic_backend(ScorerProfile(noise=1.0, correlation=0.2), seed=5)
        tpl = load_template("basic")
        inst = make_instance(0, "Q?", max_grade=5, gold=1)
        backend.update_hook([(inst, 4)])
        vec = score_instance(backend, tpl, inst)
        assert int(np.argmax(vec.z)) == 4

    def test_update_forgets_unreplayed(self):
        train = make_corpus(3, 2, max_grade=5, seed=8)
        backend = synthetic_backend(ScorerProfile(noise=0.0, correlation=0.0),
                                    seed=5, pretrain=train)
        held = train.instances[0]
        assert backend.knows(held.id)
        other = make_instance(99, "Different question entirely?", max_grade=5, gold=2)
        backend.update_hook([(other, 2)])
        assert not backend.knows(held.id)
        assert backend.knows(other.id)

    def test_known_question_generalizes(self):
        backend = synthetic_backend(ScorerProfile(noise=0.0, correlation=0.0), seed=5)
        tpl = load_template("basic")
        seen = make_instance(1, "Shared question?", max_grade=5, gold=2)
        unseen_same_q = make_instance(2, "Shared question?", max_grade=5, gold=4)
        backend.update_hook([(seen, 2)])
        vec = score_instance(backend, tpl, unseen_same_q)
        assert int(np.argmax(vec.z)) == 4  # question-level competence uses gold

    def test_version_bumps_on_update(self):
        backend = synthetic_backend(seed=0)
        inst = make_instance(0, "Q?", max_grade=5, gold=1)
        v0 = backend.version
        backend.update_hook([(inst, 1)])
        assert backend.version == v0 + 1

    def test_update_rejects_out_of_rubric(self):
        backend = synthetic_backend(seed=0)
        inst = make_instance(0, "Q?", max_grade=5, gold=1)
        with pytest.raises(ScoringError):
            backend.update_hook([(inst, 9)])

    def test_profile_validation(self):
        with pytest.raises(ScoringError):
            ScorerProfile(sharpness=0.0)
        with pytest.raises(ScoringError):
            ScorerProfile(noise=-1.0)
        with pytest.raises(ScoringError):
            ScorerProfile(correlation=1.5)
