"""Position scoring heuristics and the stochastic proposal rule."""

import math

import numpy as np
import pytest

from maskpath.errors import ConfigError, InputError
from maskpath.models import MarginalSet, PartialSequence, Vocab
from maskpath.policies import (
    PolicyConfig,
    propose_positions,
    restrict_semi_ar,
    score_positions,
    softmax_probabilities,
)

LN2 = math.log(2.0)


def _ms(dists: dict[int, list[float]]) -> MarginalSet:
    return MarginalSet({i: np.array(p) for i, p in dists.items()})


class TestScorers:
    def test_margin_top2_gap(self):
        scores = score_positions(PolicyConfig(kind="margin"), _ms({0: [0.7, 0.2, 0.1]}))
        assert scores[0].score == pytest.approx(0.5, abs=1e-12)

    def test_entropy_is_negated(self):
        scores = score_positions(PolicyConfig(kind="entropy"), _ms({0: [0.5, 0.5]}))
        assert scores[0].score == pytest.approx(-LN2, abs=1e-12)

    def test_confidence_is_max_probability(self):
        scores = score_positions(PolicyConfig(kind="confidence"), _ms({2: [0.1, 0.6, 0.3]}))
        assert scores[0].index == 2
        assert scores[0].score == pytest.approx(0.6)

    def test_uniform_constant(self):
        scores = score_positions(PolicyConfig(kind="uniform"), _ms({0: [1.0, 0.0], 5: [0.5, 0.5]}))
        assert all(s.score == 0.0 for s in scores)

    def test_pc_uniform_background_degenerates(self):
        # cross-entropy against a uniform background is ln V for any prediction
        cfg = PolicyConfig(kind="pc", pc_lambda=0.0, pc_background=np.full(4, 0.25))
        ms = _ms({0: [0.97, 0.01, 0.01, 0.01], 3: [0.25, 0.25, 0.25, 0.25]})
        scores = score_positions(cfg, ms)
        for s in scores:
            assert s.score == pytest.approx(-math.log(4), abs=1e-12)

    def test_pc_positional_decay_uses_generatable_rank(self):
        cfg = PolicyConfig(kind="pc", pc_lambda=1.0, pc_background=np.array([0.9, 0.1]))
        ms = _ms({4: [1.0, 0.0], 9: [1.0, 0.0]})
        scores = {s.index: s.score for s in score_positions(cfg, ms, {4: 0, 9: 1})}
        base = -(-math.log(0.9))
        assert scores[4] == pytest.approx(base * math.exp(0.0))
        assert scores[9] == pytest.approx(base * math.exp(-1.0))

    def test_unknown_kind_is_config_error(self):
        with pytest.raises(ConfigError):
            PolicyConfig(kind="oracle")

    def test_score_order_invariant_to_map_order(self):
        cfg = PolicyConfig(kind="confidence")
        a = score_positions(cfg, MarginalSet({0: np.array([0.9, 0.1]), 7: np.array([0.6, 0.4])}))
        b = score_positions(cfg, MarginalSet({7: np.array([0.6, 0.4]), 0: np.array([0.9, 0.1])}))
        assert [(s.index, s.score) for s in a] == [(s.index, s.score) for s in b]


class TestSemiAr:
    def _scores(self, indices):
        return [type("S", (), {"index": i, "score": 0.0})() for i in indices]

    def test_earliest_incomplete_block(self):
        from maskpath.policies import PositionScore

        cfg = PolicyConfig(kind="uniform", semi_ar_block=4)
        x = PartialSequence(Vocab(2), [0, 1, 0, 1, -1, -1, -1, -1])
        scores = [PositionScore(i, 0.0) for i in (4, 5, 6, 7)]
        kept = restrict_semi_ar(cfg, scores, x)
        assert sorted(s.index for s in kept) == [4, 5, 6, 7]

    def test_fully_masked_keeps_first_block(self):
        from maskpath.policies import PositionScore

        cfg = PolicyConfig(kind="uniform", semi_ar_block=4)
        x = PartialSequence.fully_masked(Vocab(2), 8)
        kept = restrict_semi_ar(cfg, [PositionScore(i, 0.0) for i in range(8)], x)
        assert sorted(s.index for s in kept) == [0, 1, 2, 3]

    def test_block_wider_than_sequence_keeps_all(self):
        from maskpath.policies import PositionScore

        cfg = PolicyConfig(kind="uniform", semi_ar_block=16)
        x = PartialSequence.fully_masked(Vocab(2), 8)
        kept = restrict_semi_ar(cfg, [PositionScore(i, 0.0) for i in range(8)], x)
        assert len(kept) == 8

    def test_partial_block_extends_for_large_steps(self):
        from maskpath.policies import PositionScore

        cfg = PolicyConfig(kind="uniform", semi_ar_block=2, tokens_per_step=2, proposal_top_k=2)
        x = PartialSequence(Vocab(2), [0, -1, -1, -1])
        kept = restrict_semi_ar(cfg, [PositionScore(i, 0.0) for i in (1, 2, 3)], x)
        # first block holds one masked cell; eligibility extends by whole blocks
        assert sorted(s.index for s in kept) == [1, 2, 3]


class TestSoftmax:
    def test_closed_form_two_point(self):
        p = softmax_probabilities(np.array([0.0, -1.0]), temperature=0.1)
        assert p[0] == pytest.approx(1.0 / (1.0 + math.exp(-10.0)), abs=1e-9)
        assert p[0] == pytest.approx(0.9999546, abs=1e-6)

    def test_shift_invariance(self):
        base = np.array([-3.0, -1.0, -2.0])
        a = softmax_probabilities(base, 0.7)
        b = softmax_probabilities(base + 123.456, 0.7)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_neg_inf_gets_zero_mass(self):
        p = softmax_probabilities(np.array([0.0, -np.inf]), 1.0)
        assert p.tolist() == [1.0, 0.0]

    def test_all_neg_inf_rejected(self):
        with pytest.raises(InputError):
            softmax_probabilities(np.array([-np.inf, -np.inf]), 1.0)


class TestProposal:
    def _scores(self, values):
        from maskpath.policies import PositionScore

        return [PositionScore(i, v) for i, v in enumerate(values)]

    def test_top1_is_argmax_for_any_temperature(self):
        cfg = PolicyConfig(kind="uniform", proposal_top_k=1, proposal_temperature=5.0)
        for seed in range(20):
            picked = propose_positions(cfg, self._scores([0.1, 0.9, 0.5]), np.random.default_rng(seed), g=1)
            assert picked.tolist() == [1]

    def test_symmetric_scores_split_evenly(self):
        cfg = PolicyConfig(kind="uniform", proposal_top_k=2, proposal_temperature=1.0)
        counts = np.zeros(2)
        for seed in range(4000):
            picked = propose_positions(cfg, self._scores([0.0, 0.0]), np.random.default_rng(seed), g=1)
            counts[picked[0]] += 1
        assert abs(counts[0] / 4000 - 0.5) < 0.03

    def test_sharp_temperature_concentrates(self):
        cfg = PolicyConfig(kind="uniform", proposal_top_k=2, proposal_temperature=1e-6)
        hits = 0
        for seed in range(10_000):
            picked = propose_positions(cfg, self._scores([0.0, -1.0]), np.random.default_rng(seed), g=1)
            hits += picked[0] == 0
        assert hits / 10_000 > 0.999

    def test_distinct_positions_without_replacement(self):
        cfg = PolicyConfig(kind="uniform", proposal_top_k=4, tokens_per_step=3, proposal_temperature=1.0)
        for seed in range(50):
            picked = propose_positions(cfg, self._scores([0.0, 0.1, 0.2, 0.3]), np.random.default_rng(seed))
            assert len(set(picked.tolist())) == 3

    def test_tie_cut_prefers_low_index(self):
        cfg = PolicyConfig(kind="uniform", proposal_top_k=1, proposal_temperature=1.0)
        picked = propose_positions(cfg, self._scores([0.5, 0.5, 0.5]), np.random.default_rng(0), g=1)
        assert picked.tolist() == [0]

    def test_too_few_candidates_rejected(self):
        cfg = PolicyConfig(kind="uniform", proposal_top_k=4, tokens_per_step=2)
        with pytest.raises(InputError):
            propose_positions(cfg, self._scores([1.0]), np.random.default_rng(0))

    def test_never_returns_unscored_positions(self, correlated_pair, masked_pair):
        # scored positions are exactly the masked set by construction
        from maskpath.models import marginals
        from maskpath.policies import score_positions as score

        cfg = PolicyConfig(kind="confidence", proposal_top_k=2)
        ms = marginals(correlated_pair, masked_pair)
        scores = score(cfg, ms)
        for seed in range(200):
            picked = propose_positions(cfg, scores, np.random.default_rng(seed), g=1)
            assert set(picked.tolist()) <= {0, 1}
