"""Lookahead value estimator: partitions, closed-form examples, convergence."""

import math

import numpy as np
import pytest

from maskpath.errors import ConfigError, ContractViolation, InputError
from maskpath.lookahead import LookaheadConfig, estimate, random_partition
from maskpath.models import PartialSequence, TabularJointModel, Vocab
from maskpath.oracle import lookahead_exact_expectation

LN2 = math.log(2.0)


class TestRandomPartition:
    def test_even_split(self):
        groups = random_partition([0, 1, 2, 3], 2, np.random.default_rng(0))
        assert sorted(len(g) for g in groups) == [2, 2]
        assert sorted(int(i) for g in groups for i in g) == [0, 1, 2, 3]

    def test_singletons_at_full_stage_count(self):
        groups = random_partition([3, 5, 9], 3, np.random.default_rng(1))
        assert [len(g) for g in groups] == [1, 1, 1]

    def test_remainder_goes_to_early_stages(self):
        groups = random_partition([0, 1, 2], 2, np.random.default_rng(2))
        assert [len(g) for g in groups] == [2, 1]

    def test_stage_count_clamped(self):
        groups = random_partition([0, 1], 5, np.random.default_rng(3))
        assert [len(g) for g in groups] == [1, 1]

    def test_empty_set_rejected(self):
        with pytest.raises(InputError):
            random_partition([], 1, np.random.default_rng(0))

    def test_uniform_over_orderings(self):
        counts = {}
        for seed in range(3000):
            groups = random_partition([0, 1, 2], 3, np.random.default_rng(seed))
            key = tuple(int(g[0]) for g in groups)
            counts[key] = counts.get(key, 0) + 1
        freqs = np.array(list(counts.values())) / 3000
        assert len(counts) == 6
        assert np.abs(freqs - 1 / 6).max() < 0.03


class TestConfig:
    def test_exactly_one_of_stages_and_stage_size(self):
        with pytest.raises(ConfigError):
            LookaheadConfig(stages=2, stage_size=4)
        with pytest.raises(ConfigError):
            LookaheadConfig(stages=None, stage_size=None)

    def test_adaptive_rule_is_ceiling(self):
        cfg = LookaheadConfig(stage_size=4, stages=None)
        assert cfg.effective_stages(16) == (4, False)
        assert cfg.effective_stages(13) == (4, False)
        assert cfg.effective_stages(3) == (1, False)

    def test_fixed_stage_count_clamps(self):
        cfg = LookaheadConfig(stages=5, stage_size=None)
        assert cfg.effective_stages(3) == (3, True)
        assert cfg.effective_stages(8) == (5, False)


class TestClosedFormExamples:
    def test_correlated_pair_one_stage(self, correlated_pair, masked_pair):
        cfg = LookaheadConfig(stages=1, stage_size=None, rollouts=3, rollout_temperature=1.0)
        report = estimate(correlated_pair, masked_pair, cfg, seed=0)
        # every sampled pair has product probability 1/4
        assert report.v_base == pytest.approx(math.log(0.25), abs=1e-12)
        assert report.v_corr == pytest.approx(2 * LN2, abs=1e-12)
        assert report.v_total == pytest.approx(0.0, abs=1e-12)

    def test_correlated_pair_two_stages(self, correlated_pair, masked_pair):
        cfg = LookaheadConfig(stages=2, stage_size=None, rollouts=4, rollout_temperature=1.0)
        report = estimate(correlated_pair, masked_pair, cfg, seed=1)
        # stage 2's conditional is deterministic, so every rollout scores ln(1/2)
        assert report.v_base == pytest.approx(-LN2, abs=1e-12)
        assert report.v_corr == pytest.approx(LN2, abs=1e-12)
        assert report.v_total == pytest.approx(0.0, abs=1e-12)

    def test_independent_pair_two_stages(self, independent_pair, masked_pair):
        cfg = LookaheadConfig(stages=2, stage_size=None, rollouts=4, rollout_temperature=1.0)
        report = estimate(independent_pair, masked_pair, cfg, seed=2)
        assert report.v_base == pytest.approx(-2 * LN2, abs=1e-12)
        assert report.v_corr == pytest.approx(LN2, abs=1e-12)
        assert report.v_total == pytest.approx(-LN2, abs=1e-12)

    def test_deterministic_model_all_zero(self, deterministic_model):
        x = PartialSequence.fully_masked(deterministic_model.vocab, 3)
        for stages in (1, 2, 3):
            cfg = LookaheadConfig(stages=stages, stage_size=None, rollouts=2)
            report = estimate(deterministic_model, x, cfg, seed=3)
            assert report.v_base == 0.0
            assert report.v_corr == 0.0
            assert report.v_total == 0.0


class TestReportInvariants:
    def test_total_is_base_plus_correction(self, independent_pair, masked_pair):
        cfg = LookaheadConfig(stage_size=1, rollouts=5)
        report = estimate(independent_pair, masked_pair, cfg, seed=4)
        assert report.v_total == pytest.approx(report.v_base + report.v_corr, abs=1e-12)
        assert report.v_corr >= 0.0

    def test_doubling_stages_halves_correction(self):
        model = TabularJointModel.random_dirichlet(Vocab(3), 4, seed=9)
        x = PartialSequence.fully_masked(model.vocab, 4)
        r1 = estimate(model, x, LookaheadConfig(stages=1, stage_size=None), seed=5)
        r2 = estimate(model, x, LookaheadConfig(stages=2, stage_size=None), seed=5)
        r4 = estimate(model, x, LookaheadConfig(stages=4, stage_size=None), seed=5)
        assert r2.v_corr == pytest.approx(r1.v_corr / 2, abs=1e-12)
        assert r4.v_corr == pytest.approx(r1.v_corr / 4, abs=1e-12)

    def test_forward_accounting(self):
        model = TabularJointModel.random_dirichlet(Vocab(2), 5, seed=10)
        x = PartialSequence.fully_masked(model.vocab, 5)
        for stages, rollouts in [(1, 2), (2, 3), (5, 2)]:
            cfg = LookaheadConfig(stages=stages, stage_size=None, rollouts=rollouts)
            report = estimate(model, x, cfg, seed=6)
            assert report.forwards_used == 1 + rollouts * (stages - 1)

    def test_clamp_sets_flag(self, correlated_pair, masked_pair):
        cfg = LookaheadConfig(stages=7, stage_size=None)
        report = estimate(correlated_pair, masked_pair, cfg, seed=7)
        assert report.clamped
        assert report.k_effective == 2

    def test_complete_state_is_contract_violation(self, correlated_pair, vocab2):
        with pytest.raises(ContractViolation):
            estimate(correlated_pair, PartialSequence(vocab2, [0, 0]), LookaheadConfig(), seed=0)

    def test_seed_determinism(self):
        model = TabularJointModel.random_dirichlet(Vocab(3), 4, seed=11)
        x = PartialSequence.fully_masked(model.vocab, 4)
        cfg = LookaheadConfig(stage_size=2, rollouts=3)
        a = estimate(model, x, cfg, seed=12)
        b = estimate(model, x, cfg, seed=12)
        assert a == b


class TestMonteCarloConvergence:
    def test_large_rollout_count_matches_exact_expectation(self):
        model = TabularJointModel.random_dirichlet(Vocab(2), 4, seed=13, alpha=0.8)
        x = PartialSequence.fully_masked(model.vocab, 4)
        exact_total, _, _ = lookahead_exact_expectation(model, x, stages=2, rollout_temperature=1.0)
        cfg = LookaheadConfig(stages=2, stage_size=None, rollouts=1024, rollout_temperature=1.0)
        report = estimate(model, x, cfg, seed=14)
        per = np.array(report.per_rollout)
        corrected = per + report.v_corr
        se = corrected.std(ddof=1) / math.sqrt(len(per))
        assert abs(report.v_total - exact_total) <= 3 * se

    def test_standard_error_shrinks_with_rollouts(self):
        model = TabularJointModel.random_dirichlet(Vocab(2), 4, seed=15, alpha=0.8)
        x = PartialSequence.fully_masked(model.vocab, 4)
        spreads = []
        for rollouts in (8, 64, 512):
            cfg = LookaheadConfig(stages=2, stage_size=None, rollouts=rollouts, rollout_temperature=1.0)
            estimates = [
                estimate(model, x, cfg, seed=100 + rep).v_total for rep in range(12)
            ]
            spreads.append(np.std(estimates))
        assert spreads[2] < spreads[1] < spreads[0]
