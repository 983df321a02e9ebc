"""Denoiser contract, exact backends, and the step operations."""

import itertools
import math

import numpy as np
import pytest

from maskpath.errors import ContractViolation, InputError
from maskpath.models import (
    MarkovChainModel,
    NoisyMarginalWrapper,
    PartialSequence,
    TabularJointModel,
    Vocab,
    entropy,
    marginals,
    sample_step,
    step_logprob,
)

LN2 = math.log(2.0)


class TestVocabAndSequence:
    def test_vocab_rejects_tiny_and_colliding_mask(self):
        with pytest.raises(InputError):
            Vocab(1)
        with pytest.raises(InputError):
            Vocab(4, mask_id=2)

    def test_sequence_tracks_observed_and_masked(self, vocab2):
        x = PartialSequence(vocab2, [0, -1, 1, -1])
        assert x.observed_indices.tolist() == [0, 2]
        assert x.masked_indices.tolist() == [1, 3]
        assert not x.is_complete

    def test_sets_recomputed_after_update(self, vocab2):
        x = PartialSequence.fully_masked(vocab2, 3)
        y = x.with_values([1], [0])
        assert y.masked_indices.tolist() == [0, 2]
        assert x.masked_indices.tolist() == [0, 1, 2]  # original untouched

    def test_invalid_token_rejected(self, vocab2):
        with pytest.raises(InputError):
            PartialSequence(vocab2, [0, 5])

    def test_writing_observed_cell_rejected(self, vocab2):
        x = PartialSequence(vocab2, [0, -1])
        with pytest.raises(InputError):
            x.with_values([0], [1])


class TestMarginals:
    def test_correlated_pair_fully_masked(self, correlated_pair, masked_pair):
        ms = marginals(correlated_pair, masked_pair)
        for i in (0, 1):
            np.testing.assert_allclose(ms[i], [0.5, 0.5], atol=1e-12)
            assert ms.entropies[i] == pytest.approx(LN2, abs=1e-12)

    def test_conditioning_pins_partner(self, correlated_pair, vocab2):
        x = PartialSequence(vocab2, [0, -1])
        ms = marginals(correlated_pair, x)
        np.testing.assert_allclose(ms[1], [1.0, 0.0], atol=1e-12)
        assert ms.entropies[1] == pytest.approx(0.0, abs=1e-12)

    def test_deterministic_model_one_hot(self, deterministic_model):
        x = PartialSequence.fully_masked(deterministic_model.vocab, 3)
        ms = marginals(deterministic_model, x)
        for i, expected in zip((0, 1, 2), ([0, 1], [1, 0], [0, 1])):
            np.testing.assert_allclose(ms[i], expected, atol=1e-12)
            assert ms.entropies[i] == 0.0

    def test_distributions_normalized_and_keys_match(self, correlated_pair, vocab2):
        x = PartialSequence(vocab2, [-1, 0])
        ms = marginals(correlated_pair, x)
        assert ms.indices == [0]
        assert sum(ms[0]) == pytest.approx(1.0, abs=1e-12)

    def test_entropy_matches_definition(self):
        p = np.array([0.7, 0.2, 0.1, 0.0])
        expected = -sum(q * math.log(q) for q in p if q > 0)
        assert entropy(p) == pytest.approx(expected, abs=1e-12)

    def test_complete_sequence_is_contract_violation(self, correlated_pair, vocab2):
        with pytest.raises(ContractViolation):
            marginals(correlated_pair, PartialSequence(vocab2, [0, 0]))

    def test_forward_counter_ticks(self, correlated_pair, masked_pair):
        correlated_pair.reset_forward_count()
        marginals(correlated_pair, masked_pair)
        marginals(correlated_pair, masked_pair)
        assert correlated_pair.forward_count == 2

    def test_zero_mass_context_falls_back_to_uniform(self, vocab2):
        # support excludes any sequence starting with 1 at position 0
        model = TabularJointModel(vocab2, 2, np.array([[0, 0], [0, 1]]), np.array([0.5, 0.5]))
        ms = marginals(model, PartialSequence(vocab2, [1, -1]))
        np.testing.assert_allclose(ms[1], [0.5, 0.5], atol=1e-12)


class TestStepLogprob:
    def test_parallel_pair(self, correlated_pair, masked_pair):
        ll = step_logprob(correlated_pair, masked_pair, [0, 1], [0, 0])
        assert ll == pytest.approx(math.log(0.25), abs=1e-12)

    def test_deterministic_is_zero(self, deterministic_model):
        x = PartialSequence.fully_masked(deterministic_model.vocab, 3)
        assert step_logprob(deterministic_model, x, [0, 1, 2], [1, 0, 1]) == 0.0

    def test_zero_probability_yields_neg_inf(self, correlated_pair, vocab2):
        x = PartialSequence(vocab2, [0, -1])
        assert step_logprob(correlated_pair, x, [1], [1]) == float("-inf")

    def test_overlap_with_observed_rejected(self, correlated_pair, vocab2):
        x = PartialSequence(vocab2, [0, -1])
        with pytest.raises(InputError):
            step_logprob(correlated_pair, x, [0], [0])


class TestSampleStep:
    def test_one_hot_any_temperature(self, deterministic_model):
        x = PartialSequence.fully_masked(deterministic_model.vocab, 3)
        rng = np.random.default_rng(0)
        for temp in (0.0, 0.5, 1.0, 3.0):
            values = sample_step(deterministic_model, x, [0, 1, 2], temp, rng)
            assert values.tolist() == [1, 0, 1]

    def test_argmax_at_zero_temperature(self):
        vb = Vocab(3)
        model = TabularJointModel(vb, 1, np.array([[0], [1], [2]]), np.array([0.7, 0.2, 0.1]))
        x = PartialSequence.fully_masked(vb, 1)
        values = sample_step(model, x, [0], 0.0, np.random.default_rng(0))
        assert values.tolist() == [0]

    def test_tie_breaks_to_lowest_id(self, correlated_pair, masked_pair):
        values = sample_step(
            correlated_pair, masked_pair, [0], 0.0, np.random.default_rng(0)
        )
        assert values.tolist() == [0]

    def test_deterministic_given_stream(self, correlated_pair, masked_pair):
        a = sample_step(correlated_pair, masked_pair, [0, 1], 1.0, np.random.default_rng(42))
        b = sample_step(correlated_pair, masked_pair, [0, 1], 1.0, np.random.default_rng(42))
        assert a.tolist() == b.tolist()


def _sequential_chain_logprob(model, order, tokens):
    """Product of sequential conditionals along one unmasking order."""
    x = PartialSequence.fully_masked(model.vocab, model.length)
    total = 0.0
    for i in order:
        ms = model.marginals(x)
        p = ms[i][tokens[i]]
        total += math.log(p) if p > 0 else float("-inf")
        x = x.with_values([i], [tokens[i]])
    return total


class TestOrderConsistency:
    @pytest.mark.parametrize("n,v,seed", [(2, 2, 0), (3, 3, 1), (4, 2, 2), (3, 4, 3)])
    def test_all_orders_reproduce_the_table(self, n, v, seed):
        model = TabularJointModel.random_dirichlet(Vocab(v), n, seed=seed)
        for order in itertools.permutations(range(n)):
            for row, prob in zip(model.support[:12], model.probs[:12]):
                chained = _sequential_chain_logprob(model, order, row)
                assert chained == pytest.approx(math.log(prob), abs=1e-9)


class TestMarkovChain:
    @pytest.mark.parametrize("n,v,seed", [(3, 2, 0), (4, 3, 1), (6, 3, 2)])
    def test_agrees_with_enumerated_table(self, n, v, seed):
        rng = np.random.default_rng(seed)
        pi = rng.dirichlet(np.ones(v))
        a = np.stack([rng.dirichlet(np.ones(v)) for _ in range(v)])
        chain = MarkovChainModel(Vocab(v), n, pi, a)
        table = chain.as_tabular()
        rng2 = np.random.default_rng(seed + 1)
        for _ in range(20):
            tokens = np.full(n, -1, dtype=np.int64)
            for i in range(n):
                if rng2.random() < 0.5:
                    tokens[i] = rng2.integers(v)
            if (tokens >= 0).all():
                tokens[rng2.integers(n)] = -1
            x = PartialSequence(chain.vocab, tokens)
            ms_chain = chain.marginals(x)
            ms_table = table.marginals(x)
            for i in ms_chain.indices:
                np.testing.assert_allclose(ms_chain[i], ms_table[i], atol=1e-9)

    def test_impossible_evidence_goes_uniform(self):
        vb = Vocab(2)
        # transitions forbid 0 -> 1
        chain = MarkovChainModel(vb, 3, np.array([1.0, 0.0]), np.array([[1.0, 0.0], [0.5, 0.5]]))
        x = PartialSequence(vb, [-1, 1, -1])
        ms = chain.marginals(x)
        np.testing.assert_allclose(ms[0], [0.5, 0.5], atol=1e-12)


class TestNoisyWrapper:
    @pytest.mark.parametrize("eps", [0.0, 0.15, 0.5, 0.9, 0.999])
    def test_outputs_remain_categorical(self, correlated_pair, eps):
        wrapped = NoisyMarginalWrapper(correlated_pair, eps, seed=3)
        for tokens in ([-1, -1], [0, -1], [-1, 1]):
            ms = wrapped.marginals(PartialSequence(correlated_pair.vocab, tokens))
            for i in ms.indices:
                assert (ms[i] >= 0).all()
                assert ms[i].sum() == pytest.approx(1.0, abs=1e-12)

    def test_deterministic_given_seed(self, correlated_pair, masked_pair):
        a = NoisyMarginalWrapper(correlated_pair, 0.3, seed=9).marginals(masked_pair)
        b = NoisyMarginalWrapper(correlated_pair, 0.3, seed=9).marginals(masked_pair)
        for i in a.indices:
            np.testing.assert_array_equal(a[i], b[i])

    def test_noise_scale_validated(self, correlated_pair):
        with pytest.raises(InputError):
            NoisyMarginalWrapper(correlated_pair, 1.0, seed=0)

    def test_zero_noise_is_identity(self, correlated_pair, masked_pair):
        wrapped = NoisyMarginalWrapper(correlated_pair, 0.0, seed=1)
        ms = wrapped.marginals(masked_pair)
        np.testing.assert_allclose(ms[0], [0.5, 0.5], atol=1e-12)


class TestTabularValidation:
    def test_probabilities_must_sum_to_one(self, vocab2):
        with pytest.raises(InputError):
            TabularJointModel(vocab2, 2, np.array([[0, 0]]), np.array([0.5]))

    def test_duplicate_support_rows_rejected(self, vocab2):
        with pytest.raises(InputError):
            TabularJointModel(
                vocab2, 2, np.array([[0, 0], [0, 0]]), np.array([0.5, 0.5])
            )
