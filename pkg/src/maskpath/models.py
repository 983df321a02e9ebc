"""Denoiser contract and exact small-scale backends.

A denoiser returns, in one call, a categorical marginal for every masked
position of a partial sequence. The backends here are exact: a support-listed
joint table, a Markov chain with transfer-matrix conditionals, and a seeded
noisy wrapper that perturbs marginals so that unmasking order matters.

Conventions:
  * user-facing distributions live in linear space; products of probabilities
    are accumulated in log space,
  * a zero-probability value scores ``-inf`` instead of raising,
  * a zero-mass observed context yields uniform marginals (the limit of
    uniform-smoothing the joint), so rollouts through impossible states stay
    total,
  * argmax and sampling ties break toward the lowest token id.
"""

from __future__ import annotations

import itertools
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, InputError
from .streams import NOISE, derive_stream, encode_context

__all__ = [
    "Vocab",
    "PartialSequence",
    "MarginalSet",
    "Denoiser",
    "ExactJointModel",
    "TabularJointModel",
    "MarkovChainModel",
    "NoisyMarginalWrapper",
    "entropy",
    "marginals",
    "step_logprob",
    "step_logprob_from",
    "sample_step",
    "sample_from",
]


@dataclass(frozen=True)
class Vocab:
    """Token alphabet of size ``size`` plus a mask sentinel outside [0, size)."""

    size: int
    mask_id: int = -1

    def __post_init__(self) -> None:
        if self.size < 2:
            raise InputError(f"vocab size must be >= 2, got {self.size}")
        if 0 <= self.mask_id < self.size:
            raise InputError(
                f"mask_id {self.mask_id} collides with the token range [0, {self.size})"
            )


class PartialSequence:
    """Fixed-length token vector where unknown entries hold the mask sentinel.

    The observed/masked index sets are derived from the token vector on each
    access, so they can never go stale.
    """

    __slots__ = ("vocab", "tokens")

    def __init__(self, vocab: Vocab, tokens: np.ndarray | list[int]):
        arr = np.asarray(tokens, dtype=np.int64).copy()
        if arr.ndim != 1 or arr.size == 0:
            raise InputError("tokens must be a nonempty 1-D vector")
        legal = (arr == vocab.mask_id) | ((arr >= 0) & (arr < vocab.size))
        if not bool(legal.all()):
            bad = arr[~legal]
            raise InputError(f"token ids outside vocab: {bad.tolist()}")
        arr.setflags(write=False)
        self.vocab = vocab
        self.tokens = arr

    @classmethod
    def fully_masked(cls, vocab: Vocab, length: int) -> "PartialSequence":
        return cls(vocab, np.full(length, vocab.mask_id, dtype=np.int64))

    @classmethod
    def from_prompt(
        cls, vocab: Vocab, length: int, positions: list[int], values: list[int]
    ) -> "PartialSequence":
        tokens = np.full(length, vocab.mask_id, dtype=np.int64)
        tokens[list(positions)] = list(values)
        return cls(vocab, tokens)

    @property
    def length(self) -> int:
        return int(self.tokens.size)

    @property
    def masked_indices(self) -> np.ndarray:
        return np.flatnonzero(self.tokens == self.vocab.mask_id)

    @property
    def observed_indices(self) -> np.ndarray:
        return np.flatnonzero(self.tokens != self.vocab.mask_id)

    @property
    def num_masked(self) -> int:
        return int((self.tokens == self.vocab.mask_id).sum())

    @property
    def is_complete(self) -> bool:
        return self.num_masked == 0

    def observed_items(self) -> tuple[tuple[int, int], ...]:
        return tuple((int(i), int(self.tokens[i])) for i in self.observed_indices)

    def with_values(self, positions, values) -> "PartialSequence":
        """Return a copy with ``values`` written at masked ``positions``."""
        positions = np.asarray(positions, dtype=np.int64)
        values = np.asarray(values, dtype=np.int64)
        if positions.size != values.size:
            raise InputError("positions and values length mismatch")
        if positions.size and (self.tokens[positions] != self.vocab.mask_id).any():
            raise InputError(f"positions {positions.tolist()} overlap observed cells")
        tokens = self.tokens.copy()
        tokens[positions] = values
        return PartialSequence(self.vocab, tokens)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PartialSequence)
            and self.vocab == other.vocab
            and np.array_equal(self.tokens, other.tokens)
        )

    def __repr__(self) -> str:
        shown = ["_" if t == self.vocab.mask_id else str(t) for t in self.tokens]
        return f"PartialSequence([{' '.join(shown)}])"


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats with the 0*ln(0) = 0 convention."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return float(-terms.sum())


@dataclass
class MarginalSet:
    """Per-position categorical marginals for the masked set of one query."""

    distributions: dict[int, np.ndarray]
    entropies: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.entropies:
            self.entropies = {i: entropy(p) for i, p in self.distributions.items()}

    def __getitem__(self, index: int) -> np.ndarray:
        return self.distributions[index]

    def __contains__(self, index: int) -> bool:
        return index in self.distributions

    @property
    def indices(self) -> list[int]:
        return sorted(self.distributions)

    def entropy_sum(self) -> float:
        return float(sum(self.entropies.values()))

    def mean_entropy(self) -> float:
        return float(np.mean([self.entropies[i] for i in self.distributions]))


class Denoiser(ABC):
    """Conditional-marginal model over fixed-length sequences.

    Implementations are immutable after construction apart from the forward
    counter, which ticks once per :meth:`marginals` call so decoding budgets
    are measurable.
    """

    def __init__(self, vocab: Vocab, length: int):
        if length < 1:
            raise InputError("sequence length must be positive")
        self.vocab = vocab
        self.length = length
        self._forward_calls = 0

    @property
    def forward_count(self) -> int:
        return self._forward_calls

    def reset_forward_count(self) -> None:
        self._forward_calls = 0

    def marginals(self, x: PartialSequence) -> MarginalSet:
        """Return a marginal and entropy for every masked position of ``x``."""
        if x.length != self.length:
            raise InputError(f"sequence length {x.length} != model length {self.length}")
        if x.vocab != self.vocab:
            raise InputError("sequence vocab does not match model vocab")
        if x.is_complete:
            raise ContractViolation("marginals() requires at least one masked position")
        self._forward_calls += 1
        dists = self._conditional_marginals(x)
        return MarginalSet({int(i): np.asarray(p, dtype=float) for i, p in dists.items()})

    @abstractmethod
    def _conditional_marginals(self, x: PartialSequence) -> dict[int, np.ndarray]:
        """Map each masked index to a categorical over [0, V)."""


class ExactJointModel(Denoiser):
    """Denoiser that additionally exposes its exact joint distribution.

    Brute-force oracles enumerate completions against :meth:`log_joint`
    directly, independently of the marginal path.
    """

    @abstractmethod
    def log_joint(self, tokens: np.ndarray) -> float:
        """ln p(complete sequence); -inf off support."""

    def conditional_completions(
        self, x: PartialSequence
    ) -> tuple[np.ndarray, np.ndarray]:
        """All completions of ``x`` with their renormalized probabilities.

        Returns ``(completions, probs)`` where completions is (S, |M|) over the
        masked positions in ascending index order. A zero-mass context yields
        the uniform distribution over completions, matching the marginal
        fallback convention.
        """
        masked = x.masked_indices
        combos = np.array(
            list(itertools.product(range(self.vocab.size), repeat=masked.size)),
            dtype=np.int64,
        ).reshape(-1, masked.size)
        probs = np.empty(combos.shape[0], dtype=float)
        tokens = x.tokens.copy()
        for row, combo in enumerate(combos):
            tokens[masked] = combo
            probs[row] = np.exp(self.log_joint(tokens))
        total = probs.sum()
        if total <= 0.0:
            probs = np.full(combos.shape[0], 1.0 / combos.shape[0])
        else:
            probs = probs / total
        return combos, probs


class TabularJointModel(ExactJointModel):
    """Explicit joint over a listed support of complete sequences.

    Conditionals are computed by summing the table over completions consistent
    with the observed cells, so every unmasking order yields the same path
    probability for the same final sequence (order consistency).
    """

    def __init__(self, vocab: Vocab, length: int, support: np.ndarray, probs: np.ndarray):
        super().__init__(vocab, length)
        support = np.asarray(support, dtype=np.int64)
        probs = np.asarray(probs, dtype=float)
        if support.ndim != 2 or support.shape[1] != length:
            raise InputError("support must have shape (S, length)")
        if probs.shape != (support.shape[0],):
            raise InputError("probs must align with support rows")
        if (probs < 0).any():
            raise InputError("probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > 1e-10:
            raise InputError(f"support probabilities sum to {probs.sum()!r}, not 1")
        if ((support < 0) | (support >= vocab.size)).any():
            raise InputError("support contains out-of-vocab tokens")
        keys = [tuple(row) for row in support]
        if len(set(keys)) != len(keys):
            raise InputError("support rows must be unique")
        self.support = support
        self.probs = probs
        self._index = {k: float(p) for k, p in zip(keys, probs)}

    @classmethod
    def from_dense(cls, vocab: Vocab, length: int, flat_probs: np.ndarray) -> "TabularJointModel":
        """Build from a dense table over all V^N sequences (row-major token order)."""
        flat_probs = np.asarray(flat_probs, dtype=float).ravel()
        if flat_probs.size != vocab.size**length:
            raise InputError("dense table size must be V**N")
        support = np.array(
            list(itertools.product(range(vocab.size), repeat=length)), dtype=np.int64
        )
        return cls(vocab, length, support, flat_probs)

    @classmethod
    def random_dirichlet(
        cls, vocab: Vocab, length: int, seed: int, alpha: float = 1.0
    ) -> "TabularJointModel":
        """Strictly positive random table; spikier for smaller ``alpha``."""
        rng = derive_stream(seed, 0)
        n = vocab.size**length
        probs = rng.dirichlet(np.full(n, alpha))
        probs = np.maximum(probs, 1e-12)
        probs = probs / probs.sum()
        return cls.from_dense(vocab, length, probs)

    def log_joint(self, tokens: np.ndarray) -> float:
        p = self._index.get(tuple(int(t) for t in tokens), 0.0)
        return float(np.log(p)) if p > 0.0 else float("-inf")

    def conditional_completions(self, x: PartialSequence):
        masked = x.masked_indices
        rows, weights = self._consistent_rows(x)
        if weights.sum() <= 0.0:
            return super().conditional_completions(x)  # uniform fallback
        return rows[:, masked], weights / weights.sum()

    def _consistent_rows(self, x: PartialSequence) -> tuple[np.ndarray, np.ndarray]:
        obs = x.observed_indices
        if obs.size == 0:
            return self.support, self.probs
        keep = np.all(self.support[:, obs] == x.tokens[obs], axis=1)
        return self.support[keep], self.probs[keep]

    def _conditional_marginals(self, x: PartialSequence) -> dict[int, np.ndarray]:
        rows, weights = self._consistent_rows(x)
        total = weights.sum()
        out: dict[int, np.ndarray] = {}
        for i in x.masked_indices:
            if total <= 0.0:
                out[int(i)] = np.full(self.vocab.size, 1.0 / self.vocab.size)
            else:
                counts = np.bincount(rows[:, i], weights=weights, minlength=self.vocab.size)
                out[int(i)] = counts / total
        return out


class MarkovChainModel(ExactJointModel):
    """First-order chain with exact conditionals via forward/backward messages."""

    def __init__(
        self, vocab: Vocab, length: int, initial: np.ndarray, transition: np.ndarray
    ):
        super().__init__(vocab, length)
        initial = np.asarray(initial, dtype=float)
        transition = np.asarray(transition, dtype=float)
        if initial.shape != (vocab.size,):
            raise InputError("initial distribution must have length V")
        if transition.shape != (vocab.size, vocab.size):
            raise InputError("transition matrix must be V x V")
        if (initial < 0).any() or abs(initial.sum() - 1.0) > 1e-10:
            raise InputError("initial distribution must be a categorical")
        if (transition < 0).any() or np.abs(transition.sum(axis=1) - 1.0).max() > 1e-10:
            raise InputError("transition rows must each sum to 1")
        self.initial = initial
        self.transition = transition

    def log_joint(self, tokens: np.ndarray) -> float:
        with np.errstate(divide="ignore"):
            total = np.log(self.initial[tokens[0]])
            for a, b in zip(tokens[:-1], tokens[1:]):
                total += np.log(self.transition[a, b])
        return float(total)

    def _evidence(self, x: PartialSequence) -> np.ndarray:
        ev = np.ones((self.length, self.vocab.size))
        for i in x.observed_indices:
            ev[i] = 0.0
            ev[i, x.tokens[i]] = 1.0
        return ev

    def _conditional_marginals(self, x: PartialSequence) -> dict[int, np.ndarray]:
        ev = self._evidence(x)
        fwd = np.empty_like(ev)
        fwd[0] = self.initial * ev[0]
        impossible = fwd[0].sum() <= 0.0
        for t in range(1, self.length):
            fwd[t] = (fwd[t - 1] @ self.transition) * ev[t]
            s = fwd[t].sum()
            if s <= 0.0:
                impossible = True
                break
            fwd[t] /= s  # rescale to dodge underflow; posteriors renormalize anyway
        if impossible:
            uniform = np.full(self.vocab.size, 1.0 / self.vocab.size)
            return {int(i): uniform.copy() for i in x.masked_indices}
        bwd = np.empty_like(ev)
        bwd[-1] = 1.0
        for t in range(self.length - 2, -1, -1):
            bwd[t] = self.transition @ (bwd[t + 1] * ev[t + 1])
            s = bwd[t].max()
            if s > 0:
                bwd[t] /= s
        out: dict[int, np.ndarray] = {}
        for i in x.masked_indices:
            post = fwd[i] * bwd[i]
            s = post.sum()
            if s <= 0.0:
                out[int(i)] = np.full(self.vocab.size, 1.0 / self.vocab.size)
            else:
                out[int(i)] = post / s
        return out

    def as_tabular(self) -> TabularJointModel:
        """Dense-table equivalent by full enumeration (tiny lengths only)."""
        support = np.array(
            list(itertools.product(range(self.vocab.size), repeat=self.length)),
            dtype=np.int64,
        )
        probs = np.array([np.exp(self.log_joint(row)) for row in support])
        return TabularJointModel(self.vocab, self.length, support, probs / probs.sum())


class NoisyMarginalWrapper(Denoiser):
    """Mixes each inner marginal with a context-keyed random categorical.

    ``(1 - eps) * p + eps * u`` with u drawn once per (seed, position, observed
    context) from a flat Dirichlet, so the wrapped model is deterministic but
    no longer order-consistent: different unmasking orders reach different
    path likelihoods, standing in for a learned model's inconsistency.
    """

    def __init__(self, inner: Denoiser, noise_scale: float, seed: int):
        if not 0.0 <= noise_scale < 1.0:
            raise InputError(f"noise_scale must lie in [0, 1), got {noise_scale}")
        super().__init__(inner.vocab, inner.length)
        self.inner = inner
        self.noise_scale = float(noise_scale)
        self.seed = int(seed)
        self._perturbation_cache: dict[tuple, np.ndarray] = {}

    def _perturbation(self, position: int, context: tuple[int, ...]) -> np.ndarray:
        key = (position,) + context
        u = self._perturbation_cache.get(key)
        if u is None:
            rng = derive_stream(self.seed, NOISE, position, *context)
            u = rng.dirichlet(np.ones(self.vocab.size))
            self._perturbation_cache[key] = u
        return u

    def _conditional_marginals(self, x: PartialSequence) -> dict[int, np.ndarray]:
        base = self.inner._conditional_marginals(x)
        if self.noise_scale == 0.0:
            return base
        context = encode_context(x.observed_items())
        out: dict[int, np.ndarray] = {}
        for i, p in base.items():
            u = self._perturbation(int(i), context)
            out[int(i)] = (1.0 - self.noise_scale) * np.asarray(p) + self.noise_scale * u
        return out


# ---------------------------------------------------------------------------
# Stateless operations over one marginal evaluation
# ---------------------------------------------------------------------------


def marginals(model: Denoiser, x: PartialSequence) -> MarginalSet:
    """One model forward: marginal + entropy for every masked position."""
    return model.marginals(x)


def _check_step(x: PartialSequence, positions: np.ndarray) -> None:
    if positions.size == 0:
        raise InputError("step position set must be nonempty")
    if np.unique(positions).size != positions.size:
        raise InputError("step positions must be distinct")
    masked = set(x.masked_indices.tolist())
    outside = [int(i) for i in positions if int(i) not in masked]
    if outside:
        raise InputError(f"positions {outside} are not masked")


def step_logprob_from(ms: MarginalSet, positions, values) -> float:
    """ln q of assigning ``values`` at ``positions`` under one evaluation."""
    total = 0.0
    for i, v in zip(np.asarray(positions), np.asarray(values)):
        p = float(ms[int(i)][int(v)])
        if p <= 0.0:
            return float("-inf")
        total += float(np.log(p))
    return total


def step_logprob(model: Denoiser, x: PartialSequence, positions, values) -> float:
    """Sum of ln p(value_i | observed) over the step's positions; <= 0 or -inf."""
    positions = np.asarray(positions, dtype=np.int64)
    values = np.asarray(values, dtype=np.int64)
    _check_step(x, positions)
    if ((values < 0) | (values >= x.vocab.size)).any():
        raise InputError("values outside vocab")
    return step_logprob_from(model.marginals(x), positions, values)


def sample_from(
    ms: MarginalSet, positions, temperature: float, stream: np.random.Generator
) -> np.ndarray:
    """Sample one token per position, independently, at the given temperature.

    temperature 0 means the per-position argmax with lowest-id tie break;
    t > 0 samples from p^(1/t) renormalized.
    """
    if temperature < 0:
        raise InputError("temperature must be nonnegative")
    out = np.empty(len(positions), dtype=np.int64)
    for slot, i in enumerate(np.asarray(positions)):
        p = np.asarray(ms[int(i)], dtype=float)
        if temperature == 0.0:
            out[slot] = int(np.argmax(p))  # argmax takes the lowest index on ties
        else:
            with np.errstate(divide="ignore"):
                logits = np.log(p) / temperature
            logits -= logits.max()
            w = np.exp(logits)
            w /= w.sum()
            out[slot] = int(stream.choice(p.size, p=w))
    return out


def sample_step(
    model: Denoiser,
    x: PartialSequence,
    positions,
    temperature: float,
    stream: np.random.Generator,
) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.int64)
    _check_step(x, positions)
    return sample_from(model.marginals(x), positions, temperature, stream)
