"""Brute-force reference computations on tiny instances.

Everything here enumerates rather than samples: exact state values under the
stage-wise reveal process, total correlation and the potential function from
the exact joint, the information bound chain as executable inequalities, and
the baseline proxies (Monte Carlo ELBO, path entropy, entropy guidance).
Inputs beyond the enumeration caps are refused, never silently approximated;
the one sampled fallback is labeled as such.

All quantities are in nats.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded, ContractViolation, InputError
from .lookahead import LookaheadConfig, random_partition
from .models import (
    Denoiser,
    ExactJointModel,
    MarginalSet,
    PartialSequence,
    entropy,
)
from .streams import ORACLE, derive_stream
from .trajectory import PathRecord

__all__ = [
    "OracleBudget",
    "BoundChainReport",
    "exact_value",
    "sampled_value",
    "exact_tc",
    "exact_potential",
    "verify_bound_chain",
    "lookahead_exact_expectation",
    "mc_elbo",
    "mc_elbo_exact",
    "path_entropy",
    "entropy_guidance",
]


@dataclass(frozen=True)
class OracleBudget:
    """Enumeration caps; operations refuse larger inputs."""

    max_masked: int = 5
    max_completions: int = 4096

    def check(self, x: PartialSequence) -> None:
        m = x.num_masked
        n_completions = x.vocab.size**m
        if m > self.max_masked:
            raise BudgetExceeded(
                f"{m} masked positions exceed max_masked={self.max_masked}"
            )
        if n_completions > self.max_completions:
            raise BudgetExceeded(
                f"{n_completions} completions exceed max_completions={self.max_completions}"
            )


DEFAULT_BUDGET = OracleBudget()


# ---------------------------------------------------------------------------
# Partition enumeration
# ---------------------------------------------------------------------------


def stage_sizes(num_items: int, stages: int) -> tuple[int, ...]:
    """Near-equal contiguous group sizes, larger groups first."""
    base, rem = divmod(num_items, stages)
    return tuple(base + (1 if k < rem else 0) for k in range(stages))


def ordered_partitions(items: tuple[int, ...], sizes: tuple[int, ...]):
    """All ordered partitions of ``items`` with the given size profile.

    The uniform-shuffle partition rule makes each of these equally likely.
    """
    if not sizes:
        yield ()
        return
    head, *tail = sizes
    for combo in itertools.combinations(items, head):
        rest = tuple(i for i in items if i not in combo)
        for sub in ordered_partitions(rest, tuple(tail)):
            yield (combo,) + sub


# ---------------------------------------------------------------------------
# Exact state value under the stage-wise reveal process
# ---------------------------------------------------------------------------


class _MarginalCache:
    """Memoized marginal queries keyed by the observed token vector."""

    def __init__(self, model: Denoiser):
        self.model = model
        self._cache: dict[tuple[int, ...], MarginalSet] = {}

    def __call__(self, x: PartialSequence) -> MarginalSet:
        key = tuple(int(t) for t in x.tokens)
        ms = self._cache.get(key)
        if ms is None:
            ms = self.model.marginals(x)
            self._cache[key] = ms
        return ms


def _stage_outcomes(ms: MarginalSet, group: tuple[int, ...], temperature: float):
    """Enumerate (values, sample_prob, untempered_logprob) for one stage.

    Only outcomes the sampler can actually produce are yielded (positive
    sampling probability); their untempered scores are therefore finite.
    """
    per_pos = []
    for i in group:
        p = np.asarray(ms[i], dtype=float)
        if temperature == 0.0:
            w = np.zeros_like(p)
            w[int(np.argmax(p))] = 1.0
        elif temperature == 1.0:
            w = p
        else:
            with np.errstate(divide="ignore"):
                logits = np.log(p) / temperature
            logits -= logits.max()
            w = np.exp(logits)
            w[p <= 0.0] = 0.0
            w = w / w.sum()
        per_pos.append((p, w))
    v = len(per_pos[0][0])
    for combo in itertools.product(range(v), repeat=len(group)):
        sample_prob = 1.0
        logprob = 0.0
        for (p, w), tok in zip(per_pos, combo):
            sample_prob *= w[tok]
            if sample_prob == 0.0:
                break
            logprob += math.log(p[tok])
        if sample_prob > 0.0:
            yield np.array(combo, dtype=np.int64), sample_prob, logprob


def _process_expectation(
    cache: _MarginalCache,
    x: PartialSequence,
    groups: tuple[tuple[int, ...], ...],
    temperature: float,
) -> float:
    """E[sum of untempered stage log-likelihoods] for one fixed partition."""
    if not groups:
        return 0.0
    ms = cache(x)
    head, tail = groups[0], groups[1:]
    total = 0.0
    for values, prob, logprob in _stage_outcomes(ms, head, temperature):
        future = 0.0
        if tail:
            future = _process_expectation(
                cache, x.with_values(list(head), values), tail, temperature
            )
        total += prob * (logprob + future)
    return total


def _sequential_value(
    cache: _MarginalCache, x: PartialSequence, memo: dict[tuple[int, ...], float]
) -> float:
    """State value under uniformly random singleton orders, by memoized DP.

    V(x) = mean over masked i of sum_v p(v|x) * (ln p(v|x) + V(x + {i: v})).
    Equal to the all-singleton-partition enumeration, exponentially cheaper.
    """
    if x.is_complete:
        return 0.0
    key = tuple(int(t) for t in x.tokens)
    hit = memo.get(key)
    if hit is not None:
        return hit
    ms = cache(x)
    per_position = []
    for i in ms.indices:
        p = np.asarray(ms[i], dtype=float)
        total = 0.0
        for v, pv in enumerate(p):
            if pv <= 0.0:
                continue
            total += pv * (
                math.log(pv) + _sequential_value(cache, x.with_values([i], [v]), memo)
            )
        per_position.append(total)
    value = math.fsum(per_position) / len(per_position)
    memo[key] = value
    return value


def exact_value(
    model: Denoiser,
    x: PartialSequence,
    stages: int,
    budget: OracleBudget = DEFAULT_BUDGET,
) -> float:
    """Exact expected future path log-likelihood of the K-stage reveal process.

    Averages over every equally-likely ordered stage partition of the masked
    set and every token realization, weighting by the sequential stage
    probabilities. With ``stages`` equal to the masked count this is the state
    value under a uniformly random unmasking order (computed by a memoized
    recursion rather than partition enumeration; the two agree exactly).
    """
    if x.is_complete:
        raise ContractViolation("exact_value requires masked positions")
    budget.check(x)
    masked = tuple(int(i) for i in x.masked_indices)
    if stages < 1:
        raise InputError("stages must be >= 1")
    k = min(stages, len(masked))
    cache = _MarginalCache(model)
    if k == len(masked):
        return _sequential_value(cache, x, {})
    sizes = stage_sizes(len(masked), k)
    totals = [
        _process_expectation(cache, x, part, temperature=1.0)
        for part in ordered_partitions(masked, sizes)
    ]
    return math.fsum(totals) / len(totals)


@dataclass(frozen=True)
class SampledValue:
    value: float
    exact: bool
    partitions_used: int


def sampled_value(
    model: Denoiser,
    x: PartialSequence,
    stages: int,
    num_partitions: int,
    seed: int,
) -> SampledValue:
    """Monte Carlo over partitions only; labeled approximate in its report."""
    if x.is_complete:
        raise ContractViolation("sampled_value requires masked positions")
    masked = x.masked_indices
    k = min(max(1, stages), masked.size)
    rng = derive_stream(seed, ORACLE)
    cache = _MarginalCache(model)
    totals = []
    for _ in range(num_partitions):
        groups = tuple(
            tuple(int(i) for i in g) for g in random_partition(masked, k, rng)
        )
        totals.append(_process_expectation(cache, x, groups, temperature=1.0))
    return SampledValue(
        value=math.fsum(totals) / len(totals), exact=False, partitions_used=num_partitions
    )


# ---------------------------------------------------------------------------
# Information quantities from the exact joint
# ---------------------------------------------------------------------------


def _require_joint(model: Denoiser) -> ExactJointModel:
    if not isinstance(model, ExactJointModel):
        raise InputError(
            "this oracle needs an exact-joint backend; marginal-only models "
            "(e.g. noisy wrappers) define no consistent joint"
        )
    return model


def _conditional_table(
    model: ExactJointModel, x: PartialSequence
) -> tuple[np.ndarray, np.ndarray]:
    """(completions over masked positions asc, probabilities) given x."""
    return model.conditional_completions(x)


def _subset_distribution(
    completions: np.ndarray, probs: np.ndarray, cols: list[int], vocab_size: int
) -> np.ndarray:
    """Marginal distribution over the given columns, as a dense tensor."""
    shape = (vocab_size,) * len(cols)
    flat = np.ravel_multi_index(tuple(completions[:, c] for c in cols), shape)
    out = np.bincount(flat, weights=probs, minlength=int(np.prod(shape)))
    return out.reshape(shape)


def _entropy_of(dist: np.ndarray) -> float:
    return entropy(dist.ravel())


def exact_tc(
    model: Denoiser,
    x: PartialSequence,
    subset,
    budget: OracleBudget = DEFAULT_BUDGET,
) -> float:
    """Total correlation of the subset given the observed context, in nats.

    KL divergence between the exact conditional joint over the subset and the
    product of its per-position marginals; always >= 0, and 0 for singletons.
    """
    model = _require_joint(model)
    budget.check(x)
    subset = [int(i) for i in subset]
    masked = [int(i) for i in x.masked_indices]
    if any(i not in masked for i in subset):
        raise InputError("subset must be masked positions")
    completions, probs = _conditional_table(model, x)
    cols = [masked.index(i) for i in subset]
    joint = _subset_distribution(completions, probs, cols, x.vocab.size)
    marginals = [
        _subset_distribution(completions, probs, [c], x.vocab.size) for c in cols
    ]
    total = 0.0
    for combo in itertools.product(range(x.vocab.size), repeat=len(cols)):
        pj = joint[combo]
        if pj <= 0.0:
            continue
        prod = math.prod(m[v] for m, v in zip(marginals, combo))
        total += pj * math.log(pj / prod)
    return max(0.0, float(total))


def exact_potential(
    model: Denoiser,
    x: PartialSequence,
    subset,
    budget: OracleBudget = DEFAULT_BUDGET,
) -> float:
    """Sum over i of I(X_i ; X_rest | context); upper-bounds the subset's TC."""
    model = _require_joint(model)
    budget.check(x)
    subset = [int(i) for i in subset]
    masked = [int(i) for i in x.masked_indices]
    if any(i not in masked for i in subset):
        raise InputError("subset must be masked positions")
    if len(subset) <= 1:
        return 0.0
    completions, probs = _conditional_table(model, x)
    cols = [masked.index(i) for i in subset]
    h_full = _entropy_of(_subset_distribution(completions, probs, cols, x.vocab.size))
    total = 0.0
    for c in cols:
        rest = [d for d in cols if d != c]
        h_i = _entropy_of(_subset_distribution(completions, probs, [c], x.vocab.size))
        h_rest = _entropy_of(_subset_distribution(completions, probs, rest, x.vocab.size))
        total += h_i + h_rest - h_full
    return max(0.0, float(total))


def _stagewise_tc_for_partition(
    completions: np.ndarray,
    probs: np.ndarray,
    groups: tuple[tuple[int, ...], ...],
    col_of: dict[int, int],
    vocab_size: int,
) -> float:
    """E over realized prefixes of the per-stage total correlations."""
    if not groups or probs.sum() <= 0.0:
        return 0.0
    norm = probs / probs.sum()
    head, tail = groups[0], groups[1:]
    cols = [col_of[i] for i in head]
    joint = _subset_distribution(completions, norm, cols, vocab_size)
    marginals = [_subset_distribution(completions, norm, [c], vocab_size) for c in cols]
    tc_here = 0.0
    for combo in itertools.product(range(vocab_size), repeat=len(cols)):
        pj = joint[combo]
        if pj <= 0.0:
            continue
        prod = math.prod(m[v] for m, v in zip(marginals, combo))
        tc_here += pj * math.log(pj / prod)
    total = max(0.0, tc_here)
    if tail:
        for combo in itertools.product(range(vocab_size), repeat=len(cols)):
            pj = joint[combo]
            if pj <= 0.0:
                continue
            keep = np.all(
                completions[:, cols] == np.array(combo, dtype=np.int64), axis=1
            )
            total += pj * _stagewise_tc_for_partition(
                completions[keep], norm[keep], tail, col_of, vocab_size
            )
    return total


@dataclass
class BoundChainReport:
    """Every inequality of the bound chain with its two sides and verdict."""

    tc: float
    potential: float
    entropy_sum: float
    per_stage_bounds: list[dict] = field(default_factory=list)
    tolerance: float = 1e-9

    @property
    def chain_ok(self) -> bool:
        return (
            self.tc <= self.potential + self.tolerance
            and self.potential <= self.entropy_sum + self.tolerance
        )

    @property
    def all_passed(self) -> bool:
        return self.chain_ok and all(row["passed"] for row in self.per_stage_bounds)

    def rows(self) -> list[dict]:
        out = [
            {
                "inequality": "tc<=potential",
                "lhs": self.tc,
                "rhs": self.potential,
                "passed": self.tc <= self.potential + self.tolerance,
            },
            {
                "inequality": "potential<=entropy_sum",
                "lhs": self.potential,
                "rhs": self.entropy_sum,
                "passed": self.potential <= self.entropy_sum + self.tolerance,
            },
        ]
        out.extend(self.per_stage_bounds)
        return out


def verify_bound_chain(
    model: Denoiser,
    x: PartialSequence,
    budget: OracleBudget = DEFAULT_BUDGET,
    entropy_scale: float = 1.0,
) -> BoundChainReport:
    """Check TC <= potential <= sum(H_i) and, for every stage count K, that the
    expected cumulative stage-wise TC is at most (1/K) * sum(H_i).

    Everything is computed by exhaustive enumeration over ordered partitions
    and completions. ``entropy_scale`` is a fault-injection hook for tests: it
    scales the entropy side so corrupted bounds are detected.
    """
    model = _require_joint(model)
    if x.is_complete:
        raise ContractViolation("verify_bound_chain requires masked positions")
    budget.check(x)
    masked = tuple(int(i) for i in x.masked_indices)
    completions, probs = _conditional_table(model, x)
    col_of = {pos: c for c, pos in enumerate(masked)}
    entropy_sum = entropy_scale * math.fsum(
        _entropy_of(_subset_distribution(completions, probs, [col_of[i]], x.vocab.size))
        for i in masked
    )
    report = BoundChainReport(
        tc=exact_tc(model, x, masked, budget),
        potential=exact_potential(model, x, masked, budget),
        entropy_sum=entropy_sum,
    )
    for k in range(1, len(masked) + 1):
        sizes = stage_sizes(len(masked), k)
        parts = list(ordered_partitions(masked, sizes))
        lhs = math.fsum(
            _stagewise_tc_for_partition(completions, probs, part, col_of, x.vocab.size)
            for part in parts
        ) / len(parts)
        rhs = entropy_sum / k
        report.per_stage_bounds.append(
            {
                "inequality": f"E[sum stage TC] <= entropy_sum/K @ K={k}",
                "stages": k,
                "lhs": lhs,
                "rhs": rhs,
                "passed": lhs <= rhs + report.tolerance,
            }
        )
    return report


def lookahead_exact_expectation(
    model: Denoiser,
    x: PartialSequence,
    stages: int,
    rollout_temperature: float = 1.0,
    budget: OracleBudget = DEFAULT_BUDGET,
) -> tuple[float, float, float]:
    """Exact (E[total], E[base], correction) of the lookahead estimator.

    Mirrors the estimator precisely: uniform random stage partitions, reveals
    sampled at ``rollout_temperature``, stage scores and the correction taken
    from untempered probabilities. At temperature 1 and stages == masked count,
    E[base] equals :func:`exact_value`.
    """
    if x.is_complete:
        raise ContractViolation("lookahead expectation requires masked positions")
    budget.check(x)
    masked = tuple(int(i) for i in x.masked_indices)
    k = min(max(1, stages), len(masked))
    cache = _MarginalCache(model)
    ms0 = cache(x)
    v_corr = ms0.entropy_sum() / k
    sizes = stage_sizes(len(masked), k)
    totals = [
        _process_expectation(cache, x, part, temperature=rollout_temperature)
        for part in ordered_partitions(masked, sizes)
    ]
    e_base = math.fsum(totals) / len(totals)
    return e_base + v_corr, e_base, v_corr


# ---------------------------------------------------------------------------
# Baseline proxies
# ---------------------------------------------------------------------------


def mc_elbo(
    model: Denoiser,
    x_complete: PartialSequence,
    samples: int,
    stream: np.random.Generator,
    freeze=(),
) -> float:
    """Monte Carlo estimate of the order-agnostic training bound.

    Each draw picks t ~ U(0,1), masks every non-frozen position independently
    with probability t (resampling the mask if it comes up empty), and scores
    (1/t) * ln p_D(masked | observed). Frozen positions (e.g. a prompt) are
    never masked.
    """
    if samples < 1:
        raise InputError("samples must be >= 1")
    if not x_complete.is_complete:
        raise ContractViolation("mc_elbo requires a fully specified sequence")
    frozen = {int(i) for i in freeze}
    maskable = np.array(
        [i for i in range(x_complete.length) if i not in frozen], dtype=np.int64
    )
    if maskable.size == 0:
        raise InputError("no maskable positions")
    terms = []
    for _ in range(samples):
        t = float(stream.uniform())
        while True:
            flags = stream.random(maskable.size) < t
            if flags.any():
                break
        masked_pos = maskable[flags]
        tokens = x_complete.tokens.copy()
        values = tokens[masked_pos].copy()
        tokens[masked_pos] = x_complete.vocab.mask_id
        state = PartialSequence(x_complete.vocab, tokens)
        ms = model.marginals(state)
        ll = 0.0
        for i, v in zip(masked_pos, values):
            p = float(ms[int(i)][int(v)])
            ll += math.log(p) if p > 0.0 else float("-inf")
        terms.append(ll / t)
    return float(np.mean(terms))


def mc_elbo_exact(
    model: Denoiser,
    x_complete: PartialSequence,
    freeze=(),
    budget: OracleBudget = DEFAULT_BUDGET,
) -> float:
    """Exact expectation of :func:`mc_elbo` by quadrature over t and patterns.

    Enumerates every nonempty mask pattern; the rejection of empty masks shows
    up as the (1 - (1-t)^n) normalizer. Only defined when the t -> 0 limit is
    integrable (e.g. single-position conditionals deterministic).
    """
    from scipy import integrate

    if not x_complete.is_complete:
        raise ContractViolation("mc_elbo_exact requires a fully specified sequence")
    frozen = {int(i) for i in freeze}
    maskable = [i for i in range(x_complete.length) if i not in frozen]
    n = len(maskable)
    if n == 0:
        raise InputError("no maskable positions")
    if 2**n - 1 > budget.max_completions:
        raise BudgetExceeded(f"{2**n - 1} mask patterns exceed the enumeration cap")
    patterns = []
    for r in range(1, n + 1):
        for combo in itertools.combinations(maskable, r):
            tokens = x_complete.tokens.copy()
            values = tokens[list(combo)].copy()
            tokens[list(combo)] = x_complete.vocab.mask_id
            state = PartialSequence(x_complete.vocab, tokens)
            ms = model.marginals(state)
            ll = 0.0
            for i, v in zip(combo, values):
                p = float(ms[int(i)][int(v)])
                ll += math.log(p) if p > 0.0 else float("-inf")
            patterns.append((r, ll))

    def integrand(t: float) -> float:
        if t <= 0.0 or t >= 1.0:
            return 0.0
        nonempty = 1.0 - (1.0 - t) ** n
        total = 0.0
        for r, ll in patterns:
            w = t**r * (1.0 - t) ** (n - r)
            total += w * ll
        return total / (nonempty * t)

    value, _ = integrate.quad(integrand, 0.0, 1.0, limit=200)
    return float(value)


def path_entropy(model: Denoiser, record: PathRecord) -> float:
    """Mean over decode steps of the mean masked-position entropy.

    Replays the record's contexts: before each step, averages the predictive
    entropy over every still-masked position, then averages across steps.
    """
    if not record.is_complete:
        raise ContractViolation("path_entropy requires a complete record")
    state = record.initial
    per_step = []
    for s in record.steps:
        ms = model.marginals(state)
        per_step.append(ms.mean_entropy())
        state = state.with_values(list(s.positions), list(s.values))
    return float(np.mean(per_step)) if per_step else 0.0


def entropy_guidance(model: Denoiser, x: PartialSequence) -> float:
    """Mean masked-position entropy; the entropy-guided search weight is its negation."""
    if x.is_complete:
        raise ContractViolation("entropy_guidance requires masked positions")
    return model.marginals(x).mean_entropy()
