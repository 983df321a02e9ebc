"""Unmasking-position scoring heuristics and the stochastic proposal rule.

Scorers map one marginal evaluation to per-position scores (higher wins).
The proposal draws g distinct positions from the softmax over the top-k
scores; semi-autoregressive blocking restricts eligibility to the earliest
incomplete block first. All tie-breaks go to the lowest position index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .models import Denoiser, MarginalSet, PartialSequence

__all__ = [
    "PositionScore",
    "PolicyConfig",
    "POLICY_KINDS",
    "score_positions",
    "restrict_semi_ar",
    "propose_positions",
    "softmax_probabilities",
    "default_pc_background",
]

POLICY_KINDS = ("uniform", "confidence", "entropy", "margin", "pc")


@dataclass(frozen=True)
class PositionScore:
    index: int
    score: float


@dataclass
class PolicyConfig:
    """Base-policy knobs; see the run-config schema for documented defaults."""

    kind: str = "confidence"
    semi_ar_block: int | None = None
    pc_lambda: float = 0.1
    pc_background: np.ndarray | None = None
    tokens_per_step: int = 1
    proposal_top_k: int = 1
    proposal_temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}; pick from {POLICY_KINDS}")
        if self.tokens_per_step < 1:
            raise ConfigError("tokens_per_step must be >= 1")
        if self.proposal_top_k < 1:
            raise ConfigError("proposal_top_k must be >= 1")
        if self.proposal_top_k < self.tokens_per_step:
            raise ConfigError("proposal_top_k must be >= tokens_per_step")
        if self.proposal_temperature <= 0:
            raise ConfigError("proposal_temperature must be > 0")
        if self.pc_lambda < 0:
            raise ConfigError("pc_lambda must be nonnegative")
        if self.semi_ar_block is not None and self.semi_ar_block < 1:
            raise ConfigError("semi_ar_block must be >= 1")


def default_pc_background(model: Denoiser, initial: PartialSequence) -> np.ndarray:
    """Mean of the model's marginals at the initial (prompt-only) state.

    Stands in for the corpus token-frequency prior the positional-confidence
    scorer expects; a uniform background would collapse the score to a
    constant (cross-entropy against uniform is ln V for any prediction).
    """
    ms = model.marginals(initial)
    stacked = np.stack([ms[i] for i in ms.indices])
    return stacked.mean(axis=0)


def _cross_entropy(p: np.ndarray, background: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(background), 0.0)
    return float(-terms.sum())


def score_positions(
    config: PolicyConfig,
    ms: MarginalSet,
    generatable_rank: dict[int, int] | None = None,
) -> list[PositionScore]:
    """Score every masked position under the configured heuristic.

    ``generatable_rank`` maps absolute positions to their index among
    non-prompt positions; the positional decay of the pc scorer counts from
    the sequence start excluding the prompt. Defaults to the absolute index.
    """
    if not ms.distributions:
        raise InputError("cannot score an empty marginal set")
    kind = config.kind
    scores: list[PositionScore] = []
    for i in ms.indices:
        p = np.asarray(ms[i], dtype=float)
        if kind == "uniform":
            s = 0.0
        elif kind == "confidence":
            s = float(p.max())
        elif kind == "entropy":
            s = -ms.entropies[i]
        elif kind == "margin":
            top2 = np.sort(p)[-2:]
            s = float(top2[1] - top2[0])
        elif kind == "pc":
            if config.pc_background is None:
                raise ConfigError("pc policy requires a background distribution")
            rank = generatable_rank[i] if generatable_rank else i
            s = -_cross_entropy(p, np.asarray(config.pc_background)) * float(
                np.exp(-config.pc_lambda * rank)
            )
        else:  # pragma: no cover - guarded by PolicyConfig
            raise ConfigError(f"unknown policy kind {kind!r}")
        scores.append(PositionScore(index=int(i), score=s))
    return scores


def restrict_semi_ar(
    config: PolicyConfig, scores: list[PositionScore], x: PartialSequence
) -> list[PositionScore]:
    """Keep only the earliest block (width B) that still has a masked cell.

    If that block holds fewer masked cells than tokens_per_step, eligibility
    extends into following blocks so a full step can still be proposed.
    """
    if config.semi_ar_block is None:
        raise InputError("semi_ar_block is not configured")
    block = config.semi_ar_block
    if block >= x.length:
        return list(scores)
    ordered = sorted(scores, key=lambda s: s.index)
    first_masked = ordered[0].index
    block_start = (first_masked // block) * block
    block_end = block_start + block
    kept = [s for s in ordered if s.index < block_end]
    while len(kept) < config.tokens_per_step and block_end < x.length:
        block_end += block
        kept = [s for s in ordered if s.index < block_end]
    return kept


def softmax_probabilities(values: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature softmax, shift-invariant and -inf tolerant."""
    if temperature <= 0:
        raise InputError("softmax temperature must be > 0")
    values = np.asarray(values, dtype=float)
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise InputError("softmax over all -inf values is undefined")
    shifted = (values - finite.max()) / temperature
    with np.errstate(over="ignore"):
        w = np.exp(shifted)
    w[~np.isfinite(values)] = 0.0
    return w / w.sum()


def propose_positions(
    config: PolicyConfig,
    scores: list[PositionScore],
    stream: np.random.Generator,
    g: int | None = None,
) -> np.ndarray:
    """Draw g distinct positions from P(i) proportional to exp(s_i / tau_p).

    Candidates are the top-k scores (ties to the lowest index); multi-position
    draws are iterated single draws with renormalization.
    """
    g = config.tokens_per_step if g is None else g
    if g < 1:
        raise InputError("must propose at least one position")
    if len(scores) < g:
        raise InputError(f"cannot propose {g} positions from {len(scores)} candidates")
    # Sort by (-score, index): stable top-k cut with lowest-index tie-break.
    ranked = sorted(scores, key=lambda s: (-s.score, s.index))
    pool = ranked[: max(config.proposal_top_k, g)]
    values = np.array([s.score for s in pool], dtype=float)
    indices = np.array([s.index for s in pool], dtype=np.int64)
    chosen: list[int] = []
    alive = np.ones(len(pool), dtype=bool)
    for _ in range(g):
        probs = softmax_probabilities(
            np.where(alive, values, -np.inf), config.proposal_temperature
        )
        pick = int(stream.choice(len(pool), p=probs))
        chosen.append(int(indices[pick]))
        alive[pick] = False
    return np.array(chosen, dtype=np.int64)
