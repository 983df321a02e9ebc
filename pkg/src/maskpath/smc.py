"""Particle search over unmasking orders with globally comparable weights.

A population of particles decodes in parallel under the base proposal policy.
At fixed intervals each particle is weighed by its accumulated path
log-likelihood plus a guidance term that estimates the remaining path
log-likelihood (lookahead estimate, negated mean entropy, or nothing), then
the population is resampled multinomially through a temperature softmax.
Because the weight approximates the *terminal* log-likelihood, particles that
unmasked different positions remain comparable on one global scale.

Determinism: every stream is derived from the master seed plus an integer
path; reductions run in particle-index order. After resampling, a slot keeps
its stream only if it selected itself; any copy onto a different slot gets a
fresh stream keyed by (seed, step, slot) so duplicates diverge. A single
particle with guidance "none" therefore reproduces the plain policy decode
byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .budget import smc_forwards
from .errors import ConfigError, DegeneratePopulation, InputError
from .lookahead import LookaheadConfig, estimate
from .models import Denoiser, PartialSequence, sample_from, step_logprob_from
from .policies import (
    PolicyConfig,
    propose_positions,
    restrict_semi_ar,
    score_positions,
    softmax_probabilities,
)
from .streams import PARTICLE, RESAMPLE, derive_stream
from .trajectory import PathRecord, accumulate

__all__ = [
    "SmcConfig",
    "ParticleState",
    "WeightVector",
    "SmcResult",
    "propagate",
    "weigh",
    "resample",
    "run",
    "decode_single",
]

GUIDANCE_KINDS = ("lookahead", "entropy", "none")

# Stream sub-tags under the master seed.
_ESTIMATE = 11


@dataclass
class SmcConfig:
    """Particle count, schedule and guidance for one search run."""

    particles: int = 4
    resample_interval: int = 1
    resample_temperature: float = 0.1
    guidance: str = "lookahead"
    sampling_temperature: float = 0.0
    lookahead: LookaheadConfig = field(default_factory=LookaheadConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.particles < 1:
            raise ConfigError("particles must be >= 1")
        if self.resample_interval < 1:
            raise ConfigError("resample_interval must be >= 1")
        if self.resample_temperature <= 0:
            raise ConfigError("resample_temperature must be > 0")
        if self.guidance not in GUIDANCE_KINDS:
            raise ConfigError(f"guidance must be one of {GUIDANCE_KINDS}")
        if self.sampling_temperature < 0:
            raise ConfigError("sampling_temperature must be nonnegative")

    def total_steps(self, generatable: int) -> int:
        g = self.policy.tokens_per_step
        if generatable % g != 0:
            raise ConfigError(
                f"{generatable} generatable positions not divisible by tokens_per_step={g}"
            )
        steps = generatable // g
        if self.resample_interval > steps:
            raise ConfigError("resample_interval exceeds the step count")
        return steps


@dataclass
class ParticleState:
    """One candidate decode: partial sequence, record, running total, stream.

    ``partial`` and ``record`` are immutable value types, so resampled copies
    can share them; only the stream and lineage are per-slot.
    """

    partial: PartialSequence
    record: PathRecord
    log_likelihood: float
    stream: np.random.Generator
    lineage: list[tuple[int, int]] = field(default_factory=list)


@dataclass(frozen=True)
class WeightVector:
    log_weights: np.ndarray
    probabilities: np.ndarray


def _generatable_rank(initial: PartialSequence) -> dict[int, int]:
    masked = sorted(int(i) for i in initial.masked_indices)
    return {pos: rank for rank, pos in enumerate(masked)}


def propagate(
    particle: ParticleState,
    model: Denoiser,
    config: SmcConfig,
    rank: dict[int, int] | None = None,
) -> ParticleState:
    """Advance one particle by one step: propose positions, sample, commit.

    One model forward serves the policy scores, the token sampling and the
    step log-likelihood. The step's log-likelihood always comes from the
    untempered marginals.
    """
    if particle.partial.is_complete:
        raise InputError("particle is already fully decoded")
    ms = model.marginals(particle.partial)
    scores = score_positions(config.policy, ms, rank)
    if config.policy.semi_ar_block is not None:
        scores = restrict_semi_ar(config.policy, scores, particle.partial)
    g = min(config.policy.tokens_per_step, particle.partial.num_masked)
    positions = propose_positions(config.policy, scores, particle.stream, g=g)
    values = sample_from(ms, positions, config.sampling_temperature, particle.stream)
    step_ll = step_logprob_from(ms, positions, values)
    record = accumulate(particle.record, positions, values, step_ll)
    return ParticleState(
        partial=particle.partial.with_values(positions, values),
        record=record,
        log_likelihood=particle.log_likelihood + step_ll,
        stream=particle.stream,
        lineage=particle.lineage,
    )


def weigh(
    particles: list[ParticleState],
    model: Denoiser,
    config: SmcConfig,
    step: int,
) -> WeightVector:
    """Global log-weights: accumulated path LL plus the guidance term.

    Lookahead guidance adds the estimated remaining path LL of the
    post-propagation state; entropy guidance subtracts the mean masked
    entropy; fully decoded particles get a zero guidance term (no future).
    """
    log_w = np.empty(len(particles), dtype=float)
    for m, particle in enumerate(particles):
        bonus = 0.0
        if not particle.partial.is_complete:
            if config.guidance == "lookahead":
                report = estimate(
                    model,
                    particle.partial,
                    config.lookahead,
                    seed=(config.seed, _ESTIMATE, step, m),
                )
                bonus = report.v_total
            elif config.guidance == "entropy":
                bonus = -model.marginals(particle.partial).mean_entropy()
        log_w[m] = particle.log_likelihood + bonus
    if not np.isfinite(log_w).any():
        raise DegeneratePopulation("all particle weights are -inf")
    probs = softmax_probabilities(log_w, config.resample_temperature)
    return WeightVector(log_weights=log_w, probabilities=probs)


def resample(
    particles: list[ParticleState],
    weights: WeightVector,
    config: SmcConfig,
    step: int,
) -> list[ParticleState]:
    """Multinomial resampling with replacement, deterministic given the seed.

    Slots that select a different parent are deep-copied and re-keyed with a
    fresh stream derived from (seed, step, slot); self-selections keep their
    stream so a single-particle run is unchanged by the resampling machinery.
    """
    rng = derive_stream(config.seed, RESAMPLE, step)
    m = len(particles)
    choices = rng.choice(m, size=m, p=weights.probabilities)
    out: list[ParticleState] = []
    for slot, parent in enumerate(choices):
        parent = int(parent)
        src = particles[parent]
        stream = (
            src.stream
            if parent == slot
            else derive_stream(config.seed, RESAMPLE, step, slot)
        )
        out.append(
            ParticleState(
                partial=src.partial,
                record=src.record,
                log_likelihood=src.log_likelihood,
                stream=stream,
                lineage=src.lineage + [(step, parent)],
            )
        )
    return out


@dataclass
class SmcResult:
    winner: PathRecord
    winner_index: int
    particles: list[ParticleState]
    genealogy: list[list[tuple[int, int]]]
    ess_per_resample: list[float]
    forwards_measured: int
    forwards_expected: int


def _initial_particles(
    initial: PartialSequence, config: SmcConfig
) -> list[ParticleState]:
    out = []
    for m in range(config.particles):
        out.append(
            ParticleState(
                partial=initial,
                record=PathRecord(initial),
                log_likelihood=0.0,
                stream=derive_stream(config.seed, PARTICLE, m),
            )
        )
    return out


def run(model: Denoiser, initial: PartialSequence, config: SmcConfig) -> SmcResult:
    """Full search: propagate all particles for T steps, weighing and
    resampling every ``resample_interval`` steps and at the end, then return
    the particle with the highest terminal path log-likelihood (ties to the
    lowest index)."""
    generatable = initial.num_masked
    if generatable == 0:
        raise InputError("initial state is already complete")
    total_steps = config.total_steps(generatable)
    rank = _generatable_rank(initial)
    start_forwards = model.forward_count
    particles = _initial_particles(initial, config)
    ess: list[float] = []
    for s in range(1, total_steps + 1):
        particles = [propagate(p, model, config, rank) for p in particles]
        if s % config.resample_interval == 0 or s == total_steps:
            weights = weigh(particles, model, config, step=s)
            ess.append(float(1.0 / np.square(weights.probabilities).sum()))
            particles = resample(particles, weights, config, step=s)
    lls = np.array([p.log_likelihood for p in particles])
    winner_index = int(np.argmax(lls))  # argmax ties break to the lowest index
    expected = smc_forwards(
        particles=config.particles,
        total_steps=total_steps,
        tokens_per_step=config.policy.tokens_per_step,
        generatable=generatable,
        resample_interval=config.resample_interval,
        guidance=config.guidance,
        lookahead=config.lookahead,
    )
    return SmcResult(
        winner=particles[winner_index].record,
        winner_index=winner_index,
        particles=particles,
        genealogy=[list(p.lineage) for p in particles],
        ess_per_resample=ess,
        forwards_measured=model.forward_count - start_forwards,
        forwards_expected=expected,
    )


def decode_single(
    model: Denoiser, initial: PartialSequence, config: SmcConfig
) -> PathRecord:
    """Plain single-particle policy decode (no weighting, no resampling).

    Uses the same stream derivation as particle 0 of a search run, so a
    1-particle, guidance-free search reproduces it byte-for-byte.
    """
    generatable = initial.num_masked
    if generatable == 0:
        raise InputError("initial state is already complete")
    total_steps = config.total_steps(generatable)
    rank = _generatable_rank(initial)
    particle = ParticleState(
        partial=initial,
        record=PathRecord(initial),
        log_likelihood=0.0,
        stream=derive_stream(config.seed, PARTICLE, 0),
    )
    for _ in range(total_steps):
        particle = propagate(particle, model, config, rank)
    return particle.record
