"""Closed-form model-forward accounting.

One denoiser call (all masked marginals at once) is one forward. Decoding a
particle costs one forward per step; a lookahead estimate from a state with m
masked cells costs ``1 + R * (K_eff(m) - 1)`` forwards (initial evaluation
shared by the entropy term and every rollout's first stage, then one fresh
evaluation per non-final stage per rollout); entropy guidance costs one
forward per weighted, still-masked particle. These formulas are exact: the
diagnostics assert them against the measured counter on every run.
"""

from __future__ import annotations

from .lookahead import LookaheadConfig

__all__ = [
    "estimate_forwards",
    "resample_steps",
    "smc_forwards",
    "decode_forwards",
]


def estimate_forwards(config: LookaheadConfig, num_masked: int) -> int:
    """Forward cost of one value estimate from a state with ``num_masked`` masks."""
    if num_masked <= 0:
        return 0
    k_eff, _ = config.effective_stages(num_masked)
    return 1 + config.rollouts * (k_eff - 1)


def resample_steps(total_steps: int, interval: int) -> list[int]:
    """1-based step counters s at which weighting/resampling fires.

    Fires when s is a multiple of the interval, and always at the final step.
    """
    steps = [s for s in range(1, total_steps + 1) if s % interval == 0]
    if total_steps not in steps:
        steps.append(total_steps)
    return steps


def decode_forwards(total_steps: int) -> int:
    """A plain single-particle decode: one forward per step."""
    return total_steps


def smc_forwards(
    *,
    particles: int,
    total_steps: int,
    tokens_per_step: int,
    generatable: int,
    resample_interval: int,
    guidance: str,
    lookahead: LookaheadConfig | None,
) -> int:
    """Exact total forwards of one particle-search run."""
    total = total_steps * particles
    for s in resample_steps(total_steps, resample_interval):
        remaining = generatable - s * tokens_per_step
        if remaining <= 0:
            continue
        if guidance == "lookahead":
            if lookahead is None:
                raise ValueError("lookahead guidance requires a lookahead config")
            total += particles * estimate_forwards(lookahead, remaining)
        elif guidance == "entropy":
            total += particles
        elif guidance == "none":
            pass
        else:
            raise ValueError(f"unknown guidance {guidance!r}")
    return total
