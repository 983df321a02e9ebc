"""Benchmark runners: method registry, budget-matched run matrix, and the two
analysis experiments (proxy ranking and estimator fidelity).

A matrix cell is (task instance, method); instances double as seeds. One job
builds a task instance once and runs every method on it, so per-instance
outcomes stay paired for sign tests and expensive instance searches are not
repeated per method. Every run asserts its measured forward count against the
closed-form budget before it is accepted.
"""

from __future__ import annotations

import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .budget import decode_forwards, smc_forwards
from .errors import ConfigError, InputError
from .lookahead import LookaheadConfig, estimate
from .models import PartialSequence
from .oracle import mc_elbo, path_entropy
from .policies import PolicyConfig, default_pc_background
from .smc import SmcConfig, decode_single, run as smc_run
from .streams import EXPERIMENT, derive_stream
from .tasks import (
    Task,
    correlated_chain_model,
    task_sudoku4,
    task_threshold_tabular,
    task_trap_markov,
)
from .trajectory import PathRecord

__all__ = [
    "MethodSpec",
    "TaskSpec",
    "RunResult",
    "parse_method",
    "expected_cell_forwards",
    "run_matrix",
    "experiment_proxy_correlation",
    "experiment_estimator_fidelity",
]

SINGLE_POLICIES = ("uniform", "confidence", "entropy", "margin", "pc")
_METHOD_RE = re.compile(r"^([a-z-]+(?:\+[a-z]+)?)(?:\((\d+)\))?$")


@dataclass(frozen=True)
class MethodSpec:
    """Parsed method cell: family plus its sample count and policy choice."""

    name: str
    family: str  # single | best-of-n | majority-vote | smc
    policy_kind: str | None = None
    semi_ar: bool = False
    samples: int = 1
    guidance: str = "none"
    deterministic: bool = False  # greedy: top-1 proposal, argmax tokens


def parse_method(text: str, base_policy: str = "confidence") -> MethodSpec:
    """Parse a method string.

    Accepted forms: the five scorer names (optionally ``semi-ar+<kind>``),
    ``greedy``, ``best-of-n(M)``, ``majority-vote(M)``, ``entropy-smc(M)``,
    ``lookahead-smc(M)``. Multi-sample families decode with the configured
    base policy.
    """
    m = _METHOD_RE.match(text.strip())
    if not m:
        raise ConfigError(f"cannot parse method {text!r}")
    head, num = m.group(1), m.group(2)
    samples = int(num) if num else None

    def need_m() -> int:
        if samples is None:
            raise ConfigError(f"method {text!r} needs a sample count, e.g. {head}(4)")
        if samples < 1:
            raise ConfigError("sample count must be >= 1")
        return samples

    if head == "greedy":
        return MethodSpec(text, "single", base_policy, deterministic=True)
    if head in SINGLE_POLICIES:
        return MethodSpec(text, "single", head)
    if head.startswith("semi-ar+"):
        kind = head.split("+", 1)[1]
        if kind not in SINGLE_POLICIES:
            raise ConfigError(f"unknown semi-ar policy {kind!r}")
        return MethodSpec(text, "single", kind, semi_ar=True)
    if head == "best-of-n":
        return MethodSpec(text, "best-of-n", base_policy, samples=need_m())
    if head == "majority-vote":
        return MethodSpec(text, "majority-vote", base_policy, samples=need_m())
    if head == "entropy-smc":
        return MethodSpec(text, "smc", base_policy, samples=need_m(), guidance="entropy")
    if head == "lookahead-smc":
        return MethodSpec(
            text, "smc", base_policy, samples=need_m(), guidance="lookahead"
        )
    raise ConfigError(f"unknown method {text!r}")


@dataclass(frozen=True)
class TaskSpec:
    """Buildable description of a task family (picklable for workers)."""

    kind: str  # sudoku4 | trap_markov | threshold_tabular
    params: tuple[tuple[str, object], ...] = ()

    @classmethod
    def make(cls, kind: str, **params) -> "TaskSpec":
        return cls(kind, tuple(sorted(params.items())))

    def build(self, instance_seed: int) -> Task:
        params = dict(self.params)
        if self.kind == "sudoku4":
            return task_sudoku4(seed=instance_seed, **params)
        if self.kind == "trap_markov":
            return task_trap_markov(seed=instance_seed, **params)
        if self.kind == "threshold_tabular":
            return task_threshold_tabular(seed=instance_seed, **params)
        raise ConfigError(f"unknown task kind {self.kind!r}")

    def generatable(self) -> int:
        """Masked-cell count of a fresh instance, for budget math."""
        params = dict(self.params)
        if self.kind == "sudoku4":
            return 16 - int(params.get("givens", 8))
        if self.kind == "trap_markov":
            return int(params.get("length", 5))
        if self.kind == "threshold_tabular":
            return int(params.get("length", 6))
        raise ConfigError(f"unknown task kind {self.kind!r}")


@dataclass
class RunResult:
    """Outcome of one (instance, method) cell."""

    task: str
    instance_id: int
    method: str
    seed: int
    correct: bool
    path_ll: float
    forwards_used: int
    forwards_expected: int
    sequence: tuple[int, ...]
    wall_time_s: float = 0.0  # never written to report files
    mc_elbo: float | None = None
    path_entropy: float | None = None
    ess: tuple[float, ...] = ()
    genealogy: tuple = ()


@dataclass
class HarnessKnobs:
    """Shared decoding knobs for every method in a matrix."""

    base_policy: str = "confidence"
    proposal_top_k: int = 4
    proposal_temperature: float = 0.1
    tokens_per_step: int = 1
    semi_ar_block: int = 4
    sampling_temperature: float = 0.0
    resample_temperature: float = 0.1
    lookahead: LookaheadConfig = field(
        default_factory=lambda: LookaheadConfig(stage_size=16, rollouts=2, rollout_temperature=0.1)
    )


def _policy_for(spec: MethodSpec, knobs: HarnessKnobs, task: Task | None) -> PolicyConfig:
    kind = spec.policy_kind or knobs.base_policy
    top_k = 1 if spec.deterministic else knobs.proposal_top_k
    cfg = PolicyConfig(
        kind=kind,
        semi_ar_block=knobs.semi_ar_block if spec.semi_ar else None,
        tokens_per_step=knobs.tokens_per_step,
        proposal_top_k=max(top_k, knobs.tokens_per_step),
        proposal_temperature=knobs.proposal_temperature,
    )
    if kind == "pc" and task is not None:
        # One task-level forward, outside the per-cell accounting (the runner
        # resets the counter after policy construction).
        background = default_pc_background(task.model, task.initial)
        cfg = replace(cfg, pc_background=background)
    return cfg


def expected_cell_forwards(
    spec: MethodSpec, generatable: int, knobs: HarnessKnobs
) -> int:
    """Closed-form forward cost of one cell; must match the measurement."""
    steps = math.ceil(generatable / knobs.tokens_per_step)
    if spec.family == "single":
        return decode_forwards(steps)
    if spec.family in ("best-of-n", "majority-vote"):
        return spec.samples * decode_forwards(steps)
    if spec.family == "smc":
        return smc_forwards(
            particles=spec.samples,
            total_steps=steps,
            tokens_per_step=knobs.tokens_per_step,
            generatable=generatable,
            resample_interval=max(1, steps // 4),
            guidance=spec.guidance,
            lookahead=knobs.lookahead,
        )
    raise ConfigError(f"unknown method family {spec.family!r}")


def _run_method(task: Task, spec: MethodSpec, knobs: HarnessKnobs, seed: int) -> RunResult:
    model = task.model
    policy = _policy_for(spec, knobs, task)
    steps = math.ceil(task.initial.num_masked / knobs.tokens_per_step)
    model.reset_forward_count()
    t0 = time.perf_counter()
    ess: tuple[float, ...] = ()
    genealogy: tuple = ()

    if spec.family == "single":
        cfg = SmcConfig(
            particles=1,
            guidance="none",
            sampling_temperature=knobs.sampling_temperature,
            policy=policy,
            seed=seed,
        )
        record = decode_single(task.model, task.initial, cfg)
    elif spec.family in ("best-of-n", "majority-vote"):
        records: list[PathRecord] = []
        for m in range(spec.samples):
            cfg = SmcConfig(
                particles=1,
                guidance="none",
                sampling_temperature=knobs.sampling_temperature,
                policy=policy,
                seed=int(derive_stream(seed, EXPERIMENT, m).integers(2**31)),
            )
            records.append(decode_single(task.model, task.initial, cfg))
        if spec.family == "best-of-n":
            record = max(records, key=lambda r: r.total_ll)  # first max on ties
        else:
            record = _majority_vote(records, task)
    else:  # smc
        cfg = SmcConfig(
            particles=spec.samples,
            resample_interval=max(1, steps // 4),
            resample_temperature=knobs.resample_temperature,
            guidance=spec.guidance,
            sampling_temperature=knobs.sampling_temperature,
            lookahead=knobs.lookahead,
            policy=policy,
            seed=seed,
        )
        result = smc_run(task.model, task.initial, cfg)
        record = result.winner
        ess = tuple(result.ess_per_resample)
        genealogy = tuple(tuple(g) for g in result.genealogy)

    forwards = model.forward_count
    final = record.final_state().tokens
    return RunResult(
        task=task.name,
        instance_id=task.instance_id,
        method=spec.name,
        seed=seed,
        correct=bool(task.checker(final)),
        path_ll=record.total_ll,
        forwards_used=forwards,
        forwards_expected=expected_cell_forwards(spec, task.initial.num_masked, knobs),
        sequence=tuple(int(t) for t in final),
        wall_time_s=time.perf_counter() - t0,
        ess=ess,
        genealogy=genealogy,
    )


def _majority_vote(records: list[PathRecord], task: Task) -> PathRecord:
    """Modal answer over the designated positions; ties to highest path LL."""
    answers: dict[tuple[int, ...], list[PathRecord]] = {}
    for r in records:
        key = tuple(int(t) for t in r.final_state().tokens[list(task.answer_positions)])
        answers.setdefault(key, []).append(r)
    best_count = max(len(v) for v in answers.values())
    tied = [v for v in answers.values() if len(v) == best_count]
    pool = [r for group in tied for r in group]
    return max(pool, key=lambda r: r.total_ll)


def _run_instance_job(args) -> list[RunResult]:
    task_spec, instance_seed, methods, knobs = args
    task = task_spec.build(instance_seed)
    out = []
    for spec in methods:
        result = _run_method(task, spec, knobs, seed=instance_seed)
        if result.forwards_used != result.forwards_expected:
            raise InputError(
                f"forward accounting mismatch for {spec.name} on "
                f"{task.name}#{instance_seed}: measured {result.forwards_used}, "
                f"formula {result.forwards_expected}"
            )
        out.append(result)
    return out


def run_matrix(
    task_specs: list[TaskSpec],
    methods: list[str | MethodSpec],
    instances: int,
    knobs: HarnessKnobs | None = None,
    budget_cap: int | None = None,
    workers: int = 1,
    first_instance: int = 0,
) -> list[RunResult]:
    """Run every (task instance, method) cell, in deterministic order.

    The forwards cap is enforced up front from the accounting formula; a
    violation refuses the whole matrix and lists the per-method breakdown.
    """
    if not task_specs or instances < 1:
        return []
    knobs = knobs or HarnessKnobs()
    specs = [
        m if isinstance(m, MethodSpec) else parse_method(m, knobs.base_policy)
        for m in methods
    ]
    if not specs:
        return []
    if budget_cap is not None:
        breakdown = []
        total = 0
        for ts in task_specs:
            for spec in specs:
                per_cell = expected_cell_forwards(spec, ts.generatable(), knobs)
                subtotal = per_cell * instances
                total += subtotal
                breakdown.append(f"{ts.kind}/{spec.name}: {per_cell} x {instances} = {subtotal}")
        if total > budget_cap:
            detail = "; ".join(breakdown)
            raise ConfigError(
                f"forward budget {total} exceeds cap {budget_cap} ({detail})"
            )
    jobs = [
        (ts, first_instance + i, specs, knobs)
        for ts in task_specs
        for i in range(instances)
    ]
    results: list[RunResult] = []
    if workers <= 1:
        for job in jobs:
            results.extend(_run_instance_job(job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_run_instance_job, jobs, chunksize=4):
                results.extend(chunk)
    return results


# ---------------------------------------------------------------------------
# Proxy-ranking experiment
# ---------------------------------------------------------------------------

PROXIES = ("path_ll", "mc_elbo", "neg_path_entropy")


@dataclass
class ProxyReport:
    correlations: dict[str, dict[str, float]]
    curve_rows: list[dict]
    sample_rows: list[dict]


def _spearman(x: np.ndarray, y: np.ndarray) -> float:
    from scipy import stats

    rho = stats.spearmanr(x, y).statistic
    return float(rho) if np.isfinite(rho) else 0.0


def experiment_proxy_correlation(
    instances: int,
    samples_per_instance: int,
    seed: int,
    mc_samples: int = 48,
    task_params: dict | None = None,
    workers: int = 1,
) -> ProxyReport:
    """Rank sequence-level proxies by how well they predict correctness.

    Per instance, decodes several trajectories under uniformly random orders
    at sampling temperature 1, scores each with the decode's accumulated path
    LL, a Monte Carlo ELBO and the negated path entropy, then reports both
    per-instance-averaged and globally pooled rank correlations plus
    accuracy-versus-top-quantile curves for the two pooling protocols.
    """
    params = task_params or {}
    jobs = [(idx, samples_per_instance, seed, mc_samples, params) for idx in range(instances)]
    rows: list[dict] = []
    if workers <= 1:
        for job in jobs:
            rows.extend(_proxy_instance_job(job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_proxy_instance_job, jobs, chunksize=4):
                rows.extend(chunk)

    correlations: dict[str, dict[str, float]] = {}
    for proxy in PROXIES:
        per_inst = []
        for idx in range(instances):
            sub = [r for r in rows if r["instance"] == idx]
            correct = np.array([r["correct"] for r in sub], dtype=float)
            if correct.min() == correct.max():
                continue  # no variation: correlation undefined
            per_inst.append(_spearman(np.array([r[proxy] for r in sub]), correct))
        pooled = _spearman(
            np.array([r[proxy] for r in rows]),
            np.array([r["correct"] for r in rows], dtype=float),
        )
        correlations[proxy] = {
            "per_instance_mean": float(np.mean(per_inst)) if per_inst else 0.0,
            "pooled": pooled,
            "instances_used": float(len(per_inst)),
        }

    curve_rows = _quantile_curves(rows, instances)
    return ProxyReport(correlations=correlations, curve_rows=curve_rows, sample_rows=rows)


def _proxy_instance_job(args) -> list[dict]:
    idx, samples_per_instance, seed, mc_samples, params = args
    task = task_threshold_tabular(seed=seed * 100003 + idx, **params)
    model = task.model
    policy = PolicyConfig(
        kind="uniform",
        proposal_top_k=task.initial.length,
        proposal_temperature=1.0,
    )
    out = []
    for s in range(samples_per_instance):
        cfg = SmcConfig(
            particles=1,
            guidance="none",
            sampling_temperature=1.0,
            policy=policy,
            seed=int(derive_stream(seed, EXPERIMENT, idx, s).integers(2**31)),
        )
        record = decode_single(model, task.initial, cfg)
        final = record.final_state()
        elbo = mc_elbo(
            model, final, mc_samples, derive_stream(seed, EXPERIMENT, idx, s, 1)
        )
        out.append(
            {
                "instance": idx,
                "sample": s,
                "correct": bool(task.checker(final.tokens)),
                "path_ll": record.total_ll,
                "mc_elbo": elbo,
                "neg_path_entropy": -path_entropy(model, record),
            }
        )
    return out


def _quantile_curves(rows: list[dict], instances: int) -> list[dict]:
    """Accuracy among the top-q fraction ranked by each proxy, both poolings."""
    quantiles = [q / 10 for q in range(1, 11)]
    out = []
    for proxy in PROXIES:
        for q in quantiles:
            # global pooling
            ranked = sorted(rows, key=lambda r: -r[proxy])
            k = max(1, int(round(q * len(ranked))))
            top = ranked[:k]
            out.append(
                {
                    "proxy": proxy,
                    "pooling": "global",
                    "quantile": q,
                    "accuracy": float(np.mean([r["correct"] for r in top])),
                    "n": k,
                }
            )
            # per-instance averaging
            per = []
            for idx in range(instances):
                sub = sorted(
                    (r for r in rows if r["instance"] == idx), key=lambda r: -r[proxy]
                )
                kk = max(1, int(round(q * len(sub))))
                per.append(float(np.mean([r["correct"] for r in sub[:kk]])))
            out.append(
                {
                    "proxy": proxy,
                    "pooling": "per_instance",
                    "quantile": q,
                    "accuracy": float(np.mean(per)),
                    "n": len(per),
                }
            )
    return out


# ---------------------------------------------------------------------------
# Estimator-fidelity experiment
# ---------------------------------------------------------------------------


@dataclass
class FidelityReport:
    rows: list[dict]  # per (stage_size, step): error statistics

    def series(self, stage_size: int, column: str) -> list[float]:
        return [r[column] for r in self.rows if r["stage_size"] == stage_size]


def experiment_estimator_fidelity(
    length: int = 16,
    coupling: float = 0.05,
    stage_sizes: tuple[int, ...] = (4, 8, 16),
    rollouts: int = 4,
    seeds: int = 50,
    rollout_temperature: float = 0.1,
    seed0: int = 0,
) -> FidelityReport:
    """Compare base-only and corrected final-LL estimates mid-decode.

    On a near-copy chain, for every intermediate step of each decode and each
    configured stage size, adds the estimated remaining LL to the accumulated
    LL and measures the error against the run's true final path LL. The base
    (product) estimate ignores within-stage dependence, so it systematically
    undershoots while many correlated cells remain.
    """
    model = correlated_chain_model(length, coupling)
    initial = PartialSequence.fully_masked(model.vocab, length)
    policy = PolicyConfig(kind="uniform", proposal_top_k=length, proposal_temperature=1.0)
    errors: dict[tuple[int, int], list[tuple[float, float]]] = {}
    for s in range(seeds):
        cfg = SmcConfig(
            particles=1,
            guidance="none",
            sampling_temperature=1.0,
            policy=policy,
            seed=seed0 * 7919 + s,
        )
        record = decode_single(model, initial, cfg)
        truth = record.total_ll
        state = initial
        for step_idx, entry in enumerate(record.steps):
            cum = record.cumulative[step_idx - 1] if step_idx > 0 else 0.0
            if state.num_masked > 0:
                for a in stage_sizes:
                    config = LookaheadConfig(
                        stage_size=a,
                        rollouts=rollouts,
                        rollout_temperature=rollout_temperature,
                    )
                    report = estimate(model, state, config, seed=(seed0, s, step_idx, a))
                    base_err = (cum + report.v_base) - truth
                    full_err = (cum + report.v_total) - truth
                    errors.setdefault((a, step_idx), []).append((base_err, full_err))
            state = state.with_values(list(entry.positions), list(entry.values))
    rows = []
    for (a, step_idx), errs in sorted(errors.items()):
        base = np.array([e[0] for e in errs])
        full = np.array([e[1] for e in errs])
        rows.append(
            {
                "stage_size": a,
                "step": step_idx,
                "masked": length - step_idx,
                "mean_signed_base": float(base.mean()),
                "mean_abs_base": float(np.abs(base).mean()),
                "mean_signed_full": float(full.mean()),
                "mean_abs_full": float(np.abs(full).mean()),
                "n": len(errs),
            }
        )
    return FidelityReport(rows=rows)
