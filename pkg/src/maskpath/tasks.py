"""Desk-scale benchmark tasks with exactly computable models.

Three families cover the planning/structured axis while staying enumerable:

* ``sudoku4``: 4x4 Sudoku as a uniform joint over all 288 valid grids, with
  given cells as prompt positions and a constraint checker;
* ``trap_markov``: a noisy Markov chain searched, at build time, until the
  confidence-greedy decode provably commits to a losing unmasking order that
  one step of exact-value lookahead avoids;
* random tabular instances with a joint-probability threshold checker, used
  for proxy-ranking experiments and oracle cross-checks.

Checkers are plain picklable objects so bench cells can run in worker
processes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import InputError
from .models import (
    Denoiser,
    MarkovChainModel,
    NoisyMarginalWrapper,
    PartialSequence,
    TabularJointModel,
    Vocab,
)
from .oracle import OracleBudget, exact_value
from .policies import PolicyConfig
from .smc import SmcConfig, decode_single
from .streams import TASK, derive_stream
from .trajectory import PathRecord, accumulate

__all__ = [
    "Task",
    "task_sudoku4",
    "task_trap_markov",
    "task_threshold_tabular",
    "correlated_pairs_model",
    "correlated_chain_model",
    "sudoku4_grids",
]


@dataclass
class Task:
    """One benchmark instance: model, prompt state, correctness predicate."""

    name: str
    instance_id: int
    model: Denoiser
    initial: PartialSequence
    checker: Callable[[np.ndarray], bool]
    answer_positions: tuple[int, ...] = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.answer_positions:
            self.answer_positions = tuple(
                int(i) for i in self.initial.masked_indices
            )


# ---------------------------------------------------------------------------
# 4x4 Sudoku
# ---------------------------------------------------------------------------

_BOXES = [
    [0, 1, 4, 5],
    [2, 3, 6, 7],
    [8, 9, 12, 13],
    [10, 11, 14, 15],
]


class SudokuChecker:
    """Row/column/2x2-box constraints on a flattened 4x4 grid."""

    def __call__(self, tokens: np.ndarray) -> bool:
        grid = np.asarray(tokens).reshape(4, 4)
        for r in range(4):
            if len(set(grid[r].tolist())) != 4:
                return False
        for c in range(4):
            if len(set(grid[:, c].tolist())) != 4:
                return False
        flat = grid.ravel()
        for box in _BOXES:
            if len(set(flat[box].tolist())) != 4:
                return False
        return True


@lru_cache(maxsize=1)
def sudoku4_grids() -> np.ndarray:
    """All valid 4x4 grids (288 of them), enumerated over row permutations."""
    perms = [np.array(p, dtype=np.int64) for p in itertools.permutations(range(4))]
    check = SudokuChecker()
    grids = []
    for r0 in perms:
        for r1 in perms:
            if (r0 == r1).any():
                continue
            for r2 in perms:
                if (r2 == r0).any() or (r2 == r1).any():
                    continue
                for r3 in perms:
                    grid = np.concatenate([r0, r1, r2, r3])
                    if check(grid):
                        grids.append(grid)
    return np.array(grids, dtype=np.int64)


def sudoku4_model() -> TabularJointModel:
    grids = sudoku4_grids()
    probs = np.full(len(grids), 1.0 / len(grids))
    return TabularJointModel(Vocab(4), 16, grids, probs)


def task_sudoku4(
    givens: int,
    seed: int,
    noise: float = 0.15,
    cells: dict[int, int] | None = None,
    max_retries: int = 16,
) -> Task:
    """Sudoku task: uniform joint over valid grids, given cells as the prompt.

    With ``cells`` unset, a solution grid is drawn and ``givens`` of its cells
    revealed (always consistent). Explicit cells are checked against the grid
    list; zero-solution givens raise after bounded retries.
    """
    if not 0 <= givens <= 16:
        raise InputError("givens must lie in [0, 16]")
    grids = sudoku4_grids()
    model = sudoku4_model()
    rng = derive_stream(seed, TASK)
    if cells is not None:
        positions = sorted(cells)
        values = [cells[p] for p in positions]
        consistent = np.all(grids[:, positions] == np.array(values), axis=1)
        if not consistent.any():
            raise InputError(f"givens {cells} admit zero solutions")
    else:
        for _ in range(max_retries):
            grid = grids[int(rng.integers(len(grids)))]
            positions = sorted(rng.choice(16, size=givens, replace=False).tolist())
            values = [int(grid[p]) for p in positions]
            consistent = np.all(grids[:, positions] == np.array(values), axis=1)
            if consistent.any():
                break
        else:  # pragma: no cover - consistent by construction
            raise InputError("failed to draw consistent givens")
    initial = PartialSequence.from_prompt(model.vocab, 16, positions, values)
    decoder: Denoiser = (
        NoisyMarginalWrapper(model, noise, seed=seed) if noise > 0 else model
    )
    return Task(
        name="sudoku4",
        instance_id=seed,
        model=decoder,
        initial=initial,
        checker=SudokuChecker(),
        metadata={"givens": givens, "noise": noise, "solutions": int(consistent.sum())},
    )


# ---------------------------------------------------------------------------
# Engineered order-sensitivity trap
# ---------------------------------------------------------------------------


class MembershipChecker:
    """Membership of the completed sequence in an explicit accepted set."""

    def __init__(self, accepted: set[tuple[int, ...]]):
        self.accepted = accepted

    def __call__(self, tokens: np.ndarray) -> bool:
        return tuple(int(t) for t in tokens) in self.accepted


class ChainBandChecker:
    """Accepts sequences whose log-probability under the clean chain clears a
    threshold (the designated high-probability set, without enumerating it)."""

    def __init__(self, initial: np.ndarray, transition: np.ndarray, threshold: float):
        self.initial = np.asarray(initial, dtype=float)
        self.transition = np.asarray(transition, dtype=float)
        self.threshold = float(threshold)

    def __call__(self, tokens: np.ndarray) -> bool:
        t = np.asarray(tokens, dtype=np.int64)
        with np.errstate(divide="ignore"):
            lp = np.log(self.initial[t[0]])
            for a, b in zip(t[:-1], t[1:]):
                lp += np.log(self.transition[a, b])
        return bool(lp >= self.threshold)


def _viterbi_max_logprob(pi: np.ndarray, a: np.ndarray, length: int) -> float:
    with np.errstate(divide="ignore"):
        lp = np.log(pi)
        log_a = np.log(a)
    for _ in range(length - 1):
        lp = (lp[:, None] + log_a).max(axis=0)
    return float(lp.max())


def _greedy_decode(model: Denoiser, initial: PartialSequence) -> PathRecord:
    cfg = SmcConfig(
        particles=1,
        guidance="none",
        sampling_temperature=0.0,
        policy=PolicyConfig(kind="confidence", proposal_top_k=1),
        seed=0,
    )
    return decode_single(model, initial, cfg)


def _lookahead_decode(model: Denoiser, initial: PartialSequence) -> PathRecord:
    """Decode guided by one step of exact lookahead at every move.

    At each step, ranks every (position, argmax token) move by its immediate
    log-likelihood plus the exact remaining state value, and commits the best
    one. Brute-force; tiny instances only.
    """
    budget = OracleBudget(max_masked=8, max_completions=8192)
    state = initial
    record = PathRecord(initial)
    while not state.is_complete:
        ms = model.marginals(state)
        best = None
        for i in sorted(int(j) for j in state.masked_indices):
            p = np.asarray(ms[i])
            v = int(np.argmax(p))
            step_ll = float(np.log(p[v])) if p[v] > 0 else float("-inf")
            nxt = state.with_values([i], [v])
            future = 0.0
            if not nxt.is_complete:
                future = exact_value(model, nxt, stages=nxt.num_masked, budget=budget)
            total = step_ll + future
            if best is None or total > best[0]:
                best = (total, i, v, step_ll)
        _, i, v, step_ll = best
        record = accumulate(record, [i], [v], step_ll)
        state = state.with_values([i], [v])
    return record


def _first_pick(record) -> int:
    return record.steps[0].positions[0]


def _stochastic_decode(
    model: Denoiser, initial: PartialSequence, seed_path: tuple[int, ...]
) -> PathRecord:
    """One base-policy sample: confidence scores, stochastic top-k proposal."""
    cfg = SmcConfig(
        particles=1,
        guidance="none",
        sampling_temperature=0.0,
        policy=PolicyConfig(
            kind="confidence", proposal_top_k=4, proposal_temperature=0.3
        ),
        seed=int(derive_stream(*seed_path).integers(2**31)),
    )
    return decode_single(model, initial, cfg)


def task_trap_markov(
    seed: int,
    length: int = 14,
    vocab_size: int = 3,
    noise: float = 0.3,
    top_mass_ratio: float = 0.9,
    sharpness: float = 0.25,
    fail_band: tuple[float, float] = (0.6, 0.97),
    probe_decodes: int = 16,
    verify_lookahead: bool | None = None,
    max_attempts: int = 2000,
) -> Task:
    """Search for a noisy chain where confident unmasking traps the decode.

    The accepted set is the top probability band of the clean chain (checked
    by log-probability threshold, never enumerated). A candidate is kept only
    if: the greedy decode lands outside the band; the noise-free greedy decode
    lands inside it (the trap vanishes at eps = 0); and most, but not all,
    stochastic base-policy decodes fail (a deep yet escapable trap). For short
    chains (or when ``verify_lookahead`` is forced on) the build additionally
    requires that the exact-value-guided decode escapes; the brute-force value
    is unaffordable beyond ~7 positions. The search certificate lands in the
    task metadata.
    """
    if verify_lookahead is None:
        verify_lookahead = length <= 7
    vb = Vocab(vocab_size)
    initial = PartialSequence.fully_masked(vb, length)
    for attempt in range(max_attempts):
        rng = derive_stream(seed, TASK, attempt)
        pi = rng.dirichlet(np.full(vocab_size, sharpness))
        a = np.stack(
            [rng.dirichlet(np.full(vocab_size, sharpness)) for _ in range(vocab_size)]
        )
        inner = MarkovChainModel(vb, length, pi, a)
        threshold = _viterbi_max_logprob(pi, a, length) + np.log(top_mass_ratio)
        checker = ChainBandChecker(pi, a, threshold)

        noisy = NoisyMarginalWrapper(inner, noise, seed=seed * 1000 + attempt)
        greedy = _greedy_decode(noisy, initial)
        if checker(greedy.final_state().tokens):
            continue
        if not checker(_greedy_decode(inner, initial).final_state().tokens):
            continue  # the trap must vanish without noise
        fails = sum(
            not checker(
                _stochastic_decode(noisy, initial, (seed, TASK, attempt, j + 1))
                .final_state()
                .tokens
            )
            for j in range(probe_decodes)
        )
        fail_rate = fails / probe_decodes
        if not fail_band[0] <= fail_rate <= fail_band[1]:
            continue
        certificate = {
            "attempt": attempt,
            "noise": noise,
            "greedy_first_pick": _first_pick(greedy),
            "probe_fail_rate": fail_rate,
            "band_threshold": float(threshold),
        }
        if verify_lookahead:
            guided = _lookahead_decode(noisy, initial)
            if not checker(guided.final_state().tokens):
                continue
            certificate["guided_first_pick"] = _first_pick(guided)
        return Task(
            name="trap_markov",
            instance_id=seed,
            model=noisy,
            initial=initial,
            checker=checker,
            metadata={"certificate": certificate},
        )
    raise InputError(f"no trap instance found for seed {seed} in {max_attempts} attempts")


# ---------------------------------------------------------------------------
# Random tabular with a joint-probability threshold checker
# ---------------------------------------------------------------------------


class ThresholdChecker:
    """Accepts exactly the sequences whose joint log-probability clears theta."""

    def __init__(self, log_probs: dict[tuple[int, ...], float], theta: float):
        self.log_probs = log_probs
        self.theta = theta

    def __call__(self, tokens: np.ndarray) -> bool:
        lp = self.log_probs.get(tuple(int(t) for t in tokens), float("-inf"))
        return lp >= self.theta


def task_threshold_tabular(
    seed: int,
    length: int = 6,
    vocab_size: int = 3,
    alpha: float = 0.7,
    target_rate: float = 0.5,
) -> Task:
    """Random positive table; correct means joint probability above the
    weighted ``target_rate`` quantile, so base accuracy sits near that rate."""
    vb = Vocab(vocab_size)
    model = TabularJointModel.random_dirichlet(vb, length, seed=seed, alpha=alpha)
    logp = np.log(model.probs)
    order = np.argsort(logp)[::-1]
    cum = np.cumsum(model.probs[order])
    cut = int(np.searchsorted(cum, target_rate, side="left"))
    theta = float(logp[order[min(cut, len(order) - 1)]])
    table = {tuple(map(int, row)): float(lp) for row, lp in zip(model.support, logp)}
    return Task(
        name="threshold_tabular",
        instance_id=seed,
        model=model,
        initial=PartialSequence.fully_masked(vb, length),
        checker=ThresholdChecker(table, theta),
        metadata={"theta": theta, "alpha": alpha},
    )


# ---------------------------------------------------------------------------
# Correlated-structure models for estimator fidelity studies
# ---------------------------------------------------------------------------


def correlated_pairs_model(num_pairs: int, coupling: float = 0.0) -> TabularJointModel:
    """Disjoint pairs (2j, 2j+1), each member uniform and equal to its partner
    with probability 1 - coupling; independent across pairs. coupling=0 lists
    only the consistent support."""
    if num_pairs < 1:
        raise InputError("need at least one pair")
    if not 0.0 <= coupling < 1.0:
        raise InputError("coupling must lie in [0, 1)")
    vb = Vocab(2)
    n = 2 * num_pairs
    if coupling == 0.0:
        bits = np.array(list(itertools.product([0, 1], repeat=num_pairs)), dtype=np.int64)
        support = np.repeat(bits, 2, axis=1)
        probs = np.full(len(support), 1.0 / len(support))
        return TabularJointModel(vb, n, support, probs)
    support = np.array(list(itertools.product([0, 1], repeat=n)), dtype=np.int64)
    probs = np.ones(len(support))
    for row, seq in enumerate(support):
        for j in range(num_pairs):
            agree = seq[2 * j] == seq[2 * j + 1]
            probs[row] *= (1.0 - coupling) / 2.0 if agree else coupling / 2.0
    return TabularJointModel(vb, n, support, probs / probs.sum())


def correlated_chain_model(length: int, coupling: float = 0.05) -> MarkovChainModel:
    """Near-copy binary chain: each token repeats its left neighbour with
    probability 1 - coupling. Strong total correlation, positive everywhere."""
    if not 0.0 < coupling < 1.0:
        raise InputError("coupling must lie in (0, 1)")
    vb = Vocab(2)
    pi = np.array([0.5, 0.5])
    a = np.array([[1.0 - coupling, coupling], [coupling, 1.0 - coupling]])
    return MarkovChainModel(vb, length, pi, a)
