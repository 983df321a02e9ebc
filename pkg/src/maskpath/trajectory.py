"""Unmasking trajectories and path log-likelihood accounting.

A trajectory is an ordered partition of the generatable positions into
per-step unmask sets; a path record additionally stores the chosen tokens and
per-step log-likelihood contributions. Steps are stored in decode order
(first-executed first); prompt positions never appear in a trajectory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InputError
from .models import Denoiser, PartialSequence, step_logprob_from

__all__ = ["Trajectory", "StepEntry", "PathRecord", "path_ll", "accumulate"]


@dataclass(frozen=True)
class Trajectory:
    """Ordered unmask sets in decode order; disjoint, nonempty, within range."""

    steps: tuple[tuple[int, ...], ...]
    total_length: int

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for step in self.steps:
            if len(step) == 0:
                raise InputError("trajectory steps must be nonempty")
            for i in step:
                if not 0 <= i < self.total_length:
                    raise InputError(f"position {i} outside [0, {self.total_length})")
                if i in seen:
                    raise InputError(f"position {i} appears in more than one step")
                seen.add(i)

    @property
    def positions(self) -> set[int]:
        return {i for step in self.steps for i in step}

    def covers(self, generatable: set[int]) -> bool:
        return self.positions == generatable


@dataclass(frozen=True)
class StepEntry:
    positions: tuple[int, ...]
    values: tuple[int, ...]
    step_ll: float


class PathRecord:
    """One decode run: initial state, committed steps, running totals.

    Value semantics: ``accumulate`` returns a new record, so records can be
    copied freely between workers.
    """

    __slots__ = ("initial", "steps", "cumulative")

    def __init__(
        self,
        initial: PartialSequence,
        steps: tuple[StepEntry, ...] = (),
        cumulative: tuple[float, ...] = (),
    ):
        self.initial = initial
        self.steps = steps
        self.cumulative = cumulative

    @property
    def total_ll(self) -> float:
        return self.cumulative[-1] if self.cumulative else 0.0

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(
            tuple(s.positions for s in self.steps), self.initial.length
        )

    def final_state(self) -> PartialSequence:
        state = self.initial
        for s in self.steps:
            state = state.with_values(list(s.positions), list(s.values))
        return state

    @property
    def is_complete(self) -> bool:
        committed = sum(len(s.positions) for s in self.steps)
        return committed == self.initial.num_masked

    def to_json(self) -> str:
        """Single-line trace record (documented schema, version 1)."""
        doc = {
            "schema_version": 1,
            "length": self.initial.length,
            "vocab_size": self.initial.vocab.size,
            "prompt": [[int(i), int(v)] for i, v in self.initial.observed_items()],
            "steps": [
                {
                    "positions": [int(i) for i in s.positions],
                    "values": [int(v) for v in s.values],
                    "step_ll": s.step_ll,
                }
                for s in self.steps
            ],
            "total_ll": self.total_ll,
        }
        return json.dumps(doc, separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_json(cls, line: str, vocab) -> "PathRecord":
        from .models import Vocab  # local import to keep module top light

        doc = json.loads(line)
        if doc.get("schema_version") != 1:
            raise InputError(f"unsupported trace schema {doc.get('schema_version')!r}")
        vocab = vocab or Vocab(doc["vocab_size"])
        initial = PartialSequence.from_prompt(
            vocab,
            doc["length"],
            [i for i, _ in doc["prompt"]],
            [v for _, v in doc["prompt"]],
        )
        record = cls(initial)
        for s in doc["steps"]:
            record = accumulate(record, s["positions"], s["values"], s["step_ll"])
        return record


def accumulate(record: PathRecord, positions, values, step_ll: float) -> PathRecord:
    """Append one committed step; cumulative totals update additively."""
    positions = tuple(int(i) for i in positions)
    values = tuple(int(v) for v in values)
    committed = {i for s in record.steps for i in s.positions}
    overlap = committed.intersection(positions)
    if overlap:
        raise InputError(f"positions {sorted(overlap)} already committed")
    observed = {int(i) for i in record.initial.observed_indices}
    clash = observed.intersection(positions)
    if clash:
        raise InputError(f"positions {sorted(clash)} are prompt cells")
    entry = StepEntry(positions, values, float(step_ll))
    new_cum = record.cumulative + (record.total_ll + float(step_ll),)
    return PathRecord(record.initial, record.steps + (entry,), new_cum)


def path_ll(model: Denoiser, record: PathRecord) -> float:
    """Recompute the total path log-likelihood from scratch.

    Replays the record's contexts against the model, independent of the stored
    per-step values, so it can audit an accumulated total.
    """
    if not record.is_complete:
        raise ContractViolation("path_ll requires a complete record")
    state = record.initial
    total = 0.0
    for s in record.steps:
        ms = model.marginals(state)
        total += step_logprob_from(ms, list(s.positions), list(s.values))
        state = state.with_values(list(s.positions), list(s.values))
    return total
