"""Model definition files: a documented JSON schema for exact backends.

Kinds: ``tabular`` (explicit sequence/probability pairs or a seeded Dirichlet
generator), ``markov`` (initial distribution plus row-major transition
matrix), ``sudoku4`` (uniform over all valid 4x4 grids), and ``noisy-wrap``
(an inner model plus mixture scale and seed). Unknown kinds and unknown keys
are rejected.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .models import (
    Denoiser,
    MarkovChainModel,
    NoisyMarginalWrapper,
    TabularJointModel,
    Vocab,
)

__all__ = ["build_model", "load_model", "MODEL_KINDS"]

MODEL_KINDS = ("tabular", "markov", "sudoku4", "noisy-wrap")

_ALLOWED_KEYS = {
    "tabular": {"kind", "length", "vocab_size", "sequences", "generator"},
    "markov": {"kind", "length", "vocab_size", "initial", "transition"},
    "sudoku4": {"kind"},
    "noisy-wrap": {"kind", "epsilon", "seed", "inner"},
}


def _check_keys(doc: dict, kind: str) -> None:
    unknown = set(doc) - _ALLOWED_KEYS[kind]
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in {kind!r} model spec")


def build_model(doc: dict) -> Denoiser:
    """Build a denoiser from a parsed model definition document."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigError("model spec must be an object with a 'kind' field")
    kind = doc["kind"]
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    _check_keys(doc, kind)
    if kind == "tabular":
        return _build_tabular(doc)
    if kind == "markov":
        return _build_markov(doc)
    if kind == "sudoku4":
        from .tasks import sudoku4_model

        return sudoku4_model()
    inner = build_model(doc.get("inner") or {})
    try:
        return NoisyMarginalWrapper(
            inner, float(doc.get("epsilon", 0.15)), int(doc.get("seed", 0))
        )
    except Exception as exc:
        raise ConfigError(f"invalid noisy-wrap spec: {exc}") from exc


def _build_tabular(doc: dict) -> TabularJointModel:
    try:
        length = int(doc["length"])
        vocab = Vocab(int(doc["vocab_size"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"tabular spec needs integer length/vocab_size: {exc}") from exc
    if ("sequences" in doc) == ("generator" in doc):
        raise ConfigError("tabular spec needs exactly one of sequences / generator")
    try:
        if "sequences" in doc:
            rows = doc["sequences"]
            support = np.array([r["tokens"] for r in rows], dtype=np.int64)
            probs = np.array([r["prob"] for r in rows], dtype=float)
            return TabularJointModel(vocab, length, support, probs)
        gen = dict(doc["generator"])
        seed = int(gen.pop("seed"))
        alpha = float(gen.pop("alpha", 1.0))
        if gen:
            raise ConfigError(f"unknown generator keys {sorted(gen)}")
        return TabularJointModel.random_dirichlet(vocab, length, seed=seed, alpha=alpha)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"invalid tabular spec: {exc}") from exc


def _build_markov(doc: dict) -> MarkovChainModel:
    try:
        vocab = Vocab(int(doc["vocab_size"]))
        return MarkovChainModel(
            vocab,
            int(doc["length"]),
            np.asarray(doc["initial"], dtype=float),
            np.asarray(doc["transition"], dtype=float),
        )
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"invalid markov spec: {exc}") from exc


def load_model(path: str | Path) -> Denoiser:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"model file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file {path} line {exc.lineno}: {exc.msg}") from exc
    return build_model(doc)
