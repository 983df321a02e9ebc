"""Run configuration: schema validation, defaults, flag registry.

One JSON config file drives every subcommand; CLI flags override file values
field-for-field via the registry below, and the effective config is echoed
into the output directory so any run can be reproduced from its artifacts.
Unknown keys are rejected, not ignored.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError

__all__ = ["FLAG_REGISTRY", "load_schema", "load_config", "effective_config", "config_value"]

ENV_OUTPUT_ROOT = "MASKPATH_OUTPUT_ROOT"


@dataclass(frozen=True)
class Flag:
    """One CLI flag bound to exactly one config field."""

    flag: str
    path: tuple[str, ...]
    type: type
    help: str


FLAG_REGISTRY: list[Flag] = [
    Flag("--seed", ("seed",), int, "master seed (no default)"),
    Flag("--output-dir", ("output_dir",), str, "output directory"),
    Flag("--workers", ("workers",), int, "worker processes"),
    Flag("--log-level", ("log_level",), str, "debug|info|warning|error"),
    Flag("--model", ("model",), str, "path to a model definition JSON file"),
    Flag("--policy-kind", ("policy", "kind"), str, "uniform|confidence|entropy|margin|pc"),
    Flag("--policy-semi-ar-block", ("policy", "semi_ar_block"), int, "semi-AR block width"),
    Flag("--policy-pc-lambda", ("policy", "pc_lambda"), float, "pc positional decay"),
    Flag("--policy-tokens-per-step", ("policy", "tokens_per_step"), int, "positions per step"),
    Flag("--policy-proposal-top-k", ("policy", "proposal_top_k"), int, "proposal candidate pool"),
    Flag("--policy-proposal-temperature", ("policy", "proposal_temperature"), float, "proposal softmax temperature"),
    Flag("--lookahead-stages", ("lookahead", "stages"), int, "fixed rollout stage count"),
    Flag("--lookahead-stage-size", ("lookahead", "stage_size"), int, "positions per rollout stage"),
    Flag("--lookahead-rollouts", ("lookahead", "rollouts"), int, "rollouts per estimate"),
    Flag("--lookahead-rollout-temperature", ("lookahead", "rollout_temperature"), float, "rollout sampling temperature"),
    Flag("--smc-particles", ("smc", "particles"), int, "particle count"),
    Flag("--smc-resample-interval", ("smc", "resample_interval"), int, "steps between resampling"),
    Flag("--smc-resample-temperature", ("smc", "resample_temperature"), float, "resampling softmax temperature"),
    Flag("--smc-guidance", ("smc", "guidance"), str, "lookahead|entropy|none"),
    Flag("--smc-sampling-temperature", ("smc", "sampling_temperature"), float, "token sampling temperature"),
    Flag("--verify-instances", ("verify", "instances"), int, "battery size"),
    Flag("--verify-max-length", ("verify", "max_length"), int, "battery max sequence length"),
    Flag("--verify-max-vocab", ("verify", "max_vocab"), int, "battery max vocab size"),
    Flag("--verify-entropy-scale", ("verify", "entropy_scale"), float, "fault-injection hook"),
    Flag("--bench-instances", ("bench", "instances"), int, "instances per task"),
    Flag("--bench-budget-cap", ("bench", "budget_cap"), int, "total forward cap"),
    Flag("--bench-base-policy", ("bench", "base_policy"), str, "base policy of multi-sample methods"),
    Flag("--bench-methods", ("bench", "methods"), str, "comma-separated method list"),
]


def load_schema() -> dict:
    with resources.files("maskpath").joinpath("schema.json").open("r") as fh:
        return json.load(fh)


def _defaults_from_schema(schema: dict) -> dict:
    out = {}
    for key, sub in schema.get("properties", {}).items():
        if sub.get("type") == "object" and "properties" in sub:
            out[key] = _defaults_from_schema(sub)
        elif "default" in sub:
            out[key] = copy.deepcopy(sub["default"])
    return out


def _set_path(doc: dict, path: tuple[str, ...], value) -> None:
    node = doc
    for key in path[:-1]:
        node = node.setdefault(key, {})
    node[path[-1]] = value


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(doc: dict) -> None:
    import jsonschema

    schema = load_schema()
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors:
            where = ".".join(str(p) for p in err.absolute_path) or "<root>"
            lines.append(f"{where}: {err.message}")
        raise ConfigError("invalid config: " + "; ".join(lines))


def load_config(path: str | Path | None, overrides: dict[tuple[str, ...], object]) -> dict:
    """Defaults, then the config file, then CLI overrides; validated."""
    schema = load_schema()
    doc = _defaults_from_schema(schema)
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        try:
            file_doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {p} line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
        if not isinstance(file_doc, dict):
            raise ConfigError("config root must be a JSON object")
        doc = _merge(doc, file_doc)
    for flag_path, value in overrides.items():
        _set_path(doc, flag_path, value)
    if "output_dir" not in doc:
        doc["output_dir"] = os.environ.get(ENV_OUTPUT_ROOT, "maskpath-out")
    doc.setdefault("schema_version", 1)
    validate_config(doc)
    # cross-field checks the schema cannot express
    la = doc.get("lookahead", {})
    if la.get("stages") is not None and la.get("stage_size") is not None:
        raise ConfigError("lookahead.stages and lookahead.stage_size are exclusive")
    return doc


def config_value(doc: dict, *path: str):
    node = doc
    for key in path:
        node = node[key]
    return node


def effective_config(doc: dict, out_dir: Path) -> Path:
    """Echo the validated config; the artifact fully reproduces the run."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "effective_config.json"
    path.write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path
