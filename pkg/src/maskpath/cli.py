"""Command-line entry point.

Subcommands: decode, estimate, verify, bench, report. One JSON config file
drives everything; each flag in the registry overrides exactly one config
field, and the effective config is echoed into the output directory.

Exit codes: 0 success, 1 runtime failure (including a violated inequality
from `verify`), 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import FLAG_REGISTRY, config_value, effective_config, load_config
from .errors import BudgetExceeded, ConfigError, InputError, MaskpathError
from .harness import HarnessKnobs, TaskSpec, run_matrix
from .lookahead import LookaheadConfig, estimate
from .models import Denoiser, PartialSequence, TabularJointModel, Vocab
from .modelspec import build_model, load_model
from .oracle import OracleBudget, verify_bound_chain
from .policies import PolicyConfig
from .reporting import fmt, report as write_report, write_genealogy, write_results, write_summary
from .smc import SmcConfig, decode_single
from .trajectory import PathRecord

log = logging.getLogger("maskpath")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskpath",
        description=(
            "Decoding-order research engine for masked sequence models: "
            "policy decodes, lookahead value estimates, information-bound "
            "verification, and benchmark matrices over exact toy models."
        ),
    )
    parser.add_argument("--version", action="version", version=f"maskpath {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "decode": "single-particle policy decode; writes a trace line",
        "estimate": "lookahead value estimate for a partial-state file",
        "verify": "check the information bound chain on a seeded battery",
        "bench": "run a (task, method, instance) matrix with budget accounting",
        "report": "rebuild summary files from a results directory",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        for flag in FLAG_REGISTRY:
            p.add_argument(flag.flag, type=flag.type, default=None, help=flag.help)
        if name == "estimate":
            p.add_argument("state_file", type=str, help="partial-state JSON file")
        if name == "report":
            p.add_argument("results_dir", type=str, help="directory holding results.csv")
    return parser


def _collect_overrides(args: argparse.Namespace) -> dict:
    overrides = {}
    for flag in FLAG_REGISTRY:
        value = getattr(args, flag.flag.lstrip("-").replace("-", "_"), None)
        if value is not None:
            if flag.path == ("bench", "methods"):
                value = [m.strip() for m in str(value).split(",") if m.strip()]
            overrides[flag.path] = value
    return overrides


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config field {key!r} is required (no default)")
    return cfg[key]


def _model_from_config(cfg: dict) -> Denoiser:
    spec = _require(cfg, "model")
    return load_model(spec) if isinstance(spec, str) else build_model(spec)


def _initial_state(cfg: dict, model: Denoiser) -> PartialSequence:
    task = cfg.get("task", {})
    positions = task.get("prompt_positions", [])
    values = task.get("prompt_values", [])
    if len(positions) != len(values):
        raise ConfigError("prompt_positions and prompt_values lengths differ")
    return PartialSequence.from_prompt(model.vocab, model.length, positions, values)


def _policy_config(cfg: dict) -> PolicyConfig:
    p = cfg["policy"]
    return PolicyConfig(
        kind=p["kind"],
        semi_ar_block=p["semi_ar_block"],
        pc_lambda=p["pc_lambda"],
        tokens_per_step=p["tokens_per_step"],
        proposal_top_k=p["proposal_top_k"],
        proposal_temperature=p["proposal_temperature"],
    )


def _lookahead_config(cfg: dict) -> LookaheadConfig:
    la = cfg["lookahead"]
    stages, stage_size = la["stages"], la["stage_size"]
    if stages is not None:
        stage_size = None
    return LookaheadConfig(
        stages=stages,
        stage_size=stage_size,
        rollouts=la["rollouts"],
        rollout_temperature=la["rollout_temperature"],
    )


def _smc_config(cfg: dict, generatable: int) -> SmcConfig:
    s = cfg["smc"]
    policy = _policy_config(cfg)
    steps = math.ceil(generatable / policy.tokens_per_step)
    interval = s["resample_interval"] or max(1, steps // 4)
    return SmcConfig(
        particles=s["particles"],
        resample_interval=interval,
        resample_temperature=s["resample_temperature"],
        guidance=s["guidance"],
        sampling_temperature=s["sampling_temperature"],
        lookahead=_lookahead_config(cfg),
        policy=policy,
        seed=_require(cfg, "seed"),
    )


def cmd_decode(cfg: dict) -> int:
    model = _model_from_config(cfg)
    initial = _initial_state(cfg, model)
    smc = _smc_config(cfg, initial.num_masked)
    out_dir = Path(cfg["output_dir"])
    effective_config(cfg, out_dir)
    record = decode_single(model, initial, smc)
    trace = out_dir / "trace.jsonl"
    trace.write_text(record.to_json() + "\n", encoding="utf-8")
    log.info("decode complete: total_ll=%s -> %s", fmt(record.total_ll), trace)
    return 0


def cmd_estimate(cfg: dict, state_file: str) -> int:
    model = _model_from_config(cfg)
    try:
        doc = json.loads(Path(state_file).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read state file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"state file line {exc.lineno}: {exc.msg}") from exc
    if doc.get("schema_version") != 1:
        raise ConfigError("state file must carry schema_version 1")
    tokens = doc.get("tokens")
    if not isinstance(tokens, list):
        raise ConfigError("state file needs a 'tokens' array (mask as -1)")
    if len(tokens) != model.length or int(doc.get("vocab_size", -1)) != model.vocab.size:
        raise ConfigError(
            f"state/model mismatch: state has {len(tokens)} tokens over vocab "
            f"{doc.get('vocab_size')}, model expects {model.length}/{model.vocab.size}"
        )
    state = PartialSequence(model.vocab, tokens)
    out_dir = Path(cfg["output_dir"])
    effective_config(cfg, out_dir)
    if state.is_complete:
        payload = {
            "schema_version": 1,
            "v_base": 0.0,
            "v_corr": 0.0,
            "v_total": 0.0,
            "forwards_used": 0,
            "per_rollout": [],
            "k_effective": 0,
            "clamped": False,
        }
        text = json.dumps(payload, separators=(",", ":"), sort_keys=True)
    else:
        report = estimate(model, state, _lookahead_config(cfg), seed=_require(cfg, "seed"))
        text = report.to_json()
    out = out_dir / "value_report.json"
    out.write_text(text + "\n", encoding="utf-8")
    log.info("estimate written to %s", out)
    return 0


def cmd_verify(cfg: dict) -> int:
    v = cfg["verify"]
    if v["instances"] < 1:
        raise ConfigError("verify.instances must be >= 1 (empty battery)")
    seed = _require(cfg, "seed")
    out_dir = Path(cfg["output_dir"])
    effective_config(cfg, out_dir)
    budget = OracleBudget()
    rows = []
    failures = 0
    for idx in range(v["instances"]):
        rng = np.random.default_rng((seed, idx))
        n = int(rng.integers(2, v["max_length"] + 1))
        vs = int(rng.integers(2, v["max_vocab"] + 1))
        alpha = float(rng.choice([0.5, 1.0, 3.0]))
        model = TabularJointModel.random_dirichlet(Vocab(vs), n, seed=seed * 100003 + idx, alpha=alpha)
        x = PartialSequence.fully_masked(model.vocab, n)
        rep = verify_bound_chain(model, x, budget, entropy_scale=v["entropy_scale"])
        for row in rep.rows():
            rows.append({"instance": idx, **row})
            failures += 0 if row["passed"] else 1
    out = out_dir / "bound_report.jsonl"
    with open(out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":"), sort_keys=True) + "\n")
    log.info("%d inequalities checked, %d failures -> %s", len(rows), failures, out)
    if failures:
        print(f"FAIL: {failures} of {len(rows)} inequalities violated", file=sys.stderr)
        return 1
    print(f"ok: {len(rows)} inequalities hold")
    return 0


def cmd_bench(cfg: dict) -> int:
    b = cfg["bench"]
    seed = _require(cfg, "seed")
    out_dir = Path(cfg["output_dir"])
    effective_config(cfg, out_dir)
    task_specs = [
        TaskSpec.make(t["kind"], **t.get("params", {})) for t in b["tasks"]
    ]
    knobs = HarnessKnobs(
        base_policy=b["base_policy"],
        proposal_top_k=cfg["policy"]["proposal_top_k"],
        proposal_temperature=cfg["policy"]["proposal_temperature"],
        tokens_per_step=cfg["policy"]["tokens_per_step"],
        semi_ar_block=cfg["policy"]["semi_ar_block"] or 4,
        sampling_temperature=cfg["smc"]["sampling_temperature"],
        resample_temperature=cfg["smc"]["resample_temperature"],
        lookahead=_lookahead_config(cfg),
    )
    results = run_matrix(
        task_specs,
        list(b["methods"]),
        instances=b["instances"],
        knobs=knobs,
        budget_cap=b["budget_cap"],
        workers=cfg["workers"],
        first_instance=seed,
    )
    if not results:
        raise ConfigError("bench produced no results (empty tasks or methods)")
    paths = write_report(results, out_dir)
    log.info("bench complete: %s", ", ".join(str(p) for p in paths))
    return 0


def cmd_report(cfg: dict, results_dir: str) -> int:
    src = Path(results_dir)
    results_csv = src / "results.csv"
    if not results_csv.exists():
        raise ConfigError(f"no results.csv in {src}")
    from .harness import RunResult

    results = []
    with open(results_csv, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            cells = dict(zip(header, line.rstrip("\n").split(",")))
            results.append(
                RunResult(
                    task=cells["task"],
                    instance_id=int(cells["instance"]),
                    method=cells["method"],
                    seed=int(cells["seed"]),
                    correct=cells["correct"] == "1",
                    path_ll=float(cells["path_ll"]),
                    forwards_used=int(cells["forwards_used"]),
                    forwards_expected=int(cells["forwards_expected"]),
                    sequence=tuple(int(t) for t in cells["sequence"].split()),
                )
            )
    if not results:
        raise ConfigError("results.csv holds no rows")
    write_summary(results, src / "summary.csv")
    log.info("summary rebuilt in %s", src)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = _collect_overrides(args)
    try:
        cfg = load_config(args.config, overrides)
        logging.basicConfig(level=cfg["log_level"].upper(), format="%(levelname)s %(message)s")
        if args.command == "decode":
            return cmd_decode(cfg)
        if args.command == "estimate":
            return cmd_estimate(cfg, args.state_file)
        if args.command == "verify":
            return cmd_verify(cfg)
        if args.command == "bench":
            return cmd_bench(cfg)
        if args.command == "report":
            return cmd_report(cfg, args.results_dir)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError,) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (InputError, BudgetExceeded, MaskpathError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
