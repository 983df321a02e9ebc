"""Deterministic report files for bench runs and experiments.

All files are comma-separated or JSON-lines with a fixed column order and a
fixed float format, so re-running with the same inputs reproduces them
byte-for-byte. Wall-clock timing never enters a report file.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

from .errors import InputError
from .harness import FidelityReport, ProxyReport, RunResult

__all__ = [
    "fmt",
    "write_results",
    "write_summary",
    "write_proxy_report",
    "write_fidelity",
    "write_genealogy",
    "report",
]

RESULTS_COLUMNS = [
    "task",
    "instance",
    "method",
    "seed",
    "correct",
    "path_ll",
    "forwards_used",
    "forwards_expected",
    "sequence",
]

SUMMARY_COLUMNS = [
    "task",
    "method",
    "n",
    "accuracy",
    "ci_lo",
    "ci_hi",
    "mean_path_ll",
    "mean_forwards",
]


def fmt(x) -> str:
    """Stable scalar formatting for CSV cells."""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        if x != x:
            return "nan"
        if x == float("inf"):
            return "inf"
        if x == float("-inf"):
            return "-inf"
        return format(x, ".12g")
    return str(x)


def _write_csv(path: Path, columns: list[str], rows: list[list]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(fmt(c) for c in row) + "\n")
    except OSError as exc:
        raise InputError(f"cannot write report file {path}: {exc}") from exc


def write_results(results: list[RunResult], path: Path) -> None:
    rows = [
        [
            r.task,
            r.instance_id,
            r.method,
            r.seed,
            r.correct,
            r.path_ll,
            r.forwards_used,
            r.forwards_expected,
            " ".join(str(t) for t in r.sequence),
        ]
        for r in sorted(results, key=lambda r: (r.task, r.method, r.instance_id, r.seed))
    ]
    _write_csv(path, RESULTS_COLUMNS, rows)


def bootstrap_ci(
    values: np.ndarray, key: str, resamples: int = 1000, level: float = 0.95
) -> tuple[float, float]:
    """Percentile bootstrap over instances, seeded from the row key."""
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((0xB007, zlib.crc32(key.encode()))))
    )
    values = np.asarray(values, dtype=float)
    means = rng.choice(values, size=(resamples, values.size), replace=True).mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, 1 - (1 - level) / 2])
    return float(lo), float(hi)


def write_summary(results: list[RunResult], path: Path) -> None:
    groups: dict[tuple[str, str], list[RunResult]] = {}
    for r in results:
        groups.setdefault((r.task, r.method), []).append(r)
    rows = []
    for (task, method), rs in sorted(groups.items()):
        acc = np.array([r.correct for r in rs], dtype=float)
        lo, hi = bootstrap_ci(acc, key=f"{task}|{method}")
        rows.append(
            [
                task,
                method,
                len(rs),
                float(acc.mean()),
                lo,
                hi,
                float(np.mean([r.path_ll for r in rs])),
                float(np.mean([r.forwards_used for r in rs])),
            ]
        )
    _write_csv(path, SUMMARY_COLUMNS, rows)


def write_proxy_report(report: ProxyReport, out_dir: Path) -> None:
    _write_csv(
        out_dir / "proxy_correlations.csv",
        ["proxy", "per_instance_mean", "pooled", "instances_used"],
        [
            [p, c["per_instance_mean"], c["pooled"], int(c["instances_used"])]
            for p, c in sorted(report.correlations.items())
        ],
    )
    _write_csv(
        out_dir / "proxy_curves.csv",
        ["proxy", "pooling", "quantile", "accuracy", "n"],
        [
            [r["proxy"], r["pooling"], r["quantile"], r["accuracy"], r["n"]]
            for r in report.curve_rows
        ],
    )
    _write_csv(
        out_dir / "proxy_samples.csv",
        ["instance", "sample", "correct", "path_ll", "mc_elbo", "neg_path_entropy"],
        [
            [
                r["instance"],
                r["sample"],
                r["correct"],
                r["path_ll"],
                r["mc_elbo"],
                r["neg_path_entropy"],
            ]
            for r in report.sample_rows
        ],
    )


def write_fidelity(report: FidelityReport, path: Path) -> None:
    _write_csv(
        path,
        [
            "stage_size",
            "step",
            "masked",
            "mean_signed_base",
            "mean_abs_base",
            "mean_signed_full",
            "mean_abs_full",
            "n",
        ],
        [
            [
                r["stage_size"],
                r["step"],
                r["masked"],
                r["mean_signed_base"],
                r["mean_abs_base"],
                r["mean_signed_full"],
                r["mean_abs_full"],
                r["n"],
            ]
            for r in report.rows
        ],
    )


def write_genealogy(results: list[RunResult], path: Path) -> None:
    """One JSON line per particle-search cell: lineage plus ESS diagnostics."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in sorted(results, key=lambda r: (r.task, r.method, r.instance_id)):
            if not r.genealogy and not r.ess:
                continue
            fh.write(
                json.dumps(
                    {
                        "task": r.task,
                        "instance": r.instance_id,
                        "method": r.method,
                        "seed": r.seed,
                        "ess": list(r.ess),
                        "genealogy": [list(map(list, g)) for g in r.genealogy],
                    },
                    separators=(",", ":"),
                    sort_keys=True,
                )
                + "\n"
            )


def report(results: list[RunResult], out_dir: Path) -> list[Path]:
    """Write the results table, summary and genealogy for one bench run."""
    if not results:
        raise InputError("refusing to report an empty result set")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "results.csv", out_dir / "summary.csv", out_dir / "genealogy.jsonl"]
    write_results(results, paths[0])
    write_summary(results, paths[1])
    write_genealogy(results, paths[2])
    return paths
