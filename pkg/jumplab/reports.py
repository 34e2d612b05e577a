from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable

from .lab import ExperimentReport


def _write_csv(path: Path, header: list[str], rows: Iterable[list[Any]]) -> None:
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def report_payload(report: ExperimentReport) -> str:
    """Canonical JSON for ``report``, identical for identical configs"""
    return json.dumps(report.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def write_report(report: ExperimentReport, out_dir: Path) -> list[Path]:
    """Write ``<name>.json``, one CSV per table and ``<name>.runtime.json``

    Returns
    -------
    write_report : list[Path]
        Files written, report first
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = report.name
    written = [out_dir / f"{stem}.json"]
    written[0].write_text(report_payload(report))

    def sidecar(table: str, header: list[str], rows: Iterable[list[Any]]) -> None:
        target = out_dir / f"{stem}.{table}.csv"
        _write_csv(target, header, rows)
        written.append(target)

    sidecar(
        "frequencies",
        ["flag", "mean", "se", "count"],
        ([name, f.mean, f.se, f.count] for name, f in sorted(report.frequencies.items())),
    )
    sidecar(
        "confusion",
        ["flag", "oracle_field", "oracle_answer", "numeric_true", "numeric_false", "diagonal"],
        (
            [r.flag, r.oracle_field, r.oracle_answer, r.numeric_true, r.numeric_false, r.diagonal]
            for r in report.confusion
        ),
    )
    sidecar(
        "checks",
        ["name", "value", "target", "tolerance", "passed", "detail"],
        ([c.name, c.value, c.target, c.tolerance, c.passed, c.detail] for c in report.checks),
    )

    if report.equalities:
        sidecar(
            "equalities",
            ["equality_id", "n_evaluated", "agreement", "agreement_se", "mode"],
            ([e.equality_id, e.n_evaluated, e.agreement, e.agreement_se, e.mode] for e in report.equalities),
        )

    if report.criteria:
        sidecar(
            "criteria",
            ["criterion", "rule", "mean", "se", "bootstrap_se", "nonfinite"],
            (
                [v.criterion, r.rule, r.mean, r.se, r.bootstrap_se, r.nonfinite]
                for v in report.criteria
                for r in v.per_rule
            ),
        )

    if report.follmer is not None and report.follmer.ui is not None:
        sidecar(
            "ui_probe",
            ["horizon", "p_mean", "p_se", "p_truncated", "p_truncated_se", "q_no_explosion", "q_se", "exact"],
            (
                [r.horizon, r.p_mean, r.p_se, r.p_truncated, r.p_truncated_se, r.q_no_explosion, r.q_se, r.exact]
                for r in report.follmer.ui.rows
            ),
        )

    for histogram in report.histograms:
        sidecar(
            f"hist_{histogram.name}",
            ["left", "right", "count"],
            ([lo, hi, n] for lo, hi, n in zip(histogram.edges[:-1], histogram.edges[1:], histogram.counts)),
        )

    runtime = out_dir / f"{stem}.runtime.json"
    runtime.write_text(json.dumps(report.runtime, sort_keys=True, indent=2, default=str) + "\n")
    written.append(runtime)
    return written
