"""Suite runner and report writer.

All artifacts are plain CSV or text with no timestamps, so a rerun with
the same config reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from ..exceptions import MissingInputsError, QSLError
from .config import SuiteConfig
from .experiments import CLAIMS, CellPool, ExperimentResult, Verdict, get_experiment

log = logging.getLogger(__name__)

VERDICT_COLUMNS = ("experiment", "claim", "check", "metric", "threshold", "measured", "status")
SERIES_COLUMNS = ("experiment", "series", "x", "y")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAILED = 2


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, complex):
        return repr(v)
    return str(v)


def csv_text(columns, rows) -> str:
    """Rows may be sequences or mappings keyed by column."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if isinstance(row, dict):
            row = [row.get(c) for c in columns]
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


@dataclass
class SuiteResult:
    results: list
    output: Path

    @property
    def verdicts(self) -> list:
        return [(r.experiment, v) for r in self.results for v in r.verdicts]

    @property
    def errored(self) -> list:
        return [(e, v) for e, v in self.verdicts if v.status == "error"]

    @property
    def failed(self) -> list:
        return [(e, v) for e, v in self.verdicts if v.status == "fail"]

    @property
    def exit_code(self) -> int:
        if self.errored:
            return EXIT_ERROR
        return EXIT_FAILED if self.failed else EXIT_OK


def summary_text(result: SuiteResult) -> str:
    lines = []
    for exp, v in result.verdicts:
        check = CLAIMS[v.claim].check
        lines.append(f"{v.status.upper():5s} check {check:2d} {v.claim} [{exp}]: {v.measured}")
    bad = result.failed + result.errored
    if bad:
        lines.append("failed checks: " + ", ".join(f"{CLAIMS[v.claim].check} ({v.claim})" for _, v in bad))
    else:
        lines.append("all checks passed")
    return "\n".join(lines) + "\n"


def _run_one(cfg, pool) -> ExperimentResult:
    exp = get_experiment(cfg.experiment)
    try:
        return exp.run(cfg, pool)
    except (QSLError, ValueError, ArithmeticError) as exc:
        # one experiment failing operationally should not hide the others
        log.error("experiment %s failed: %s", cfg.experiment, exc)
        res = ExperimentResult(cfg.experiment)
        res.verdicts = [Verdict(c, "experiment raised", "-", f"{type(exc).__name__}: {exc}", "error") for c in exp.claims]
        return res


def run_suite(config: SuiteConfig, threads: Optional[int] = None, output: Optional[Path] = None) -> SuiteResult:
    """Run every listed experiment and write its CSVs plus the verdicts.

    Unknown experiment ids are rejected before anything runs.
    """
    for cfg in config.experiments:
        get_experiment(cfg.experiment)
    out = Path(output or config.output)
    pool = CellPool(threads or config.threads)
    results = []
    for cfg in config.experiments:
        if output is not None:
            cfg = replace(cfg, output=out)
        log.info("running %s at k = %s", cfg.experiment, ",".join(map(str, cfg.k)))
        res = _run_one(cfg, pool)
        for table in res.tables:
            _write(out / f"{res.experiment}__{table.name}.csv", csv_text(table.columns, table.rows))
        results.append(res)
    suite = SuiteResult(results, out)
    vrows = [(e, v.claim, CLAIMS[v.claim].check, v.metric, v.threshold, v.measured, v.status) for e, v in suite.verdicts]
    _write(out / "verdicts.csv", csv_text(VERDICT_COLUMNS, vrows))
    srows = [(r.experiment, name, x, y) for r in results for name, xs, ys in r.series for x, y in zip(xs, ys)]
    _write(out / "series.csv", csv_text(SERIES_COLUMNS, srows))
    _write(out / "summary.txt", summary_text(suite))
    return suite


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_")


def _read_csv(path: Path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_report(directory) -> str:
    """Per-experiment claim tables in ``report.txt`` and one (x, y) CSV
    per plot series. Returns the report text."""
    d = Path(directory)
    vpath = d / "verdicts.csv"
    if not vpath.is_file():
        raise MissingInputsError(f"no verdicts.csv in {d}")
    verdicts = _read_csv(vpath)
    if not verdicts:
        raise MissingInputsError(f"{vpath} has no verdict rows")
    for row in verdicts:
        if row["claim"] not in CLAIMS:
            raise MissingInputsError(f"verdict row names unknown claim {row['claim']!r}")
    lines = []
    by_exp: dict = {}
    for row in verdicts:
        by_exp.setdefault(row["experiment"], []).append(row)
    for exp, rows in by_exp.items():
        lines.append(f"== {exp}")
        for r in rows:
            lines.append(f"  [{r['status'].upper()}] check {r['check']} {r['claim']}")
            lines.append(f"      metric:    {r['metric']}")
            lines.append(f"      threshold: {r['threshold']}")
            lines.append(f"      measured:  {r['measured']}")
    counts = {s: sum(r["status"] == s for r in verdicts) for s in ("pass", "fail", "skip", "error")}
    lines.append("totals: " + ", ".join(f"{n} {s}" for s, n in counts.items()))
    spath = d / "series.csv"
    if spath.is_file():
        groups: dict = {}
        for row in _read_csv(spath):
            groups.setdefault((row["experiment"], row["series"]), []).append((row["x"], row["y"]))
        for (exp, name), pts in groups.items():
            _write(d / f"plot_{exp}_{_slug(name)}.csv", csv_text(("x", "y"), pts))
    text = "\n".join(lines) + "\n"
    _write(d / "report.txt", text)
    return text
