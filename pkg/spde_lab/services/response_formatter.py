"""
Response formatter for run manifests

Aggregates the EstimateReports and McEstimates stored in manifests into
one rich table (exported as plain text) and one JSON document.
"""

import io
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence

from loguru import logger
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from ..config import CHECK_REFERENCES
from ..types import RunManifest


@dataclass
class Summary:
    """Human-readable table plus machine-readable rows"""

    text: str
    rows: List[Dict[str, Any]] = field(default_factory=list)
    failures: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": self.passed, "rows": self.rows, "failures": self.failures}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str)


class ResponseFormatter:
    """Format manifests for terminal display"""

    def __init__(self, width: int = 140):
        self.width = width

    def rows_for(self, manifest: RunManifest) -> List[Dict[str, Any]]:
        """One row per report and per estimate of a manifest"""
        rows = []
        for report in manifest.reports:
            name = report.get("name", manifest.subcommand)
            rows.append({
                "run": manifest.subcommand,
                "config_hash": manifest.config_hash,
                "check": name,
                "kind": "report",
                "value": report.get("margin"),
                "stderr": None,
                "passed": bool(report.get("passed", True)),
                "gated": bool(report.get("gated", True)),
                "reference": report.get("reference") or CHECK_REFERENCES.get(name, ""),
            })
        for estimate in manifest.estimates:
            name = estimate.get("quantity") or manifest.subcommand
            rows.append({
                "run": manifest.subcommand,
                "config_hash": manifest.config_hash,
                "check": name,
                "kind": "estimate",
                "value": estimate.get("value"),
                "stderr": estimate.get("stderr"),
                "passed": bool(estimate.get("valid", True)),
                "gated": False,
                "reference": CHECK_REFERENCES.get(name, ""),
            })
        for error in manifest.errors:
            rows.append({
                "run": manifest.subcommand,
                "config_hash": manifest.config_hash,
                "check": "error",
                "kind": "error",
                "value": None,
                "stderr": None,
                "passed": False,
                "gated": True,
                "reference": error,
            })
        return rows

    def format_table(self, rows: Sequence[Dict[str, Any]]) -> str:
        table = Table(title="spde-lab summary")
        for column in ("run", "hash", "check", "value", "stderr", "status", "reference"):
            table.add_column(column)
        for row in rows:
            if not row["gated"] and row["kind"] == "report":
                status = "info"
            else:
                status = "PASS" if row["passed"] else "FAIL"
            table.add_row(
                row["run"],
                row["config_hash"][:8],
                escape(row["check"]),
                self._number(row["value"]),
                self._number(row["stderr"]),
                status,
                escape(row["reference"]),
            )

        console = Console(record=True, width=self.width, file=io.StringIO())
        console.print(table)
        return console.export_text()

    @staticmethod
    def _number(value: Any) -> str:
        if value is None:
            return "-"
        try:
            return f"{float(value):.6g}"
        except (TypeError, ValueError):
            return str(value)


def report(manifests: Sequence[RunManifest]) -> Summary:
    """
    Aggregate manifests into a summary

    Args:
        manifests: Run manifests in display order; may be empty

    Returns:
        Summary whose failures list every failed gated row with its reference
    """
    if not manifests:
        return Summary(text="", rows=[], failures=[])

    formatter = ResponseFormatter()
    rows = [row for manifest in manifests for row in formatter.rows_for(manifest)]
    failures = [
        {"run": row["run"], "check": row["check"], "reference": row["reference"]}
        for row in rows
        if row["gated"] and not row["passed"]
    ]
    for failure in failures:
        logger.warning(f"{failure['run']}/{failure['check']} failed ({failure['reference']})")
    return Summary(text=formatter.format_table(rows), rows=rows, failures=failures)
