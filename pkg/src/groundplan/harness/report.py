"""CSV, Markdown and JSON-lines output for evaluation reports."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .campaign import EvalReport

COLUMNS = ("env", "horizon", "source", "method", "episodes", "successes", "success_rate",
           "mean_dist", "mean_seconds")


def _num(x: float) -> str:
    return repr(float(x))


def report_rows(report: EvalReport, timing: bool = False) -> list[list[str]]:
    """Table body as strings. Without ``timing`` the wall-clock column reads
    ``NA`` so that reports are byte-identical across re-runs."""
    out = []
    for c in report.cells():
        out.append([c.env, str(c.horizon), c.source, c.method, str(c.episodes), str(c.successes),
                    _num(c.success_rate), _num(c.mean_dist), _num(c.mean_seconds) if timing else "NA"])
    return out


def report_csv(report: EvalReport, timing: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    w.writerows(report_rows(report, timing))
    return buf.getvalue()


def report_markdown(report: EvalReport, timing: bool = False) -> str:
    lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
    lines += ["| " + " | ".join(r) + " |" for r in report_rows(report, timing)]
    return "\n".join(lines) + "\n"


def episodes_jsonl(report: EvalReport, timing: bool = False) -> str:
    """One record per episode, with its per-replan log."""
    buf = []
    for r in report.rows:
        rec = {"env": r.env, "horizon": r.horizon, "source": r.source, "method": r.method,
               "episode": r.episode, "success": r.success, "final_dist": r.final_dist,
               "aborted": r.aborted, "final_residual": r.final_residual, "replans": list(r.replans)}
        if timing:
            rec["seconds"] = r.seconds
        buf.append(json.dumps(rec) + "\n")
    return "".join(buf)


def emit_report(report: EvalReport, fmt: str, path, timing: bool = False) -> Path:
    """Write ``report`` as ``"csv"`` or ``"markdown"``; IO errors propagate."""
    if fmt == "csv":
        text = report_csv(report, timing)
    elif fmt in ("markdown", "md"):
        text = report_markdown(report, timing)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    p = Path(path)
    p.write_text(text, encoding="utf-8", newline="")
    return p
