# app/services/reporting.py
# results.csv / summary.csv / gains.csv / summary.txt.
#
# results.csv floats are written with repr() and read back as strings, so a resumed grid
# sees exactly the values the first process produced.

import logging
from pathlib import Path
from typing import Dict, Iterable, List

import pandas as pd

from app.schemas.experiment import MethodId, RunResult, SummaryTable

logger = logging.getLogger("sslb.reporting")

RESULT_COLUMNS = [
    "seed", "method", "neg_fraction", "n_l", "val_curve", "best_val_acc", "failed", "failed_epoch", "error",
]
SUMMARY_COLUMNS = ["method", "ssdl", "lb", "neg_fraction", "pos_fraction", "n_l", "mean", "std", "n", "failed"]
GAIN_COLUMNS = ["neg_fraction", "n_l", "comparison", "gain", "p_value", "significant"]


def sort_results(results: Iterable[RunResult]) -> List[RunResult]:
    return sorted(results, key=lambda r: r.key)


def result_row(result: RunResult) -> Dict[str, str]:
    return {
        "seed": str(result.seed),
        "method": result.method.value,
        "neg_fraction": repr(result.neg_fraction),
        "n_l": str(result.n_l),
        "val_curve": ";".join(repr(v) for v in result.val_curve),
        "best_val_acc": repr(result.best_val_acc),
        "failed": "1" if result.failed else "0",
        "failed_epoch": "" if result.failed_epoch is None else str(result.failed_epoch),
        "error": result.error or "",
    }


def parse_result_row(row: Dict[str, str]) -> RunResult:
    return RunResult(
        seed=int(row["seed"]),
        method=MethodId(row["method"]),
        neg_fraction=float(row["neg_fraction"]),
        n_l=int(row["n_l"]),
        val_curve=[float(v) for v in row["val_curve"].split(";") if v],
        best_val_acc=float(row["best_val_acc"]),
        failed=row["failed"] == "1",
        failed_epoch=int(row["failed_epoch"]) if row["failed_epoch"] else None,
        error=row["error"] or None,
    )


def append_result(path: Path, result: RunResult) -> None:
    """Append one row; the header is written when the file does not exist yet."""
    path = Path(path)
    frame = pd.DataFrame([result_row(result)], columns=RESULT_COLUMNS)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False)


def write_results(path: Path, results: Iterable[RunResult]) -> None:
    rows = [result_row(r) for r in sort_results(results)]
    pd.DataFrame(rows, columns=RESULT_COLUMNS).to_csv(path, index=False)


def read_results(path: Path) -> List[RunResult]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    absent = [c for c in RESULT_COLUMNS if c not in frame.columns]
    if absent:
        raise ValueError(f"{path} is missing result columns {absent}")
    return [parse_result_row(row) for row in frame.to_dict(orient="records")]


# -- Summary tables -----------------------------------------------------------

def _balance_label(neg_fraction: float) -> str:
    neg = round(neg_fraction * 100)
    return f"{neg}/{100 - neg}"


def _lb(method: MethodId, neg_fraction: float) -> str:
    if neg_fraction == 0.5:
        return "NA"
    return "yes" if method.balanced else "no"


def summary_frame(table: SummaryTable) -> pd.DataFrame:
    rows = [
        {
            "method": c.method.value,
            "ssdl": "yes" if c.method.semi_supervised else "no",
            "lb": _lb(c.method, c.neg_fraction),
            "neg_fraction": c.neg_fraction,
            "pos_fraction": round(1.0 - c.neg_fraction, 10),
            "n_l": c.n_l,
            "mean": c.mean,
            "std": c.std,
            "n": c.n,
            "failed": c.failed,
        }
        for c in table.cells
    ]
    frame = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    return frame.sort_values(["ssdl", "neg_fraction", "lb", "n_l"], kind="stable").reset_index(drop=True)


def gains_frame(table: SummaryTable) -> pd.DataFrame:
    frame = pd.DataFrame([g.model_dump() for g in table.gains], columns=GAIN_COLUMNS)
    return frame.sort_values(["neg_fraction", "comparison", "n_l"], kind="stable").reset_index(drop=True)


def render_summary_text(table: SummaryTable) -> str:
    n_ls = sorted({c.n_l for c in table.cells})
    col = 17
    lines: List[str] = []

    header = f"{'config':<8}{'method':<21}{'LB':<5}" + "".join(f"| {'n_l=' + str(n):<{col - 2}}" for n in n_ls)
    cells = {(c.method, c.neg_fraction, c.n_l): c for c in table.cells}
    for ssdl in (False, True):
        block = [m for m in MethodId if m.semi_supervised == ssdl and any(k[0] == m for k in cells)]
        if not block:
            continue
        lines.append(f"SSDL: {'Yes' if ssdl else 'No'}")
        lines.append(header)
        lines.append("-" * len(header))
        for nf in sorted({c.neg_fraction for c in table.cells}):
            for method in block:
                row = f"{_balance_label(nf):<8}{method.value:<21}{_lb(method, nf):<5}"
                for n in n_ls:
                    cell = cells.get((method, nf, n))
                    text = "-" if cell is None else f"{cell.mean:.3f}  {cell.std:.3f}"
                    if cell is not None and cell.failed:
                        text += f" ({cell.failed}f)"
                    row += f"| {text:<{col - 2}}"
                lines.append(row.rstrip())
        lines.append("")

    if table.gains:
        lines.append("Gains (* not significant, Wilcoxon p >= %g)" % table.significance)
        gain_header = f"{'config':<8}{'comparison':<21}" + "".join(f"| {'n_l=' + str(n):<{col - 2}}" for n in n_ls)
        lines.append(gain_header)
        lines.append("-" * len(gain_header))
        gains = {(g.neg_fraction, g.comparison, g.n_l): g for g in table.gains}
        for nf in sorted({g.neg_fraction for g in table.gains}):
            for label in dict.fromkeys(g.comparison for g in table.gains):
                row = f"{_balance_label(nf):<8}{label:<21}"
                for n in n_ls:
                    g = gains.get((nf, label, n))
                    text = "-" if g is None else f"{g.gain:+.3f}{'' if g.significant else '*'}"
                    row += f"| {text:<{col - 2}}"
                lines.append(row.rstrip())
    return "\n".join(lines).rstrip() + "\n"


def write_report(table: SummaryTable, out_dir: Path) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "summary": out_dir / "summary.csv",
        "gains": out_dir / "gains.csv",
        "text": out_dir / "summary.txt",
    }
    summary_frame(table).to_csv(paths["summary"], index=False)
    gains_frame(table).to_csv(paths["gains"], index=False)
    paths["text"].write_text(render_summary_text(table), encoding="utf-8")
    logger.info("Wrote report to %s (%s cells, %s gains)", out_dir, len(table.cells), len(table.gains))
    return paths
