# app/services/statistics.py
# Paired Wilcoxon signed-rank test and the per-cell summary of a finished grid.

import logging
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from app.core.exceptions import ConfigError, DimensionError, InsufficientDataError, SummaryError
from app.schemas.experiment import GainRow, MethodId, RunResult, SummaryCell, SummaryTable

logger = logging.getLogger("sslb.statistics")

MIN_NONZERO = 5
EXACT_MAX_N = 12
TIE_TOL = 1e-9


class WilcoxonResult(NamedTuple):
    statistic: float
    p_value: float
    n: int
    method: str


class Comparison(NamedTuple):
    label: str
    a: MethodId
    b: MethodId


DEFAULT_COMPARISONS: Tuple[Comparison, ...] = (
    Comparison("MM+PBC vs. No MM", MethodId.MIXMATCH_PBC, MethodId.SUPERVISED),
    Comparison("MM+PBC vs. MM", MethodId.MIXMATCH_PBC, MethodId.MIXMATCH),
)


def comparisons_for(methods: Iterable[MethodId]) -> List[Comparison]:
    """The default comparisons whose two methods are both present."""
    present = set(MethodId(m) for m in methods)
    return [c for c in DEFAULT_COMPARISONS if c.a in present and c.b in present]


def _exact_p(ranks: np.ndarray, w_plus: float) -> float:
    n = len(ranks)
    signs = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
    totals = signs @ ranks
    centre = ranks.sum() / 2.0
    extreme = np.abs(totals - centre) >= abs(w_plus - centre) - TIE_TOL
    return float(extreme.mean())


def _approx_p(ranks: np.ndarray, abs_diff: np.ndarray, w_plus: float) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, ties = np.unique(abs_diff, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (ties ** 3 - ties).sum() / 48.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / np.sqrt(var)
    return float(2.0 * stats.norm.sf(z))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float], method: str = "auto") -> WilcoxonResult:
    """Two-sided paired signed-rank test on a - b.

    Zero differences are dropped; tied |differences| share their average rank. The
    statistic is min(W+, W-). method="auto" enumerates every sign assignment up to
    EXACT_MAX_N pairs and uses the tie-corrected normal approximation beyond.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"paired samples must be 1-D and equal length, got {a.shape} and {b.shape}")
    if method not in ("auto", "exact", "approx"):
        raise ConfigError(f"unknown wilcoxon method {method!r}")

    diff = a - b
    diff = diff[diff != 0]
    n = len(diff)
    if n < MIN_NONZERO:
        raise InsufficientDataError(f"need at least {MIN_NONZERO} nonzero differences, got {n}")

    abs_diff = np.abs(diff)
    ranks = stats.rankdata(abs_diff)
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks[diff < 0].sum())
    statistic = min(w_plus, w_minus)

    use_exact = method == "exact" or (method == "auto" and n <= EXACT_MAX_N)
    if use_exact:
        p = _exact_p(ranks, w_plus)
    else:
        p = _approx_p(ranks, abs_diff, w_plus)
    return WilcoxonResult(statistic=statistic, p_value=min(p, 1.0), n=n, method="exact" if use_exact else "approx")


# -- Summary ------------------------------------------------------------------

def results_frame(results: Iterable[RunResult]) -> pd.DataFrame:
    rows = [
        {
            "method": r.method.value,
            "neg_fraction": r.neg_fraction,
            "n_l": r.n_l,
            "seed": r.seed,
            "best_val_acc": r.best_val_acc,
            "failed": r.failed,
        }
        for r in results
    ]
    return pd.DataFrame(rows, columns=["method", "neg_fraction", "n_l", "seed", "best_val_acc", "failed"])


def summarize(
    results: Sequence[RunResult],
    comparisons: Optional[Sequence[Comparison]] = None,
    significance: float = 0.1,
    expected_seeds: Optional[int] = None,
) -> SummaryTable:
    """Mean and sample std per (method, neg_fraction, n_l) cell plus paired gains.

    Failed runs are left out of the statistics and counted in each cell's `failed`.
    A gain is significant iff the Wilcoxon p-value is below `significance`; gains whose
    test has too few nonzero differences are reported with no p-value, not significant.
    """
    frame = results_frame(results)
    if frame.empty:
        raise SummaryError("no results to summarize")
    comparisons = list(DEFAULT_COMPARISONS if comparisons is None else comparisons)

    configs = sorted(set(zip(frame["neg_fraction"], frame["n_l"])))
    methods = sorted(set(frame["method"]) | {m.value for c in comparisons for m in (c.a, c.b)})
    grouped = dict(tuple(frame.groupby(["method", "neg_fraction", "n_l"], sort=True)))

    referenced = {(m.value, nf, nl) for c in comparisons for m in (c.a, c.b) for nf, nl in configs}
    missing = []
    for key in sorted(referenced):
        group = grouped.get(key)
        if group is None or (expected_seeds is not None and len(group) != expected_seeds):
            have = 0 if group is None else len(group)
            missing.append(f"({key[0]}, neg_fraction={key[1]}, n_l={key[2]}: {have} runs)")
    if missing:
        logger.error("Summary cells incomplete: %s", ", ".join(missing))
        raise SummaryError("incomplete summary cells: " + ", ".join(missing))

    cells: List[SummaryCell] = []
    ok_scores: Dict[tuple, pd.Series] = {}
    for method in methods:
        for nf, nl in configs:
            group = grouped.get((method, nf, nl))
            if group is None:
                continue
            ok = group[~group["failed"]].sort_values("seed")
            scores = ok.set_index("seed")["best_val_acc"]
            ok_scores[(method, nf, nl)] = scores
            cells.append(
                SummaryCell(
                    method=MethodId(method),
                    neg_fraction=nf,
                    n_l=nl,
                    mean=float(scores.mean()) if len(scores) else float("nan"),
                    std=float(scores.std(ddof=1)) if len(scores) > 1 else 0.0,
                    n=len(scores),
                    failed=int(group["failed"].sum()),
                )
            )

    means = {(c.method.value, c.neg_fraction, c.n_l): c.mean for c in cells}
    gains: List[GainRow] = []
    for nf, nl in configs:
        for comp in comparisons:
            a = ok_scores[(comp.a.value, nf, nl)]
            b = ok_scores[(comp.b.value, nf, nl)]
            paired = pd.concat([a, b], axis=1, join="inner")
            p_value = None
            try:
                p_value = wilcoxon_signed_rank(paired.iloc[:, 0], paired.iloc[:, 1]).p_value
            except InsufficientDataError as exc:
                logger.info("No significance test for %s at %s/%s: %s", comp.label, nf, nl, exc)
            gains.append(
                GainRow(
                    neg_fraction=nf,
                    n_l=nl,
                    comparison=comp.label,
                    gain=means[(comp.a.value, nf, nl)] - means[(comp.b.value, nf, nl)],
                    p_value=p_value,
                    significant=p_value is not None and p_value < significance,
                )
            )
    return SummaryTable(cells=cells, gains=gains, significance=significance)
