import itertools

import numpy as np
import pytest
from scipy import stats

from app.core.exceptions import DimensionError, InsufficientDataError, SummaryError
from app.schemas.experiment import MethodId, RunResult
from app.services.statistics import (
    DEFAULT_COMPARISONS,
    comparisons_for,
    summarize,
    wilcoxon_signed_rank,
)


def _enumerated_p(diff):
    diff = np.asarray(diff)
    diff = diff[diff != 0]
    ranks = stats.rankdata(np.abs(diff))
    observed = ranks[diff > 0].sum()
    centre = ranks.sum() / 2
    hits = 0
    for signs in itertools.product((0, 1), repeat=len(ranks)):
        w = float(np.dot(signs, ranks))
        if abs(w - centre) >= abs(observed - centre) - 1e-9:
            hits += 1
    return hits / 2 ** len(ranks)


def test_identical_samples_have_no_test():
    a = [0.8] * 10
    with pytest.raises(InsufficientDataError):
        wilcoxon_signed_rank(a, a)


def test_fewer_than_five_nonzero_differences():
    with pytest.raises(InsufficientDataError):
        wilcoxon_signed_rank([1, 2, 3, 4, 5, 6], [1, 2, 3, 3, 4, 5])


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        wilcoxon_signed_rank([1, 2, 3], [1, 2])


def test_constant_shift_is_all_or_nothing():
    b = np.linspace(0.5, 0.9, 10)
    result = wilcoxon_signed_rank(b + 1, b)
    assert result.p_value == pytest.approx(2 / 1024)
    assert result.statistic == 0.0
    assert result.method == "exact"


def test_exact_p_matches_enumeration_with_ties():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 200:
        n = int(rng.integers(5, 11))
        # rounded differences produce tied ranks and some zeros
        a = np.round(rng.normal(size=n), 1)
        b = np.round(rng.normal(size=n), 1)
        diff = a - b
        if np.count_nonzero(diff) < 5:
            continue
        assert wilcoxon_signed_rank(a, b).p_value == pytest.approx(_enumerated_p(diff), abs=1e-12)
        checked += 1


def test_exact_p_agrees_with_scipy_without_ties():
    rng = np.random.default_rng(1)
    for n in (5, 8, 12):
        a = rng.normal(size=n)
        b = a + rng.normal(0.3, 1.0, size=n)
        ours = wilcoxon_signed_rank(a, b)
        ref = stats.wilcoxon(a, b, method="exact")
        assert ours.statistic == ref.statistic
        assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-9)


def test_normal_approximation_near_exact_at_twelve():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a = rng.normal(size=12)
        b = a + rng.normal(0.4, 1.0, size=12)
        exact = wilcoxon_signed_rank(a, b, method="exact").p_value
        approx = wilcoxon_signed_rank(a, b, method="approx").p_value
        assert abs(exact - approx) <= 0.02


def test_auto_switches_to_approximation_above_twelve():
    rng = np.random.default_rng(3)
    a = rng.normal(size=30)
    result = wilcoxon_signed_rank(a + rng.normal(0.5, 1.0, size=30), a)
    assert result.method == "approx"
    assert 0.0 <= result.p_value <= 1.0


def _runs(method, scores, nf=0.8, nl=10, failed_seeds=()):
    return [
        RunResult(
            method=method, neg_fraction=nf, n_l=nl, seed=seed,
            val_curve=[] if seed in failed_seeds else [score],
            best_val_acc=0.0 if seed in failed_seeds else score,
            failed=seed in failed_seeds,
        )
        for seed, score in enumerate(scores)
    ]


def _grid(pbc, mm, sup, **kw):
    return (
        _runs(MethodId.MIXMATCH_PBC, pbc, **kw)
        + _runs(MethodId.MIXMATCH, mm, **kw)
        + _runs(MethodId.SUPERVISED, sup, **kw)
    )


def test_summarize_constant_cell():
    table = summarize(_grid([0.9] * 10, [0.9] * 10, [0.8] * 10))
    cell = next(c for c in table.cells if c.method == MethodId.MIXMATCH_PBC)
    assert cell.mean == pytest.approx(0.9)
    assert cell.std == pytest.approx(0.0, abs=1e-12)
    assert cell.n == 10


def test_summarize_gains_and_significance():
    table = summarize(_grid([0.9] * 10, [0.9] * 10, [0.8] * 10))
    gains = {g.comparison: g for g in table.gains}
    vs_sup = gains["MM+PBC vs. No MM"]
    assert vs_sup.gain == pytest.approx(0.1)
    assert vs_sup.p_value == pytest.approx(2 / 1024)
    assert vs_sup.significant

    vs_mm = gains["MM+PBC vs. MM"]
    assert vs_mm.gain == 0.0
    assert vs_mm.p_value is None
    assert not vs_mm.significant


def test_summarize_excludes_failed_runs():
    table = summarize(_grid([0.9] * 10, [0.85] * 10, [0.8] * 10, failed_seeds=(3,)))
    cell = next(c for c in table.cells if c.method == MethodId.SUPERVISED)
    assert cell.n == 9
    assert cell.failed == 1
    assert cell.mean == pytest.approx(0.8)


def test_summarize_reports_missing_cells():
    runs = _runs(MethodId.MIXMATCH_PBC, [0.9] * 10) + _runs(MethodId.SUPERVISED, [0.8] * 10)
    with pytest.raises(SummaryError, match="mixmatch"):
        summarize(runs)
    assert len(summarize(runs, comparisons_for([MethodId.MIXMATCH_PBC, MethodId.SUPERVISED])).gains) == 1


def test_summarize_checks_seed_counts():
    runs = _grid([0.9] * 10, [0.9] * 10, [0.8] * 9)
    with pytest.raises(SummaryError):
        summarize(runs, expected_seeds=10)


def test_summarize_needs_results():
    with pytest.raises(SummaryError):
        summarize([])


def test_comparisons_for_subsets():
    assert comparisons_for(list(MethodId)) == list(DEFAULT_COMPARISONS)
    assert comparisons_for([MethodId.SUPERVISED]) == []
