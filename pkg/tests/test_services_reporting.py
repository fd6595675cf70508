import pytest

from app.schemas.experiment import GainRow, MethodId, RunResult, SummaryCell, SummaryTable
from app.services.reporting import (
    RESULT_COLUMNS,
    append_result,
    gains_frame,
    read_results,
    render_summary_text,
    sort_results,
    summary_frame,
    write_report,
    write_results,
)


def _result(method=MethodId.MIXMATCH, seed=0, nf=0.7, curve=(0.1 + 0.2, 2 / 3), **kw):
    return RunResult(
        method=method, neg_fraction=nf, n_l=15, seed=seed,
        val_curve=list(curve), best_val_acc=max(curve) if curve else 0.0, **kw,
    )


def test_results_round_trip_bit_exact(tmp_path):
    path = tmp_path / "results.csv"
    written = [
        _result(),
        _result(method=MethodId.SUPERVISED, seed=1, curve=(1 / 7,)),
        _result(method=MethodId.MIXMATCH_PBC, seed=2, curve=(), failed=True, failed_epoch=3,
                error="NumericError: non-finite loss, step 12"),
    ]
    for r in written:
        append_result(path, r)

    loaded = read_results(path)
    assert loaded == written
    assert loaded[0].val_curve[0] == 0.1 + 0.2
    assert path.read_text().splitlines()[0] == ",".join(RESULT_COLUMNS)


def test_write_results_sorts(tmp_path):
    path = tmp_path / "results.csv"
    runs = [
        _result(seed=2), _result(method=MethodId.SUPERVISED, seed=0), _result(nf=0.5, seed=9), _result(seed=0),
    ]
    write_results(path, runs)
    assert read_results(path) == sort_results(runs)
    assert [r.key for r in read_results(path)][0] == (0.5, 15, 9, "mixmatch")


def _table():
    cells = [
        SummaryCell(method=m, neg_fraction=nf, n_l=nl, mean=0.8, std=0.01, n=10)
        for m in MethodId for nf in (0.5, 0.8) for nl in (10, 20)
    ]
    gains = [
        GainRow(neg_fraction=nf, n_l=nl, comparison=label, gain=0.05, p_value=p, significant=p < 0.1)
        for nf in (0.5, 0.8) for nl in (10, 20)
        for label, p in (("MM+PBC vs. No MM", 0.01), ("MM+PBC vs. MM", 0.4))
    ]
    return SummaryTable(cells=cells, gains=gains)


def test_summary_frame_labels():
    frame = summary_frame(_table())
    row = frame[(frame.method == "mixmatch_pbc") & (frame.neg_fraction == 0.8)].iloc[0]
    assert (row.ssdl, row.lb, row.pos_fraction) == ("yes", "yes", 0.2)
    assert set(frame[frame.neg_fraction == 0.5].lb) == {"NA"}
    assert set(frame[(frame.method == "supervised") & (frame.neg_fraction == 0.8)].lb) == {"no"}
    assert list(frame.ssdl.drop_duplicates()) == ["no", "yes"]


def test_render_summary_text():
    text = render_summary_text(_table())
    assert text.index("SSDL: No") < text.index("SSDL: Yes") < text.index("Gains")
    assert "n_l=10" in text and "n_l=20" in text
    assert "0.800  0.010" in text
    assert "80/20" in text
    assert "+0.050*" in text
    assert "+0.050 " in text or text.rstrip().endswith("+0.050")


def test_write_report(tmp_path):
    paths = write_report(_table(), tmp_path / "out")
    assert all(p.exists() for p in paths.values())
    assert len(gains_frame(_table())) == 8


def test_failed_runs_are_flagged_in_text():
    cells = [SummaryCell(method=MethodId.SUPERVISED, neg_fraction=0.8, n_l=10, mean=0.7, std=0.0, n=9, failed=1)]
    assert "(1f)" in render_summary_text(SummaryTable(cells=cells, gains=[]))


@pytest.mark.parametrize("missing", ["val_curve", "error"])
def test_read_results_rejects_missing_columns(tmp_path, missing):
    path = tmp_path / "results.csv"
    write_results(path, [_result()])
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    idx = header.index(missing)
    rows = [",".join(v for i, v in enumerate(line.split(",")) if i != idx) for line in lines]
    path.write_text("\n".join(rows) + "\n")
    with pytest.raises(ValueError):
        read_results(path)
