import numpy as np
import pytest

from plotkit.cli import main
from plotkit.figures import (
    EmptySelection,
    FigureSpec,
    MissingColumn,
    baseline_normalized_curves,
    read_csv_columns,
    render,
    sweep_curves,
)

RESULTS_HEADER = "scenario,strategy,N,gamma,a,seed,j_mean,j_stderr,j_trace_mean,grants,ratio_r"

GOLDEN_RESULTS = "\n".join(
    [
        RESULTS_HEADER,
        "lossy2-f0.1-aware,relaxed,1,1,1.0,1,0.91,0.01,4.1,50.0;49.0,0.98",
        "lossy2-f0.1-aware,relaxed,5,1,1.0,1,0.90,0.01,4.0,49.0;50.0,1.02",
        "lossy2-f0.1-aware,relaxed,15,1,1.0,1,0.89,0.01,3.9,49.0;50.0,1.02",
        "lossy2-f0.1-blind,relaxed,1,1,1.0,1,0.95,0.01,4.4,50.0;49.0,0.98",
        "lossy2-f0.1-blind,relaxed,5,1,1.0,1,0.94,0.01,4.3,50.0;49.0,0.98",
        "lossy2-f0.1-blind,relaxed,15,1,1.0,1,0.95,0.01,4.4,49.0;50.0,1.02",
        "lossy2-f0.1-aware,baseline,1,1,1.0,1,0.99,0.01,4.8,50.0;49.0,0.98",
        "lossy2-f0.1-aware,baseline,5,1,1.0,1,0.99,0.01,4.8,50.0;49.0,0.98",
        "lossy2-f0.1-aware,baseline,15,1,1.0,1,0.99,0.01,4.8,50.0;49.0,0.98",
        "",
    ]
)

GOLDEN_SWEEP = "\n".join(
    [
        RESULTS_HEADER,
        "fleet8,greedy,1,1,1.0,1,2.2,0.01,9.9,10.0;10.0,1.0",
        "fleet8,greedy,2,1,1.0,1,2.0,0.01,9.1,10.0;10.0,1.0",
        "fleet8,greedy,3,1,1.0,1,1.9,0.01,8.8,10.0;10.0,1.0",
        "fleet8,greedy,3,2,1.0,1,1.5,0.01,7.0,10.0;10.0,1.0",
        "fleet8,greedy,3,3,1.0,1,1.3,0.01,6.2,10.0;10.0,1.0",
        "tuning2,exhaustive,3,1,1.0,1,1.1,0.01,5.0,39.0;40.0,1.026",
        "tuning2,exhaustive,3,1,2.0,1,1.2,0.01,5.2,32.0;47.0,1.469",
        "tuning2,exhaustive,3,1,4.0,1,1.3,0.01,5.5,20.0;59.0,2.95",
        "",
    ]
)

GOLDEN_TRACE = "\n".join(
    [
        "step,agent,delta,s,sigma,stage_cost,tr_gamma_E,tr_P_X,x0,x1,xhat0,xhat1",
        "0,0,0,0,1.0,0.5,0.1,2.0,1.0,0.0,0.0,0.0",
        "0,1,0,0,0.4,0.6,0.2,2.2,0.9,0.1,0.0,0.0",
        "1,0,1,1,0.9,0.4,0.05,1.8,0.8,0.0,0.7,0.0",
        "1,1,0,0,0.5,0.5,0.25,2.1,0.8,0.1,0.0,0.0",
        "2,0,0,0,0.7,0.3,0.08,1.5,0.6,0.0,0.5,0.0",
        "2,1,1,0,0.6,0.5,0.30,2.0,0.7,0.1,0.0,0.0",
        "",
    ]
)


@pytest.fixture
def golden(tmp_path):
    results = tmp_path / "results.csv"
    results.write_text(GOLDEN_RESULTS)
    sweep = tmp_path / "sweep.csv"
    sweep.write_text(GOLDEN_SWEEP)
    trace = tmp_path / "trace.csv"
    trace.write_text(GOLDEN_TRACE)
    return tmp_path, results, sweep, trace


def rows_of(path):
    cols = read_csv_columns(path)
    n = len(next(iter(cols.values())))
    return [{k: cols[k][i] for k in cols} for i in range(n)]


class TestRendering:
    def test_all_five_kinds_render(self, golden):
        tmp, results, sweep, trace = golden
        specs = [
            FigureSpec("horizon-sweep", (str(sweep),), str(tmp / "f1.png")),
            FigureSpec("gamma-sweep", (str(sweep),), str(tmp / "f2.png")),
            FigureSpec("tuning-ratio", (str(sweep),), str(tmp / "f3.png")),
            FigureSpec("sigma-traj", (str(trace),), str(tmp / "f4.png")),
            FigureSpec("lossy-normalized", (str(results),), str(tmp / "f5.png")),
        ]
        for spec in specs:
            out = render(spec)
            data = (tmp / out).read_bytes() if not out.startswith("/") else open(out, "rb").read()
            assert data[:8] == b"\x89PNG\r\n\x1a\n"
            assert len(data) > 1000

    def test_rerender_byte_identical(self, golden):
        tmp, results, _, _ = golden
        spec1 = FigureSpec("lossy-normalized", (str(results),), str(tmp / "a.png"))
        spec2 = FigureSpec("lossy-normalized", (str(results),), str(tmp / "b.png"))
        render(spec1)
        render(spec2)
        assert (tmp / "a.png").read_bytes() == (tmp / "b.png").read_bytes()

    def test_missing_column(self, golden):
        tmp, *_ = golden
        bad = tmp / "bad.csv"
        bad.write_text("scenario,N\nx,1\n")
        with pytest.raises(MissingColumn, match="j_mean"):
            render(FigureSpec("horizon-sweep", (str(bad),), str(tmp / "x.png")))

    def test_empty_selection(self, golden):
        tmp, *_ = golden
        empty = tmp / "empty.csv"
        empty.write_text(RESULTS_HEADER + "\n")
        with pytest.raises(EmptySelection):
            render(FigureSpec("horizon-sweep", (str(empty),), str(tmp / "x.png")))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            FigureSpec("pie-chart", ("x.csv",), "y.png")


class TestNormalization:
    def test_single_row_scales_to_one(self, golden):
        tmp, *_ = golden
        single = tmp / "single.csv"
        single.write_text(RESULTS_HEADER + "\nfleet5,greedy,3,1,1.0,1,2.5,0.0,9.0,10.0,1.0\n")
        curves = sweep_curves(rows_of(single), "N", scale_min=True)
        (xs, ys) = curves["fleet5"]
        assert xs.tolist() == [3.0] and ys.tolist() == [1.0]

    def test_scaled_minimum_is_one(self, golden):
        _, _, sweep, _ = golden
        curves = sweep_curves(rows_of(sweep), "N", scale_min=True)
        for xs, ys in curves.values():
            assert np.min(ys) == pytest.approx(1.0)
            assert np.all(ys >= 1.0)

    def test_baseline_rows_normalize_to_exactly_one(self, golden):
        _, results, _, _ = golden
        rows = [r for r in rows_of(results) if r["strategy"] == "baseline"]
        curves = baseline_normalized_curves(rows)
        for _, ys in curves.values():
            assert all(y == 1.0 for y in ys)

    def test_mixed_rows_normalized_by_matching_baseline(self, golden):
        _, results, _, _ = golden
        curves = baseline_normalized_curves(rows_of(results))
        xs, ys = curves[("lossy2-f0.1-aware", "relaxed")]
        assert xs == [1.0, 5.0, 15.0]
        assert ys == pytest.approx([0.91 / 0.99, 0.90 / 0.99, 0.89 / 0.99])

    def test_baseline_required(self, golden):
        _, results, _, _ = golden
        rows = [r for r in rows_of(results) if r["strategy"] != "baseline"]
        with pytest.raises(EmptySelection):
            baseline_normalized_curves(rows)


class TestCli:
    def test_plot_command(self, golden):
        tmp, results, sweep, trace = golden
        out = tmp / "cli.png"
        rc = main(["plot", "--kind", "lossy-normalized", "--in", str(results), "--out", str(out)])
        assert rc == 0 and out.exists()

    def test_error_exit_code(self, golden, capsys):
        tmp, *_ = golden
        rc = main(["plot", "--kind", "horizon-sweep", "--in", str(tmp / "nope.csv"), "--out", str(tmp / "x.png")])
        assert rc == 1
        assert "plotkit error" in capsys.readouterr().err
