import csv
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from thermosurrogate.errors import EmptyReport
from thermosurrogate.report import (AVERAGE, SCALE, BenchmarkReport, best_config_row, format_cell, mark_best,
                                    render_csv, render_text, reports_from_metrics, write_best_configs,
                                    write_reports)

FIXTURE = Path(__file__).parent / "fixtures" / "published_tables.csv"


def published():
    """Transcribed result tables: {quantity: {(dataset, model): (mean, std, bold)}} in x1e-5 units."""
    out = {}
    with FIXTURE.open(newline="") as fh:
        for r in csv.DictReader(fh):
            out.setdefault(r["quantity"], {})[(r["dataset"], r["model"])] = (
                float(r["mean_x1e-5"]), float(r["std_x1e-5"]), r["bold"] == "1")
    return out


def report_from_table(quantity, table):
    rep = BenchmarkReport("specialised", quantity)
    for (run, kind), (m, s, _) in table.items():
        if run != AVERAGE:
            rep.add(run, kind, m * SCALE, s * SCALE)
    return rep


def test_format_cell():
    assert format_cell(4.90e-5, 0.10e-5) == "4.90±0.10"
    assert format_cell(0.0, 0.0) == "0.00±0.00"
    assert format_cell(3.215e-4, 1.2e-6) == "32.15±0.12"


def test_average_row_small_fixture():
    rep = BenchmarkReport("specialised", "temperature")
    for run, m, s in [("RUN1", 1e-5, 2e-5), ("RUN2", 3e-5, 0.0), ("RUN3", 5e-5, 1e-5)]:
        rep.add(run, "gru", m, s)
    rep.add("RUN1", "tcn", 9e-5, 0.0)
    avg = rep.averages()
    assert avg["gru"] == pytest.approx((3e-5, 1e-5))
    assert avg["tcn"] == pytest.approx((9e-5, 0.0))
    assert rep.rows()[-1][0] == AVERAGE
    text = render_text(rep)
    assert "RUN2" in text and "-" in text.splitlines()[4]  # missing TCN cell


@pytest.mark.parametrize("quantity", ["temperature", "heatflux"])
def test_published_tables_reproduce(quantity):
    table = published()[quantity]
    rep = report_from_table(quantity, table)
    avg = rep.averages()
    for kind, (m, s) in avg.items():
        pm, ps, _ = table[(AVERAGE, kind)]
        # the table averages rounded per-run cells, so allow one unit in the last digit
        assert abs(m / SCALE - pm) <= 0.0100001 and abs(s / SCALE - ps) <= 0.0100001
    best = mark_best(rep)
    for (run, kind), (_, _, bold) in table.items():
        assert (kind in best[run]) == bold, (run, kind)


def test_published_highlights():
    tables = published()
    temp = report_from_table("temperature", tables["temperature"])
    text = render_text(temp)
    avg_line = [l for l in text.splitlines() if l.startswith(AVERAGE)][0]
    assert "2.57±2.98" in avg_line and "*1.18±0.53" in avg_line
    run1 = [l for l in text.splitlines() if l.startswith("RUN1 ")][0]
    assert "*4.90±0.10" in run1
    assert mark_best(temp)["RUN6"] == ["bilstm", "tcn"]
    assert "note: tie in RUN6: BiLSTM, TCN" in text
    heat = report_from_table("heatflux", tables["heatflux"])
    best = mark_best(heat)
    assert best["RUN1"] == ["gru", "bilstm"]
    assert best[AVERAGE] == ["bilstm"]
    assert format_cell(*heat.averages()["bilstm"]) == "0.57±0.55"


@given(st.lists(st.floats(1e-8, 1e-3), min_size=2, max_size=6), st.floats(0.1, 1000))
def test_best_invariant_under_positive_scaling(means, factor):
    kinds = ["rnn", "gru", "lstm", "bilstm", "transformer", "tcn"][:len(means)]
    a, b = BenchmarkReport("s", "t"), BenchmarkReport("s", "t")
    for k, m in zip(kinds, means):
        a.add("RUN1", k, m, 0.0)
        b.add("RUN1", k, m * factor, 0.0)
    lo = min(means)
    if sum(m == lo for m in means) == 1:
        assert mark_best(a)["RUN1"] == mark_best(b)["RUN1"]


def test_empty_report(tmp_path):
    with pytest.raises(EmptyReport):
        render_text(BenchmarkReport("s", "t"))
    with pytest.raises(EmptyReport):
        write_reports([], tmp_path)


def test_rerender_is_byte_identical(tmp_path):
    rep = report_from_table("temperature", published()["temperature"])
    write_reports([rep], tmp_path / "a")
    write_reports([rep], tmp_path / "b")
    for name in ("report.txt", "report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_and_text_agree():
    rep = report_from_table("heatflux", published()["heatflux"])
    text = render_text(rep)
    rows = list(csv.DictReader(render_csv(rep).splitlines()))
    assert len(rows) == 13 * 6
    for r in rows:
        cell = f"{r['mse_x1e-5']}±{r['std_x1e-5']}"
        line = [l for l in text.splitlines() if l.split()[0] == r["dataset"]][0]
        assert (("*" + cell) in line) == (r["best"] == "1")
        assert cell in line


def test_reports_from_metrics_groups_and_sorts():
    rows = [
        {"protocol": "specialised", "quantity": "temperature", "run_id": "RUN10", "kind": "gru",
         "mse_mean": "1e-5", "mse_std": "0", "normalization": "minmax", "seeds": "1;2;3"},
        {"protocol": "specialised", "quantity": "temperature", "run_id": "RUN2", "kind": "gru",
         "mse_mean": "2e-5", "mse_std": "0", "normalization": "minmax", "seeds": "1;2;3"},
        {"protocol": "generalised", "quantity": "heatflux", "run_id": "RUN1", "kind": "tcn",
         "mse_mean": "3e-5", "mse_std": "0", "normalization": "minmax", "seeds": "1;2;3"},
    ]
    reps = reports_from_metrics(rows)
    assert [(r.protocol, r.quantity) for r in reps] == [("generalised", "heatflux"), ("specialised", "temperature")]
    assert reps[1].runs == ["RUN2", "RUN10"]
    assert "normalisation=minmax" in render_text(reps[1])


def test_best_config_table(tmp_path):
    rows = [best_config_row("RUN1", "temperature", "transformer",
                            {"learning_rate": 0.001, "weight_decay": 1e-4, "dropout": 0.1, "hidden": 32,
                             "layers": 2, "heads": 4}),
            best_config_row("RUN1", "heatflux", "gru", {"learning_rate": 0.01, "hidden": 16, "layers": 1,
                                                         "heads": 2})]
    path = tmp_path / "best.csv"
    write_best_configs(rows, path)
    got = list(csv.DictReader(path.open()))
    assert got[0]["Att. Heads"] == "4" and got[0]["Weight Decay"] == "0.0001"
    assert got[1]["Target"] == "Heat flux" and got[1]["Att. Heads"] == "-" and got[1]["Dropout"] == "-"
