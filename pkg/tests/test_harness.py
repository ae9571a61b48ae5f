from __future__ import annotations

from dataclasses import replace

import pytest

from nvtraverse.harness.plotting import figure, plot
from nvtraverse.harness.sweep import SweepRow, point_spec, read_csv, sweep, write_csv
from nvtraverse.harness.workload import WorkloadSpec, execute, run_workload
from nvtraverse.pmem import Counters

LOOKUPS = WorkloadSpec(mix=(0, 0, 100), ops=200)


# -- workloads ---------------------------------------------------------------------------------------


@pytest.mark.parametrize("r", [64, 256, 1024])
def test_lookup_counts_are_constant_in_size(r):
    report = run_workload(replace(LOOKUPS, key_range=r))
    assert report.fences_per_op == 2.0  # makePersistent fence + fence before return
    assert report.flushes_per_op == 3.0  # original-parent link + left.next + right.next


def test_flush_everything_grows_with_size():
    small = run_workload(replace(LOOKUPS, persist="izraelevitz", key_range=64))
    large = run_workload(replace(LOOKUPS, persist="izraelevitz", key_range=512))
    assert large.flushes_per_op > 4 * small.flushes_per_op
    assert large.avg_traversal > 4 * small.avg_traversal


@pytest.mark.parametrize("mix", [(0, 0, 100), (30, 30, 40)])
def test_unpersisted_workload_issues_nothing(mix):
    report = run_workload(replace(LOOKUPS, persist="none", mix=mix))
    assert report.totals.flushes == report.totals.fences == 0


@pytest.mark.parametrize("mix", [(10, 10, 70), (101, 0, -1), (50, 50)])
def test_invalid_mix(mix):
    with pytest.raises(ValueError):
        WorkloadSpec(mix=mix)


@pytest.mark.parametrize(
    "field, value", [("structure", "tree"), ("persist", "onefile"), ("threads", 0), ("mode", "turbo"), ("ops", -1)]
)
def test_invalid_specs(field, value):
    with pytest.raises(ValueError):
        replace(WorkloadSpec(), **{field: value})


def test_parse_mix():
    assert WorkloadSpec.parse_mix("10:10:80") == (10, 10, 80)
    with pytest.raises(ValueError):
        WorkloadSpec.parse_mix("10:90")


def test_prefill_is_half_the_range_of_distinct_keys():
    keys = WorkloadSpec(key_range=100).prefill_keys()
    assert len(keys) == len(set(keys)) == 50
    assert all(0 <= k < 100 for k in keys)


def test_controlled_runs_are_deterministic():
    spec = WorkloadSpec(threads=3, ops=300, key_range=64, seed=11)
    assert run_workload(spec).to_json() == run_workload(spec).to_json()
    assert run_workload(spec, seed=12).to_json() != run_workload(spec).to_json()


def test_report_accounting():
    spec = WorkloadSpec(threads=3, ops=301, key_range=64, mix=(20, 20, 60))
    report, mem = execute(spec)
    assert report.ops == 301 == sum(report.ops_per_thread.values())
    total = Counters()
    for t in range(3):
        total = total + mem.counters(t)
    assert report.totals == total
    assert report.flushes_per_op == pytest.approx(total.flushes / 301)
    assert sum(s.count for s in report.per_op.values()) == 301
    assert sum(s.flushes for s in report.per_op.values()) == total.flushes
    d = report.as_dict()
    assert d["averages"]["fences"] == pytest.approx(report.fences_per_op)


def test_free_threading_mode():
    report = run_workload(replace(LOOKUPS, threads=4, mode="free", ops=400))
    assert report.ops == 400
    assert report.fences_per_op == 2.0
    assert report.flushes_per_op == 3.0


def test_summary_mentions_per_op_lines():
    text = run_workload(WorkloadSpec(ops=50, key_range=32)).summary()
    assert "flushes/op" in text and "insert" in text


@pytest.mark.parametrize("seed", range(3))
def test_updates_add_flushes(seed):
    values = [0, 20, 50, 100]
    rows = sweep("update", values, WorkloadSpec(ops=300, key_range=128, seed=seed), persists=["nvtraverse"])
    flushes = [r.flushes_per_op for r in rows]
    assert flushes == sorted(flushes) and flushes[0] < flushes[-1]


def test_thread_count_does_not_change_lookup_counts():
    rows = sweep("threads", [1, 2, 4], replace(LOOKUPS, key_range=128), persists=["nvtraverse"])
    assert {(r.flushes_per_op, r.fences_per_op) for r in rows} == {(3.0, 2.0)}


# -- sweeps --------------------------------------------------------------------------------------------


def test_point_spec():
    t = WorkloadSpec()
    assert point_spec(t, "size", 512, "none").key_range == 512
    assert point_spec(t, "threads", 4, "none").threads == 4
    assert point_spec(t, "update", 50, "izraelevitz").mix == (25, 25, 50)
    with pytest.raises(ValueError):
        point_spec(t, "colour", 1, "none")
    with pytest.raises(ValueError):
        point_spec(t, "update", 120, "none")
    with pytest.raises(ValueError):
        sweep("size", [])


def test_sweep_csv_roundtrip(tmp_path):
    rows = sweep("size", [32, 64], replace(LOOKUPS, ops=40))
    assert len(rows) == 6
    path = write_csv(rows, tmp_path / "s.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "size,persist,ops,flushes_per_op,fences_per_op,avg_traversal"
    back = read_csv(path)
    assert [(r.value, r.persist, r.ops) for r in back] == [(r.value, r.persist, r.ops) for r in rows]
    assert [r.flushes_per_op for r in back] == pytest.approx([r.flushes_per_op for r in rows])


@pytest.mark.parametrize(
    "text", ["", "size,persist,ops,flushes_per_op,fences_per_op\n", "colour,a,b,c,d\n1,2,3,4,5\n", "size,persist,ops,flushes_per_op,fences_per_op\nx,none,1,0,0\n"]
)
def test_malformed_csv(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ValueError):
        read_csv(p)


# -- plots -----------------------------------------------------------------------------------------------


def rows_for(values, persists=("none", "nvtraverse", "izraelevitz")):
    return [SweepRow("size", v, p, 10, float(i + v / 100), float(i), 1.0) for v in values for i, p in enumerate(persists)]


def test_three_series_give_three_lines():
    fig = figure(rows_for([256, 512, 1024]))
    for ax in fig.axes:
        assert len(ax.get_lines()) == 3
        assert [t.get_text() for t in ax.get_legend().get_texts()] == ["none", "nvtraverse", "izraelevitz"]
        assert ax.get_xscale() == "log"


def test_single_point_chart_has_markers():
    fig = figure(rows_for([256], persists=("nvtraverse",)))
    (line,) = fig.axes[0].get_lines()
    assert len(line.get_xdata()) == 1 and line.get_marker() == "o"


def test_plot_writes_an_image(tmp_path):
    csv_path = write_csv(rows_for([256, 512]), tmp_path / "s.csv")
    out = plot(csv_path, tmp_path / "s.png")
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    svg = plot(csv_path, tmp_path / "s.svg")
    assert b"<svg" in svg.read_bytes()[:400]


def test_plot_of_empty_csv_fails(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(ValueError):
        plot(p, tmp_path / "x.png")
    with pytest.raises(ValueError):
        figure([])
