import csv
import io

import numpy as np
import pytest

from drqp import net
from drqp.datagen import GenSpec, generate, label_bundle
from drqp.report import (WarmStartReport, WarmStartRow, comparison_table,
                         emit_report, multistep_table, prepare_data,
                         residual_history_csv, run_compare, run_eval,
                         warmstart_summary, warmstart_table)
from drqp.solvers import SolverConfig, step_size_cap


@pytest.fixture(scope="module")
def labeled_bundle():
    bundle = generate(GenSpec(family="qp_rhs", count=4, seed=11, n=10))
    bundle, _ = label_bundle(bundle)
    return bundle


class TestRunCompare:
    def test_row_per_instance(self, labeled_bundle):
        datas = prepare_data(labeled_bundle)
        rep = run_compare(datas, steps_list=(1, 2))
        assert len(rep.rows) == len(datas)
        assert set(rep.multistep) == {1, 2}
        assert all(r.dr_status == "converged" for r in rep.rows)

    def test_objectives_agree(self, labeled_bundle):
        rep = run_compare(prepare_data(labeled_bundle))
        for r in rep.rows:
            assert r.drgd_objective == pytest.approx(r.dr_objective, abs=1e-3)

    def test_multistep_column_matches_first(self, labeled_bundle):
        rep = run_compare(prepare_data(labeled_bundle), steps_list=(1, 5))
        assert rep.multistep[1] == [r.drgd_iterations for r in rep.rows]


class TestRunEval:
    def test_emulation_checkpoint_reduces_iterations(self, labeled_bundle):
        datas = prepare_data(labeled_bundle)
        params = net.emulation_params(datas[0], 0.5 * step_size_cap(datas[0]),
                                      L=4)
        rep = run_eval(datas, labeled_bundle.labels, params, SolverConfig())
        assert len(rep.rows) == len(datas)
        for r in rep.rows:
            assert not r.failed
            assert r.warm_iterations <= r.cold_iterations
            assert r.inference_time > 0

    def test_trained_free_l2_column(self, labeled_bundle):
        datas = prepare_data(labeled_bundle)
        params = net.init_params(2, 4, seed=0)
        rep = run_eval(datas, None, params, SolverConfig())
        assert all(r.l2_to_reference is None for r in rep.rows)

    def test_ratio_bounded_above_by_one(self, labeled_bundle):
        datas = prepare_data(labeled_bundle)
        params = net.init_params(2, 4, seed=0)
        rep = run_eval(datas, labeled_bundle.labels, params, SolverConfig())
        assert rep.iteration_ratio <= 1.0
        assert rep.iteration_ratio_per_instance <= 1.0

    def test_histories_recorded(self, labeled_bundle):
        datas = prepare_data(labeled_bundle, [0])
        params = net.init_params(1, 2, seed=0)
        rep = run_eval(datas, None, params, SolverConfig(),
                       record_history=True)
        cold, warm = rep.residual_histories[0]
        assert len(cold) > 0 and len(warm) > 0


class TestTables:
    def _fake_warmstart(self):
        rows = [WarmStartRow(instance=i, cold_iterations=100,
                             warm_iterations=60, cold_time=0.1, warm_time=0.05,
                             inference_time=0.001, objective=1.0, max_viol=0.0,
                             l2_to_reference=0.1, cold_status="converged",
                             warm_status="converged") for i in range(2)]
        return WarmStartReport(rows=rows,
                               residual_histories={0: ([1.0, 0.5], [0.5])})

    def test_markdown_matches_csv_data(self, labeled_bundle):
        rep = run_compare(prepare_data(labeled_bundle))
        parsed = list(csv.reader(io.StringIO(comparison_table(rep, "csv"))))
        md_lines = comparison_table(rep, "markdown").strip().splitlines()
        # markdown body rows carry the same cells as the CSV rows
        body = [[c.strip() for c in line.strip("|").split("|")]
                for line in md_lines[2:]]
        assert body == parsed[1:]

    def test_warmstart_ratio_value(self):
        rep = self._fake_warmstart()
        assert rep.iteration_ratio == pytest.approx(0.4)
        table = warmstart_summary(rep, "csv")
        assert "0.4" in table

    def test_residual_history_long_format(self):
        rep = self._fake_warmstart()
        rows = list(csv.reader(io.StringIO(residual_history_csv(rep))))
        assert rows[0] == ["instance_id", "start", "iter", "residual"]
        assert len(rows) == 4  # 2 cold + 1 warm + header

    def test_empty_report_header_only(self):
        rep = WarmStartReport(rows=[])
        text = warmstart_table(rep, "csv")
        assert len(text.strip().splitlines()) == 1

    def test_multistep_table_row_per_steps(self, labeled_bundle):
        rep = run_compare(prepare_data(labeled_bundle), steps_list=(1, 2, 5))
        lines = multistep_table(rep, "csv").strip().splitlines()
        assert len(lines) == 4

    def test_emit_report_writes_file(self, tmp_path):
        emit_report("a,b\n1,2\n", tmp_path / "out.csv")
        assert (tmp_path / "out.csv").read_text() == "a,b\n1,2\n"
