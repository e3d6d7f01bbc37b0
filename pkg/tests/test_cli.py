"""CLI surface: subcommands, file formats, exit codes, reproducibility."""

import csv
import json
import os

import numpy as np
import pytest

from ipscale.cli import main


def run_cli(*args) -> int:
    return main(list(args))


def read_csv_dict(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_2x2_inputs(tmp_path, counts=(10, 20, 50, 20)):
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({
        "factors": [{"name": "row", "levels": 2}, {"name": "col", "levels": 2}],
        "order": 1}))
    cpath = tmp_path / "counts.csv"
    with open(cpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "count"])
        for (r, c), n in zip([(1, 1), (1, 2), (2, 1), (2, 2)], counts):
            w.writerow([r, c, n])
    return str(schema), str(cpath)


def files_equal(a, b) -> bool:
    return open(a, "rb").read() == open(b, "rb").read()


class TestFit:
    def test_independence_table(self, tmp_path):
        schema, counts = write_2x2_inputs(tmp_path)
        out = tmp_path / "out"
        code = run_cli("fit", "--counts", counts, "--schema", schema,
                       "--solver", "ips", "--eps-tol", "1e-10", "--out-dir", str(out))
        assert code == 0
        mu = [float(r["mu"]) for r in read_csv_dict(out / "mu.csv")]
        assert np.allclose(mu, [18.0, 12.0, 42.0, 28.0], atol=1e-6)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["schema"] == 1
        assert summary["termination"] == "tol_reached"
        assert "g_squared" in summary and "pearson_x2" in summary
        trace = read_csv_dict(out / "trace.csv")
        assert trace[0]["rel_gradient"] == "1"
        assert "est_error" not in trace[0]

    def test_seeded_runs_identical(self, tmp_path):
        schema, counts = write_2x2_inputs(tmp_path)
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            code = run_cli("fit", "--counts", counts, "--schema", schema,
                           "--solver", "a-ips", "--seed", "7", "--out-dir", str(out))
            assert code == 0
            outs.append(out)
        for name in ("beta.csv", "mu.csv", "trace.csv"):
            assert files_equal(outs[0] / name, outs[1] / name), name

    def test_zero_penalty_matches_plain_solver(self, tmp_path):
        schema, counts = write_2x2_inputs(tmp_path)
        o1, o2 = tmp_path / "p", tmp_path / "l"
        assert run_cli("fit", "--counts", counts, "--schema", schema,
                       "--solver", "ips", "--out-dir", str(o1)) == 0
        assert run_cli("fit", "--counts", counts, "--schema", schema,
                       "--solver", "l1-ips", "--lambda", "0", "--out-dir", str(o2)) == 0
        for name in ("beta.csv", "mu.csv", "trace.csv"):
            assert files_equal(o1 / name, o2 / name), name

    def test_malformed_counts_reports_line(self, tmp_path, capsys):
        schema, counts = write_2x2_inputs(tmp_path)
        bad = tmp_path / "bad.csv"
        bad.write_text("row,col,count\n1,1,10\n1,x,3\n")
        code = run_cli("fit", "--counts", str(bad), "--schema", schema,
                       "--out-dir", str(tmp_path / "o"))
        assert code == 1
        assert "bad.csv:3" in capsys.readouterr().err

    def test_iteration_cap_gives_exit_3(self, tmp_path):
        schema, counts = write_2x2_inputs(tmp_path)
        code = run_cli("fit", "--counts", counts, "--schema", schema,
                       "--solver", "ips", "--eps-tol", "1e-14", "--max-iters", "2",
                       "--out-dir", str(tmp_path / "o"))
        assert code == 3

    def test_triplet_design_with_offset(self, tmp_path):
        dpath = tmp_path / "design.csv"
        with open(dpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "value"])
            for i in range(4):
                w.writerow([i, 0, 1])
            w.writerow([1, 1, 1])
            w.writerow([2, 1, 1])
        npath = tmp_path / "n.csv"
        with open(npath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "count"])
            for i, v in enumerate([3.0, 0.0, 5.0, 2.0]):
                w.writerow([i, v])
        qpath = tmp_path / "q.csv"
        with open(qpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "offset"])
            for i, v in enumerate([1.0, 0.0, 1.0, 1.0]):
                w.writerow([i, v])
        out = tmp_path / "o"
        code = run_cli("fit", "--design", str(dpath), "--counts-vec", str(npath),
                       "--offset", str(qpath), "--eps-tol", "1e-10", "--out-dir", str(out))
        assert code == 0
        mu = [float(r["mu"]) for r in read_csv_dict(out / "mu.csv")]
        assert len(mu) == 4
        assert mu[1] == 0.0  # dropped zero-offset row re-expanded as zero

    def test_missing_inputs_rejected(self, tmp_path):
        assert run_cli("fit", "--out-dir", str(tmp_path)) == 1

    def test_unknown_flag_rejected(self, tmp_path, capsys):
        schema, counts = write_2x2_inputs(tmp_path)
        assert run_cli("fit", "--counts", counts, "--schema", schema, "--bogus", "1") == 1


class TestRake:
    def write_margins(self, tmp_path, rows, cols):
        rpath = tmp_path / "rows.csv"
        with open(rpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "target"])
            for lev, t in enumerate(rows, start=1):
                w.writerow([lev, t])
        cpath = tmp_path / "cols.csv"
        with open(cpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["col", "target"])
            for lev, t in enumerate(cols, start=1):
                w.writerow([lev, t])
        return str(rpath), str(cpath)

    def write_seed(self, tmp_path, values):
        spath = tmp_path / "seed.csv"
        with open(spath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "value"])
            for (r, c), v in zip([(1, 1), (1, 2), (2, 1), (2, 2)], values):
                w.writerow([r, c, v])
        return str(spath)

    def test_uniform_seed_gives_independence_table(self, tmp_path):
        schema, _ = write_2x2_inputs(tmp_path)
        seed = self.write_seed(tmp_path, [1, 1, 1, 1])
        rows, cols = self.write_margins(tmp_path, [3, 1], [2, 2])
        out = tmp_path / "o"
        code = run_cli("rake", "--schema", schema, "--seed-table", seed,
                       "--margin", rows, "--margin", cols, "--out-dir", str(out))
        assert code == 0
        adj = [float(r["value"]) for r in read_csv_dict(out / "adjusted.csv")]
        assert np.allclose(adj, [1.5, 1.5, 0.5, 0.5], atol=1e-10)

    def test_seed_margins_are_fixed_point(self, tmp_path):
        schema, _ = write_2x2_inputs(tmp_path)
        table = [4.0, 6.0, 2.0, 8.0]
        seed = self.write_seed(tmp_path, table)
        rows, cols = self.write_margins(tmp_path, [10, 10], [6, 14])
        out = tmp_path / "o"
        code = run_cli("rake", "--schema", schema, "--seed-table", seed,
                       "--margin", rows, "--margin", cols, "--out-dir", str(out))
        assert code == 0
        adj = [float(r["value"]) for r in read_csv_dict(out / "adjusted.csv")]
        assert np.allclose(adj, table, rtol=1e-12)

    def test_inconsistent_totals_exit_3(self, tmp_path, capsys):
        schema, _ = write_2x2_inputs(tmp_path)
        seed = self.write_seed(tmp_path, [1, 1, 1, 1])
        rows, cols = self.write_margins(tmp_path, [3, 1], [2, 3])  # totals 4 vs 5
        code = run_cli("rake", "--schema", schema, "--seed-table", seed,
                       "--margin", rows, "--margin", cols,
                       "--max-iters", "2000", "--out-dir", str(tmp_path / "o"))
        assert code == 3
        assert "residual" in capsys.readouterr().err

    def test_structural_zero_seed_cells_stay_zero(self, tmp_path):
        schema, _ = write_2x2_inputs(tmp_path)
        seed = self.write_seed(tmp_path, [1, 1, 1, 0])
        rows, cols = self.write_margins(tmp_path, [3, 1], [3, 1])
        out = tmp_path / "o"
        code = run_cli("rake", "--schema", schema, "--seed-table", seed,
                       "--margin", rows, "--margin", cols, "--out-dir", str(out))
        assert code == 0
        adj = [float(r["value"]) for r in read_csv_dict(out / "adjusted.csv")]
        assert adj[3] == 0.0

    def test_margin_wiped_out_by_zero_structure_exits_3(self, tmp_path, capsys):
        schema, _ = write_2x2_inputs(tmp_path)
        seed = self.write_seed(tmp_path, [1, 1, 0, 0])  # row 2 structurally zero
        rows, cols = self.write_margins(tmp_path, [3, 1], [2, 2])
        code = run_cli("rake", "--schema", schema, "--seed-table", seed,
                       "--margin", rows, "--margin", cols,
                       "--out-dir", str(tmp_path / "o"))
        assert code == 3
        assert "zero structure" in capsys.readouterr().err

    def test_missing_margin_cell_rejected(self, tmp_path):
        schema, _ = write_2x2_inputs(tmp_path)
        seed = self.write_seed(tmp_path, [1, 1, 1, 1])
        rpath = tmp_path / "rows.csv"
        rpath.write_text("row,target\n1,3\n")  # level 2 missing
        cpath = tmp_path / "cols.csv"
        cpath.write_text("col,target\n1,2\n2,2\n")
        code = run_cli("rake", "--schema", schema, "--seed-table", seed,
                       "--margin", str(rpath), "--margin", str(cpath),
                       "--out-dir", str(tmp_path / "o"))
        assert code == 1


class TestPath:
    def test_path_outputs(self, tmp_path):
        schema, counts = write_2x2_inputs(tmp_path)
        out = tmp_path / "o"
        code = run_cli("path", "--counts", counts, "--schema", schema,
                       "--grid-size", "10", "--out-dir", str(out))
        assert code == 0
        rows = read_csv_dict(out / "path.csv")
        assert len(rows) == 10
        assert [r["lambda"] for r in rows] == sorted(
            (r["lambda"] for r in rows), key=float, reverse=True)
        assert int(rows[0]["support_size"]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["schema"] == 1

    def test_small_penalty_deviance_matches_fit(self, tmp_path):
        schema, counts = write_2x2_inputs(tmp_path)
        o1, o2 = tmp_path / "f", tmp_path / "p"
        assert run_cli("fit", "--counts", counts, "--schema", schema,
                       "--solver", "ips", "--eps-tol", "1e-10", "--out-dir", str(o1)) == 0
        assert run_cli("path", "--counts", counts, "--schema", schema,
                       "--grid-size", "8", "--min-ratio", "1e-8",
                       "--eps-tol", "1e-10", "--out-dir", str(o2)) == 0
        fit_summary = json.loads((o1 / "summary.json").read_text())
        path_rows = read_csv_dict(o2 / "path.csv")
        assert float(path_rows[-1]["deviance"]) == pytest.approx(
            fit_summary["g_squared"], abs=1e-6)


class TestBenchAndGen:
    def test_bench_writes_roster_traces(self, tmp_path):
        out = tmp_path / "b"
        code = run_cli("bench", "nonneg-small", "--scale", "0.15",
                       "--replications", "2", "--roster", "gis,q-ips",
                       "--seed", "3", "--out-dir", str(out))
        assert code == 0
        names = sorted(os.listdir(out))
        assert "trace_gis.csv" in names and "trace_q_ips.csv" in names
        assert "summary.csv" in names
        rows = read_csv_dict(out / "trace_gis.csv")
        assert float(rows[0]["rel_grad"]) == 1.0
        assert "est_err" in rows[0]

    def test_bench_deterministic(self, tmp_path):
        outs = []
        for tag in ("x", "y"):
            out = tmp_path / tag
            assert run_cli("bench", "nonneg-small", "--scale", "0.15",
                           "--replications", "2", "--roster", "gis",
                           "--seed", "3", "--out-dir", str(out)) == 0
            outs.append(out)
        assert files_equal(outs[0] / "trace_gis.csv", outs[1] / "trace_gis.csv")
        assert files_equal(outs[0] / "summary.csv", outs[1] / "summary.csv")

    def test_unknown_scenario_lists_names(self, tmp_path, capsys):
        code = run_cli("bench", "nope", "--out-dir", str(tmp_path))
        assert code == 1
        err = capsys.readouterr().err
        assert "table-moderate" in err

    def test_gen_deterministic(self, tmp_path):
        outs = []
        for tag in ("x", "y"):
            out = tmp_path / tag
            assert run_cli("gen", "general", "--n", "60", "--p", "6",
                           "--seed", "1", "--out-dir", str(out)) == 0
            outs.append(out)
        for name in sorted(os.listdir(outs[0])):
            assert files_equal(outs[0] / name, outs[1] / name), name

    def test_gen_writes_instance_files(self, tmp_path):
        out = tmp_path / "g"
        assert run_cli("gen", "table-moderate", "--scale", "0.2", "--seed", "2",
                       "--out-dir", str(out)) == 0
        names = sorted(os.listdir(out))
        assert any(n.endswith("_design.csv") for n in names)
        assert any(n.endswith("_counts.csv") for n in names)
        assert any(n.endswith("_beta_true.csv") for n in names)
