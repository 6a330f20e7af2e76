import json
import subprocess
import sys
from fractions import Fraction

import pytest

from birdsi.cli import main
from birdsi.groundtruth import Category, GroundTruthFile, ImageRef, hash_image
from birdsi.mockserver import OracleMode, serve
from birdsi.report import format_results, read_results, ResultsFileError, score_offline
from birdsi.runner import RunConfig, issue_query, run_benchmark
from birdsi.window import WindowSpec

TS = "2026-01-01T00:00:00+00:00"


@pytest.fixture
def gt_file(tree60, tmp_path):
    out = tmp_path / "gt1.txt"
    assert main(["gt", "compile", "--root", str(tree60), "--out", str(out)]) == 0
    return out


class TestGroundTruthCommands:
    def test_compile(self, gt_file, capsys):
        text = gt_file.read_text()
        assert text.startswith("BIRDSI-GT 1\nversion 1\ngmax 10\n")

    def test_compile_with_query_dir(self, tree60, tmp_path):
        qdir = tmp_path / "q"
        assert main(["gt", "compile", "--root", str(tree60), "--out", str(tmp_path / "g"),
                     "--query-dir", str(qdir), "--opaque"]) == 0
        assert len(list(qdir.iterdir())) == 60

    def test_validate_append(self, tree60, gt_file, tmp_path, capsys):
        (tree60 / "cat000" / "extra.jpg").write_bytes(b"extra")
        v2 = tmp_path / "gt2.txt"
        assert main(["gt", "compile", "--root", str(tree60), "--out", str(v2), "--previous", str(gt_file)]) == 0
        assert main(["gt", "validate", "--old", str(gt_file), "--new", str(v2)]) == 0
        assert capsys.readouterr().out.splitlines()[-1] == "PASS version 1 -> 2"

    def test_validate_removal(self, tree60, gt_file, tmp_path, capsys):
        victim = tree60 / "cat002" / "img0003.jpg"
        victim.unlink()
        v2 = tmp_path / "gt2.txt"
        # compile refuses the removal outright
        assert main(["gt", "compile", "--root", str(tree60), "--out", str(v2), "--previous", str(gt_file)]) == 1
        assert "cat002" in capsys.readouterr().err
        # a hand-made successor is caught by validate
        main(["gt", "compile", "--root", str(tree60), "--out", str(v2)])
        capsys.readouterr()
        text = v2.read_text().replace("version 1", "version 2", 1)
        v2.write_text(text)
        assert main(["gt", "validate", "--old", str(gt_file), "--new", str(v2)]) == 1
        out = capsys.readouterr().out
        assert out.startswith("FAIL") and "cat002" in out and "img0003.jpg" in out

    def test_missing_root(self, tmp_path):
        assert main(["gt", "compile", "--root", str(tmp_path / "nope"), "--out", str(tmp_path / "g")]) == 3

    def test_malformed_gt(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("garbage\n")
        assert main(["gt", "validate", "--old", str(bad), "--new", str(bad)]) == 1


class TestWindowTable:
    def test_default_csv(self, capsys):
        assert main(["window-table", "--format", "csv"]) == 0
        assert capsys.readouterr().out == (
            "G,W_mpeg,W=G,W=2*G,W(1,1),W(1,2),W(2,1)\n"
            "0,0,0,0,0,0,0\n"
            "1,4,1,2,2,2,4\n"
            "5,20,5,10,10,10,20\n"
            "10,40,10,20,19,20,38\n"
            "30,120,30,60,51,56,102\n"
            "49,196,49,98,74,86,148\n"
            "50,200,50,100,75,88,150\n"
            "51,200,51,102,76,89,152\n"
            "75,200,75,150,94,122,188\n"
            "100,200,100,200,100,150,200\n"
        )

    def test_small_gmax(self, capsys):
        assert main(["window-table", "--gmax", "10", "--g", "0,5,10", "--format", "csv"]) == 0
        # G=5: W(1,1) = 10 - 25/10 -> 8, W(1,2) = 20 - 225/20 -> 9, W(2,1) = 2 * 7.5 = 15
        assert capsys.readouterr().out.splitlines()[1:] == [
            "0,0,0,0,0,0,0",
            "5,20,5,10,8,9,15",
            "10,20,10,20,10,15,20",
        ]

    def test_text(self, capsys):
        assert main(["window-table"]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 11

    def test_out_of_range(self, capsys):
        assert main(["window-table", "--g", "101"]) == 2

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as err:
            main(["window-table", "--g", "x,y"])
        assert err.value.code == 2


def two_category_gt():
    refs = {n: ImageRef(hash_image(n.encode()), f"{n}.jpg") for n in "ABCDE"}
    gt = GroundTruthFile(1, (Category("pair", (refs["A"], refs["B"])),
                             Category("trio", (refs["C"], refs["D"], refs["E"]))))
    return gt, {n: r.link_id for n, r in refs.items()}


class TestScore:
    def test_ground_truth_verbatim(self, gt_file, tmp_path, capsys):
        from birdsi.groundtruth import load_ground_truth
        gt = load_ground_truth(gt_file)
        results = tmp_path / "r.txt"
        results.write_text(format_results({q: v.members for q, v in gt.vectors().items()}))
        assert main(["score", "--gt", str(gt_file), "--results", str(results), "--timestamp", TS]) == 0
        assert capsys.readouterr().out.startswith("S=0.000000  mean_response_ms=n/a  queries=60  failures=0")

    def test_empty_results(self, gt_file, tmp_path, capsys):
        results = tmp_path / "r.txt"
        results.write_text("")
        report_json = tmp_path / "r.json"
        assert main(["score", "--gt", str(gt_file), "--results", str(results), "--json", str(report_json)]) == 0
        data = json.loads(report_json.read_text())
        assert data["S_exact"] == "1" and data["failures"] == 60
        assert {q["outcome"] for q in data["queries"]} == {"MISSING"}

    def test_worked_example(self, tmp_path):
        gt, ids = two_category_gt()
        gt_path, results, out = tmp_path / "gt.txt", tmp_path / "r.txt", tmp_path / "r.json"
        gt.write(gt_path)
        ranked = [ids["C"], ids["A"], ids["D"], ids["B"], ids["E"]]
        results.write_text(format_results({ids["A"]: ranked}))
        assert main(["score", "--gt", str(gt_path), "--results", str(results), "--window", "fixed:5",
                     "--json", str(out), "--timestamp", TS]) == 0
        row = next(q for q in json.loads(out.read_text())["queries"] if q["query_id"] == ids["A"])
        assert (row["F"], row["mu"], row["R"], row["RR"]) == (2, 0, "6.000000", "3.000000")
        assert row["NRR_exact"] == "1/3" and row["NRR"] == "0.333333"

    def test_unknown_query(self, gt_file, tmp_path, capsys):
        results = tmp_path / "r.txt"
        results.write_text("query deadbeef\nx\n")
        assert main(["score", "--gt", str(gt_file), "--results", str(results)]) == 1
        assert "unknown" in capsys.readouterr().err

    def test_penalty_and_literal_flags(self, gt_file, tmp_path, capsys):
        results = tmp_path / "r.txt"
        results.write_text("")
        assert main(["score", "--gt", str(gt_file), "--results", str(results),
                     "--penalty", "multiplier:1.25", "--literal-nrr"]) == 0
        out = capsys.readouterr().out
        assert "penalty=multiplier:5/4" in out and "nrr=literal" in out

    def test_bad_window_flag(self, gt_file, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["score", "--gt", str(gt_file), "--results", str(gt_file), "--window", "wide"])
        assert err.value.code == 2


class TestResultsFile:
    def test_roundtrip(self):
        responses = {"q2": ["a", "b"], "q1": [], "q3": ["c"]}
        assert read_results(format_results(responses)) == responses

    @pytest.mark.parametrize("text", ["x\n", "query a\nb c\n", "query a\n\nquery a\n"])
    def test_malformed(self, text):
        with pytest.raises(ResultsFileError):
            read_results(text)

    def test_duplicate_ids_in_a_list(self):
        gt, ids = two_category_gt()
        with pytest.raises(ResultsFileError):
            score_offline(gt, {ids["A"]: [ids["A"], ids["A"]]}, WindowSpec.parse("fixed:5"))


class TestRun:
    def test_perfect_and_empty(self, gt_file, gt60, capsys):
        for mode, line in (("perfect", "S=0.000000"), ("empty", "S=1.000000")):
            with serve(gt60, OracleMode.parse(mode)) as server:
                assert main(["run", "--server", server.endpoint, "--gt", str(gt_file)]) == 0
            first = capsys.readouterr().out.splitlines()[0]
            assert first.startswith(line) and "mean_response_ms=" in first and "n/a" not in first

    def test_unreachable(self, gt_file, capsys):
        assert main(["run", "--server", "127.0.0.1:1", "--gt", str(gt_file), "--timeout", "1"]) == 3

    def test_timeout_env(self, gt_file, gt60, monkeypatch, tmp_path):
        monkeypatch.setenv("BIRDSI_TIMEOUT_MS", "2500")
        out = tmp_path / "r.json"
        with serve(gt60) as server:
            assert main(["run", "--server", server.endpoint, "--gt", str(gt_file), "--json", str(out)]) == 0
        assert json.loads(out.read_text())["run"]["config"]["timeout_s"] == "2.5"

    def test_tighter_window_forgives_less(self, gt_file, gt60, tmp_path, capsys):
        record = tmp_path / "rec.txt"
        with serve(gt60, OracleMode.noisy("0.5", 7)) as server:
            assert main(["run", "--server", server.endpoint, "--gt", str(gt_file),
                         "--window", "mpeg7", "--record", str(record)]) == 0
        scores = {}
        for window in ("mpeg7", "convex:1,2"):
            out = tmp_path / f"{window}.json"
            main(["score", "--gt", str(gt_file), "--results", str(record), "--window", window, "--json", str(out)])
            scores[window] = Fraction(json.loads(out.read_text())["S_exact"])
        assert scores["convex:1,2"] >= scores["mpeg7"] > 0

    def test_report_determinism(self, gt_file, gt60, tmp_path):
        with serve(gt60, OracleMode.noisy("0.25", 2)) as server:
            result = run_benchmark(RunConfig(server.endpoint), gt60)
        from birdsi.report import report_from_run
        a, b = report_from_run(result, TS), report_from_run(result, TS)
        assert a.to_text() == b.to_text() and a.to_json() == b.to_json()
        assert a.to_text().splitlines()[0].startswith("S=")


def test_mock_subcommand(gt_file):
    proc = subprocess.Popen(
        [sys.executable, "-m", "birdsi", "mock", "--gt", str(gt_file), "--mode", "reversed", "--bind", "127.0.0.1:0"],
        stdout=subprocess.PIPE, text=True,
    )
    try:
        line = proc.stdout.readline()
        endpoint = line.rsplit(" ", 1)[-1].strip()
        q = next(l.split()[1] for l in gt_file.read_text().splitlines() if l.startswith("member"))
        assert len(issue_query(endpoint, q, 3, 5).ranked) == 3
    finally:
        proc.terminate()
        proc.wait(5)
