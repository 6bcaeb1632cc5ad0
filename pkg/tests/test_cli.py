import json

from kvprobe.cli import main

GEN = ["gen-trace", "--dim", "16", "--layers", "2", "--heads", "2",
       "--window-size", "16", "--windows", "6", "--decode-steps", "2",
       "--sinks", "4", "--chunk", "4", "--local", "8", "--seed", "5"]
RUN_GEOM = ["--chunk", "4", "--sinks", "4", "--local", "8", "--budget", "8"]


def gen(tmp_path, name="t.akvt", extra=()):
    path = tmp_path / name
    assert main(GEN + list(extra) + ["--out", str(path)]) == 0
    return path


def test_full_pipeline(tmp_path, capsys):
    trace = gen(tmp_path)
    act = tmp_path / "act.json"
    mean = tmp_path / "mean.json"
    assert main(["run", "--trace", str(trace), "--probe", "act",
                 "--report", str(act)] + RUN_GEOM) == 0
    assert main(["run", "--trace", str(trace), "--probe", "mean",
                 "--report", str(mean)] + RUN_GEOM) == 0
    out = tmp_path / "cmp.json"
    assert main(["compare", "--a", str(act), "--b", str(mean),
                 "--out", str(out)]) == 0
    diff = json.loads(out.read_text())
    assert diff["pairs"] == 1
    assert "delta_recall" in diff["overall"]


def test_identical_runs_write_identical_reports(tmp_path):
    trace = gen(tmp_path)
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    for path in (a, b):
        assert main(["run", "--trace", str(trace),
                     "--report", str(path)] + RUN_GEOM) == 0
    assert a.read_bytes() == b.read_bytes()


def test_report_omits_timing_but_manifest_carries_it(tmp_path):
    trace = gen(tmp_path)
    report = tmp_path / "r.json"
    manifest = tmp_path / "m.json"
    assert main(["run", "--trace", str(trace), "--report", str(report),
                 "--manifest", str(manifest)] + RUN_GEOM) == 0
    assert "elapsed" not in report.read_text()
    doc = json.loads(manifest.read_text())
    assert doc["elapsed_seconds"] >= 0
    assert doc["trace_sha256"] == json.loads(report.read_text())["trace_sha256"]


def test_records_and_csv_outputs(tmp_path):
    trace = gen(tmp_path)
    records = tmp_path / "steps.jsonl"
    csv = tmp_path / "r.csv"
    assert main(["run", "--trace", str(trace), "--report",
                 str(tmp_path / "r.json"), "--records", str(records),
                 "--csv", str(csv)] + RUN_GEOM) == 0
    lines = records.read_text().strip().split("\n")
    assert len(lines) == 6 + 2
    assert json.loads(lines[0])["stage"] == "pre-filling"
    assert csv.read_text().startswith("layer,metric,mean")


def test_malformed_trace_exits_2(tmp_path):
    bad = tmp_path / "junk.akvt"
    bad.write_bytes(b"this is not a trace")
    assert main(["run", "--trace", str(bad),
                 "--report", str(tmp_path / "r.json")]) == 2


def test_missing_file_exits_2(tmp_path):
    assert main(["run", "--trace", str(tmp_path / "absent.akvt"),
                 "--report", str(tmp_path / "r.json")]) == 2


def test_truncated_trace_exits_2(tmp_path):
    trace = gen(tmp_path)
    raw = trace.read_bytes()
    trace.write_bytes(raw[: len(raw) // 2])
    assert main(["run", "--trace", str(trace),
                 "--report", str(tmp_path / "r.json")] + RUN_GEOM) == 2


def test_bad_engine_config_exits_3(tmp_path):
    trace = gen(tmp_path)
    assert main(["run", "--trace", str(trace), "--budget", "7",
                 "--chunk", "4", "--report", str(tmp_path / "r.json")]) == 3


def test_bad_generator_spec_exits_3(tmp_path):
    assert main(GEN + ["--signal", "1.5",
                       "--out", str(tmp_path / "t.akvt")]) == 3


def test_comparing_unrelated_runs_exits_4(tmp_path):
    t1 = gen(tmp_path, "t1.akvt", extra=["--seed", "5"])
    t2 = gen(tmp_path, "t2.akvt", extra=["--seed", "6"])
    r1 = tmp_path / "r1.json"
    r2 = tmp_path / "r2.json"
    assert main(["run", "--trace", str(t1), "--report", str(r1)]
                + RUN_GEOM) == 0
    assert main(["run", "--trace", str(t2), "--report", str(r2)]
                + RUN_GEOM) == 0
    assert main(["compare", "--a", str(r1), "--b", str(r2),
                 "--out", str(tmp_path / "d.json")]) == 4


def test_compare_rejects_invalid_report_json(tmp_path):
    good = tmp_path / "good.json"
    trace = gen(tmp_path)
    assert main(["run", "--trace", str(trace), "--report", str(good)]
                + RUN_GEOM) == 0
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["compare", "--a", str(good), "--b", str(bad),
                 "--out", str(tmp_path / "d.json")]) == 2


def test_report_to_stdout_when_no_path(tmp_path, capsys):
    trace = gen(tmp_path)
    capsys.readouterr()  # drop the generator's status line
    assert main(["run", "--trace", str(trace)] + RUN_GEOM) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["version"] == 1


def test_gen_trace_without_planting(tmp_path):
    path = tmp_path / "plain.akvt"
    assert main(GEN[:1] + ["--planted", "0", "--out", str(path)]) == 0
    from kvprobe.tracefile import read_trace
    header, reader = read_trace(path)
    assert not header.has_ground_truth
    assert reader.ground_truth() is None
