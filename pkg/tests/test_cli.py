import csv
import json

import pytest

from centerdepth.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_codec_table_lid(tmp_path):
    out = tmp_path / "lid.csv"
    assert run("codec-table", "--codec", "lid", "--out", out) == 0
    rows = read_csv(out)
    assert len(rows) == 80
    assert float(rows[0]["width"]) == pytest.approx(0.0277778, abs=1e-7)
    widths = [float(r["width"]) for r in rows]
    assert all(b > a for a, b in zip(widths, widths[1:]))


def test_codec_table_sid_five_meters(tmp_path):
    out = tmp_path / "sid.csv"
    assert run("codec-table", "--codec", "sid", "--out", out) == 0
    rows = read_csv(out)
    hit = [int(r["index"]) for r in rows if float(r["lo"]) <= 5 < float(r["hi"])]
    assert hit == [28]


def test_codec_table_single_bin(tmp_path):
    out = tmp_path / "one.csv"
    assert run("codec-table", "--codec", "lid", "--bins", 1, "--out", out) == 0
    rows = read_csv(out)
    assert len(rows) == 1
    assert (float(rows[0]["lo"]), float(rows[0]["hi"])) == (1.0, 91.0)


def test_codec_table_depjoint(tmp_path, capsys):
    assert run("codec-table", "--codec", "depjoint") == 0
    assert "42" in capsys.readouterr().out


def test_invalid_params_exit_2(tmp_path):
    assert run("codec-table", "--codec", "lid", "--d-min", 5, "--d-max", 5) == 2
    assert run("codec-table", "--codec", "depjoint", "--alpha", 0.2, "--beta", 0.5) == 2
    assert run("depth-hist", "--label-dir", tmp_path, "--bin-width", 0) == 2


def test_codec_roundtrip(tmp_path):
    out = tmp_path / "rt.csv"
    assert run("codec-roundtrip", "--codec", "lid", "--n-samples", 500, "--out", out) == 0
    rows = read_csv(out)
    assert len(rows) == 500
    assert {"sid_err_median", "sid_err_residual"} <= set(rows[0])
    for r in rows:
        assert float(r["lid_err_residual"]) < 1e-9
        assert float(r["lid_err_median"]) <= float(r["lid_half_width"]) + 1e-12


def test_codec_roundtrip_five_meters(tmp_path):
    # the sample grid is inclusive, so 91 samples hit every integer depth
    out = tmp_path / "rt.csv"
    assert run("codec-roundtrip", "--codec", "lid", "--n-samples", 91, "--out", out) == 0
    row = next(r for r in read_csv(out) if float(r["depth"]) == 5.0)
    assert float(row["lid_bin"]) == 16
    assert float(row["lid_err_median"]) <= (16 + 1) / 36 / 2


def test_synth_and_depth_hist(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("synth", "--out-dir", a, "--seed", 3, "--frames", 5) == 0
    assert run("synth", "--out-dir", b, "--seed", 3, "--frames", 5, "--jobs", 2) == 0
    names = sorted(p.name for p in (a / "label_2").iterdir())
    assert len(names) == 5
    for n in names:
        assert (a / "label_2" / n).read_text() == (b / "label_2" / n).read_text()
    out = tmp_path / "hist.csv"
    assert run("depth-hist", "--label-dir", a / "label_2", "--bin-width", 10, "--out", out) == 0
    rows = read_csv(out)
    total = sum(int(r["count"]) for r in rows)
    n_labels = sum(len((a / "label_2" / n).read_text().splitlines()) for n in names)
    assert total == n_labels


def test_depth_hist_counts(tmp_path):
    d = tmp_path / "labels"
    d.mkdir()
    line = "Car 0.00 0 0.00 10.00 10.00 50.00 50.00 1.50 1.60 4.00 0.00 1.60 {z} 0.00\n"
    (d / "000000.txt").write_text(line.format(z="5.00") + line.format(z="12.00"))
    (d / "000001.txt").write_text(line.format(z="14.00"))
    out = tmp_path / "h.csv"
    assert run("depth-hist", "--label-dir", d, "--bin-width", 10, "--out", out) == 0
    assert [(float(r["lo"]), int(r["count"])) for r in read_csv(out)] == [(0.0, 1), (10.0, 2)]
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run("depth-hist", "--label-dir", empty, "--bin-width", 10, "--out", out) == 0
    assert read_csv(out) == []


@pytest.fixture
def dataset(tmp_path):
    root = tmp_path / "data"
    assert run("synth", "--out-dir", root, "--seed", 8, "--frames", 6, "--pred-dir", tmp_path / "noisy",
               "--center-sigma", 3, "--depth-sigma", 0.05, "--yaw-sigma", 0.1, "--fp-rate", 0.3) == 0
    return root


def test_encode_decode_eval_roundtrip(tmp_path, dataset):
    heads, preds, report = tmp_path / "heads", tmp_path / "preds", tmp_path / "report.json"
    common = ["--codec", "lid"]
    assert run("encode", "--label-dir", dataset / "label_2", "--calib-dir", dataset / "calib",
               "--out-dir", heads, "--gamma", 0.4, *common) == 0
    assert run("decode", "--heads", heads, "--calib-dir", dataset / "calib", "--out-dir", preds,
               "--decimals", 6, *common) == 0
    assert run("eval", "--gt-dir", dataset / "label_2", "--pred-dir", preds, "--out", report) == 0
    ap = json.loads(report.read_text())["ap"]
    assert all(v == 1.0 for m in ap.values() for v in m.values())


def test_eval_noisy_and_pr_csv(tmp_path, dataset, capsys):
    out = tmp_path / "pr.csv"
    assert run("eval", "--gt-dir", dataset / "label_2", "--pred-dir", tmp_path / "noisy",
               "--metric", "bev", "--iou", 0.5, "--pr-csv", out) == 0
    assert "moderate" in capsys.readouterr().out
    assert read_csv(out)


def test_eval_empty_predictions(tmp_path, dataset):
    empty = tmp_path / "none"
    empty.mkdir()
    report = tmp_path / "r.json"
    assert run("eval", "--gt-dir", dataset / "label_2", "--pred-dir", empty, "--out", report) == 0
    ap = json.loads(report.read_text())["ap"]
    assert all(v == 0.0 for m in ap.values() for v in m.values())


def test_eval_mismatched_frames(tmp_path, dataset, capsys):
    preds = tmp_path / "partial"
    preds.mkdir()
    first = sorted((dataset / "label_2").iterdir())[0]
    (preds / first.name).write_text("")
    assert run("eval", "--gt-dir", dataset / "label_2", "--pred-dir", preds) == 2
    assert "000001" in capsys.readouterr().err


def test_decode_malformed_json(tmp_path, dataset):
    bad = tmp_path / "000000.json"
    bad.write_text("[1, 2")
    assert run("decode", "--heads", bad, "--calib-dir", dataset / "calib", "--out-dir", tmp_path / "o") == 2
    bad.write_text(json.dumps({"schema_version": 1}))
    assert run("decode", "--heads", bad, "--calib-dir", dataset / "calib", "--out-dir", tmp_path / "o") == 2


def test_decode_without_offset_lowers_3d(tmp_path, dataset):
    heads, preds, report = tmp_path / "heads", tmp_path / "preds", tmp_path / "r.json"
    assert run("encode", "--label-dir", dataset / "label_2", "--calib-dir", dataset / "calib",
               "--out-dir", heads, "--codec", "eigen") == 0
    assert run("decode", "--heads", heads, "--calib-dir", dataset / "calib", "--out-dir", preds,
               "--codec", "eigen", "--no-offset3d", "--decimals", 6) == 0
    assert run("eval", "--gt-dir", dataset / "label_2", "--pred-dir", preds, "--out", report) == 0
    ap = json.loads(report.read_text())["ap"]
    assert ap["2d"]["moderate"] == 1.0
    assert ap["3d"]["moderate"] < 1.0


def test_missing_directory_exit_2(tmp_path):
    assert run("eval", "--gt-dir", tmp_path / "nope", "--pred-dir", tmp_path) == 2
