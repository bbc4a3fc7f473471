import csv
import json

import pytest

from fawcon.cli import main
from fawcon.stream import read_labels


def run(argv):
    return main(argv)


@pytest.fixture
def rooms_manifest(tmp_path):
    out = tmp_path / "scene"
    code = run(
        ["gen", "--kind", "rooms", "--out", str(out), "--seed", "3", "--frames", "4",
         "--side", "0.8", "--height", "0.5", "--spacing", "0.06"]
    )
    assert code == 0
    return out / "manifest.txt"


def test_gen_writes_scene(tmp_path):
    out = tmp_path / "scene"
    assert run(["gen", "--kind", "planes", "--out", str(out), "--seed", "1",
                "--side", "0.4", "--spacing", "0.04", "--frames", "2"]) == 0
    assert (out / "manifest.txt").exists()
    assert (out / "scene.json").exists()
    meta = json.loads((out / "scene.json").read_text())
    assert meta["kind"] == "planes"
    frames = [p for p in out.iterdir() if p.suffix == ".fawf"]
    assert len(frames) == 2


def test_gen_deterministic(tmp_path):
    datasets = []
    for run_idx in range(2):
        out = tmp_path / f"s{run_idx}"
        assert run(["gen", "--kind", "cylinder", "--out", str(out), "--seed", "5",
                    "--radius", "0.3", "--length", "0.4", "--spacing", "0.04"]) == 0
        datasets.append(b"".join(sorted(p.read_bytes() for p in out.iterdir())))
    assert datasets[0] == datasets[1]


def test_replay_empty_manifest(tmp_path):
    man = tmp_path / "manifest.txt"
    man.write_text("# nothing here\n")
    out = tmp_path / "out"
    assert run(["replay", str(man), "--out", str(out)]) == 0
    assert read_labels(out / "labels.txt") == []
    assert (out / "report.jsonl").read_text() == ""


def test_replay_writes_reports_and_labels(rooms_manifest, tmp_path):
    out = tmp_path / "replay"
    assert run(["replay", str(rooms_manifest), "--out", str(out)]) == 0
    reports = [json.loads(l) for l in (out / "report.jsonl").read_text().splitlines()]
    assert len(reports) == 4
    assert [r["frame"] for r in reports] == sorted(r["frame"] for r in reports)
    assert all(r["inserted"] + r["merged"] > 0 for r in reports)
    assert all(r["mean_accuracy"] is not None for r in reports)
    labels = read_labels(out / "labels.txt")
    assert len(labels) == reports[-1]["points_total"]


def test_replay_deterministic_byte_identical(rooms_manifest, tmp_path):
    blobs = []
    for idx in range(2):
        out = tmp_path / f"r{idx}"
        assert run(["replay", str(rooms_manifest), "--out", str(out), "--threads", "1"]) == 0
        blobs.append((out / "labels.txt").read_bytes())
    assert blobs[0] == blobs[1]


def test_replay_threads_same_labels(rooms_manifest, tmp_path):
    out1 = tmp_path / "t1"
    out4 = tmp_path / "t4"
    assert run(["replay", str(rooms_manifest), "--out", str(out1), "--threads", "1"]) == 0
    assert run(["replay", str(rooms_manifest), "--out", str(out4), "--threads", "4"]) == 0
    assert (out1 / "labels.txt").read_bytes() == (out4 / "labels.txt").read_bytes()


def test_bench_csv(rooms_manifest, tmp_path, capsys):
    out = tmp_path / "bench"
    assert run(["bench", str(rooms_manifest), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "aggregate_fps=" in printed
    with open(out / "bench.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 4
    for row in rows:
        assert float(row["fps"]) > 0
        for col in ("insert_ms", "rebuild_ms", "conv_ms"):
            assert float(row[col]) >= 0.0


def test_compare_csv_shape(tmp_path):
    scene_dir = tmp_path / "planes"
    assert run(["gen", "--kind", "planes", "--out", str(scene_dir), "--seed", "2",
                "--side", "0.4", "--spacing", "0.04", "--gap", "0.2", "--frames", "2"]) == 0
    out = tmp_path / "cmp"
    assert run(["compare-neighborhood", str(scene_dir / "manifest.txt"),
                "--out", str(out), "--rings", "1,2"]) == 0
    with open(out / "compare.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["n", "mode", "accuracy"]
    assert len(rows) - 1 == 4  # |n_range| x 2
    modes = {(r[0], r[1]) for r in rows[1:]}
    assert modes == {("1", "octree"), ("1", "euclidean"), ("2", "octree"), ("2", "euclidean")}


def test_compare_requires_labels(tmp_path):
    scene_dir = tmp_path / "cyl"
    assert run(["gen", "--kind", "cylinder", "--out", str(scene_dir), "--seed", "1",
                "--radius", "0.3", "--length", "0.3", "--spacing", "0.05"]) == 0
    out = tmp_path / "cmp"
    code = run(["compare-neighborhood", str(scene_dir / "manifest.txt"),
                "--out", str(out), "--rings", "1"])
    assert code == 1  # usage error


def test_usage_error_exit_code(tmp_path):
    assert run(["replay"]) == 1  # missing manifest and --out
    assert run(["frobnicate"]) == 1


def test_data_error_exit_code(tmp_path):
    man = tmp_path / "manifest.txt"
    bad = tmp_path / "bad.fawf"
    bad.write_text("FAWF1 1 2 0\n0.0 zork 0.0 1.0 2.0\n")
    man.write_text("bad.fawf\n")
    out = tmp_path / "out"
    assert run(["replay", str(man), "--out", str(out)]) == 2


def test_missing_manifest_is_data_error(tmp_path):
    out = tmp_path / "out"
    code = run(["replay", str(tmp_path / "nope.txt"), "--out", str(out)])
    assert code == 2
