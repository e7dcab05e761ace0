import hashlib
import json
import shutil
import subprocess
import sys
import xml.etree.ElementTree as ET

import pytest

from synthfeeder.cli import TABLE_COLUMNS, TABLE_ROWS, PipelineConfig, main
from synthfeeder.corpus import corpus_dir
from synthfeeder.gan import TrainingLog
from synthfeeder.graph import validate_radial
from synthfeeder.ingest import load_feeder
from synthfeeder.validate import check_perfect

TINY_CFG = """\
# small network so the smoke runs stay quick
n = 2
n0 = 4
n1 = 3
n2 = 1
hidden1 = 16
hidden2 = 8
monitor_every = 5
monitor_samples = 2
"""


def _digest(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.iterdir())}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    shutil.copytree(corpus_dir(), root / "corpus")
    (root / "tiny.cfg").write_text(TINY_CFG)
    before = _digest(root / "corpus")
    out = str(root / "out")
    assert main(["ingest", str(root / "corpus"), "--out", out]) == 0
    assert main(["sample", "--dataset", f"{out}/dataset", "--count", "60", "--min-nodes", "20",
                 "--seed", "1", "--out", out]) == 0
    assert main(["train", "--config", str(root / "tiny.cfg"), "--dataset", f"{out}/sampled",
                 "--iterations", "10", "--seed", "1", "--out", out]) == 0
    return root, before


def test_ingest_outputs(work):
    root, _ = work
    out = root / "out"
    assert (out / "dataset").is_dir() and (out / "stats.txt").is_file()
    summary = dict(l.split("=") for l in (out / "corpus_summary.txt").read_text().split())
    assert int(summary["graphs"]) == 50


def test_ingest_prints_summary(tmp_path, capsys):
    assert main(["ingest", str(corpus_dir()), "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.startswith("ingested 50 graphs:")


def test_malformed_file_names_file_and_line(tmp_path, capsys):
    bad = tmp_path / "bad.feeder"
    bad.write_text("source s\ndevice d from=s to=x phase=abc length_m=ten normamps=200\n")
    assert main(["ingest", str(bad), "--out", str(tmp_path / "o")]) != 0
    assert f"{bad}:2:" in capsys.readouterr().err


def test_stats_fractions_sum_to_one(tmp_path):
    assert main(["stats", str(corpus_dir()), "--out", str(tmp_path)]) == 0
    summary = dict(l.split("=") for l in (tmp_path / "corpus_summary.txt").read_text().split())
    phase = sum(float(v) for k, v in summary.items() if k.startswith("phase."))
    degree = sum(float(v) for k, v in summary.items() if k.startswith("outdegree."))
    assert abs(phase - 1) <= 1e-9 and abs(degree - 1) <= 1e-9
    rows = (tmp_path / "feeder_stats.tsv").read_text().splitlines()
    assert len(rows) == 51


def test_train_smoke_writes_checkpoint_and_log(work):
    root, _ = work
    out = root / "out"
    assert (out / "checkpoint.npz").is_file()
    log, cfg = TrainingLog.read(out / "train_log.tsv")
    assert len(log.records) == 10 and cfg.n1 == 3 and cfg.seed == 1
    echo = PipelineConfig.from_text((out / "train_config.txt").read_text())
    assert echo.seed == 1 and echo.train.max_iterations == 10 and echo.train.hidden1 == 16
    assert json.loads((out / "monitor.json").read_text())["windows"]


def test_train_resume_extends_log(work, tmp_path):
    root, _ = work
    out = root / "out"
    shutil.copy(out / "train_log.tsv", tmp_path / "train_log.tsv")
    assert main(["train", "--dataset", str(out / "sampled"), "--resume", str(out / "checkpoint.npz"),
                 "--iterations", "12", "--seed", "1", "--out", str(tmp_path)]) == 0
    log, _ = TrainingLog.read(tmp_path / "train_log.tsv")
    assert [r.iteration for r in log.records] == list(range(12))


def test_generate_exports_feasible_feeders(work, tmp_path):
    root, _ = work
    ck = str(root / "out" / "checkpoint.npz")
    args = ["generate", "--checkpoint", ck, "--count", "5", "--m-range", "15:30", "--seed", "3",
            "--no-screen", "--opendss"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    rows = (tmp_path / "a" / "generate_report.tsv").read_text().splitlines()
    assert len(rows) == 6
    files = sorted((tmp_path / "a" / "generated").glob("*.feeder"))
    assert 1 <= len(files) <= 5
    for f in files:
        g = load_feeder(f)
        assert validate_radial(g) == [] and check_perfect(g)
        assert f.with_suffix(".dss").read_text().startswith("Clear")
        ET.parse(f.with_suffix(".svg"))
        assert f.read_bytes() == (tmp_path / "b" / "generated" / f.name).read_bytes()


def test_generate_with_screen_reports_reasons(work, tmp_path):
    root, _ = work
    out = root / "out"
    assert main(["generate", "--checkpoint", str(out / "checkpoint.npz"), "--count", "3", "--seed", "3",
                 "--stats", str(out / "stats.txt"), "--out", str(tmp_path)]) == 0
    rows = [r.split("\t") for r in (tmp_path / "generate_report.tsv").read_text().splitlines()[1:]]
    assert len(rows) == 3
    for r in rows:
        assert (r[7] == "1") == (r[10] == "")


def test_validate_command(work, tmp_path, capsys):
    root, _ = work
    files = sorted((root / "corpus").glob("*.feeder"))[:3]
    assert main(["validate", *map(str, files), "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "validate_report.tsv").read_text().splitlines()
    assert len(rows) == 4 and all(r.split("\t")[1] == "1" for r in rows[1:])
    screen = [r.split("\t")[4] for r in rows[1:]]
    # the desk-scale corpus is not calibrated to the default utility-scale ranges
    assert main(["validate", *map(str, files), "--strict", "--out", str(tmp_path)]) == (0 if all(
        x == "1" for x in screen) else 1)
    assert main(["validate", *map(str, files), "--strict", "--stats", str(root / "out" / "stats.txt"),
                 "--out", str(tmp_path)]) == 0
    missing = ["validate", *map(str, files), "--stats", str(tmp_path / "missing.txt"), "--out", str(tmp_path)]
    assert main(missing) == 2


def test_baseline_table_labels(work, tmp_path, capsys):
    root, _ = work
    assert main(["baseline", "--m", "20", "--trials", "10", "--seed", "2", "--checkpoint",
                 str(root / "out" / "checkpoint.npz"), "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    lines = text.splitlines()
    assert all(c in lines[0] for c in TABLE_COLUMNS)
    assert [l.split("  ")[0] for l in lines[1:]] == list(TABLE_ROWS)
    assert (tmp_path / "baseline.txt").read_text() == text


def test_seed_required(tmp_path, capsys):
    assert main(["baseline", "--trials", "2", "--out", str(tmp_path)]) == 2
    assert "seed" in capsys.readouterr().err


def test_plot_outputs(work, tmp_path, capsys):
    root, _ = work
    files = sorted((root / "corpus").glob("*.feeder"))[:2]
    assert main(["plot", *map(str, files), "--log", str(root / "out" / "train_log.tsv"),
                 "--out", str(tmp_path)]) == 0
    assert len(list((tmp_path / "plots").glob("*.svg"))) == 2
    assert capsys.readouterr().out.strip() == "wrote 3 plot(s)"
    ET.parse(tmp_path / "distance.svg")


def test_manifest_records_runs(work):
    root, _ = work
    runs = json.loads((root / "out" / "manifest.json").read_text())["runs"]
    assert [r["command"] for r in runs[:3]] == ["ingest", "sample", "train"]
    paths = {f["path"] for f in runs[2]["files"]}
    assert {"train_log.tsv", "checkpoint.npz"} <= paths
    for f in runs[0]["files"]:
        assert len(f["sha256"]) == 64


def test_inputs_not_mutated(work):
    root, before = work
    assert _digest(root / "corpus") == before


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "synthfeeder.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "synthfeeder" in res.stdout
