import json

import pytest

from obbmine import io
from obbmine.cli import main

_CONFIG = """\
[dataset]
n_scenes = 4
width = 192
height = 192
n_categories = 2
density = 8.0
distractor_rate = 1.5
difficulty_coupling = 0.6

[teacher]
lam = 0.2
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """One generated + sampled + fitted workspace shared by the tests."""
    root = tmp_path_factory.mktemp("cliwork")
    cfg = root / "cfg.toml"
    cfg.write_text(_CONFIG)
    assert main(["gen", "--config", str(cfg), "--seed", "7",
                 "--out", str(root / "data")]) == 0
    assert main(["sample", "--in", str(root / "data"), "--ratio", "0.2",
                 "--seed", "7", "--out", str(root / "sparse")]) == 0
    assert main(["fit-entropy", "--in", str(root / "sparse"),
                 "--out", str(root / "model.json")]) == 0
    return root


def mine_args(work, out, *extra):
    return ["mine", "--in", str(work / "sparse"),
            "--entropy", str(work / "model.json"),
            "--config", str(work / "cfg.toml"),
            "--epochs", "3", "--seed", "42", "--out", str(out), *extra]


def test_gen_writes_manifest_and_rasters(work):
    blob = json.loads((work / "data" / "annotations.json").read_text())
    assert len(blob["scenes"]) == 4
    pgms = sorted((work / "data" / "scenes").glob("*.pgm"))
    assert [p.stem for p in pgms] == [s["image_id"] for s in blob["scenes"]]


def test_sample_prints_box_ratio(work, capsys):
    assert main(["sample", "--in", str(work / "data"), "--ratio", "0.5",
                 "--seed", "1", "--out", str(work / "half")]) == 0
    out = capsys.readouterr().out
    assert "Box Ratio: 0." in out
    assert (work / "half" / "scenes").exists()


def test_fit_entropy_outputs_model_and_histogram(work):
    blob = json.loads((work / "model.json").read_text())
    assert "records" in blob or blob  # model payload exists
    hist = work / "model_histogram.csv"
    rows = io.read_csv(hist, io.HISTOGRAM_HEADER)
    assert len(rows) % 16 == 0 and rows


def test_mine_creates_complete_run_dir(work, tmp_path):
    out = tmp_path / "run"
    assert main(mine_args(work, out)) == 0
    names = {p.name for p in out.iterdir()}
    assert {"config.toml", "metrics.csv", "loss.csv", "tracker.json",
            "report.svg", "summary.csv"} <= names
    rows = io.read_csv(out / "metrics.csv", io.METRICS_HEADER)
    assert {int(r[0]) for r in rows} == {1, 2, 3}
    assert "[run]" in (out / "config.toml").read_text()


def test_mine_reruns_and_threads_byte_identical(work, tmp_path):
    outs = []
    for name, extra in (("r1", ()), ("r2", ()), ("r3", ("--threads", "2"))):
        out = tmp_path / name
        assert main(mine_args(work, out, *extra)) == 0
        outs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outs[0] == outs[1]
    assert outs[0] == outs[2]


def test_mine_epochs_zero_initializes_run(work, tmp_path, capsys):
    out = tmp_path / "run0"
    args = mine_args(work, out)
    args[args.index("--epochs") + 1] = "0"
    assert main(args) == 0
    assert "epochs=0" in capsys.readouterr().out
    assert (out / "metrics.csv").read_text() == io.METRICS_HEADER + "\n"
    assert "no epochs logged" in (out / "report.svg").read_text()


def test_mine_literal_fusion_flag_lands_in_snapshot(work, tmp_path):
    out = tmp_path / "lit"
    assert main(mine_args(work, out, "--literal-fusion")) == 0
    assert "literal_fusion = true" in (out / "config.toml").read_text()


def test_mine_baseline_needs_no_entropy(work, tmp_path):
    out = tmp_path / "base"
    args = ["mine", "--in", str(work / "sparse"), "--epochs", "2",
            "--seed", "42", "--out", str(out), "--baseline"]
    assert main(args) == 0
    rows = io.read_csv(out / "metrics.csv", io.METRICS_HEADER)
    assert all(int(r[5]) == 0 for r in rows)  # nothing frozen


def test_mine_no_egpf_needs_no_entropy(work, tmp_path):
    out = tmp_path / "noegpf"
    args = ["mine", "--in", str(work / "sparse"), "--epochs", "2",
            "--seed", "42", "--out", str(out), "--no-egpf"]
    assert main(args) == 0


def test_mine_without_entropy_is_usage_error(work, tmp_path, capsys):
    args = ["mine", "--in", str(work / "sparse"), "--epochs", "2",
            "--seed", "42", "--out", str(tmp_path / "x")]
    assert main(args) == 1
    assert "--entropy" in capsys.readouterr().err


def test_eval_prints_final_epoch_summary(work, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(mine_args(work, out)) == 0
    capsys.readouterr()
    assert main(["eval", "--run", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.startswith("epoch 3")
    assert "all" in text and "box_ratio" in text


def test_report_rewrites_svg_and_summary(work, tmp_path):
    out = tmp_path / "run"
    assert main(mine_args(work, out)) == 0
    svg_before = (out / "report.svg").read_bytes()
    (out / "report.svg").unlink()
    assert main(["report", "--run", str(out)]) == 0
    assert (out / "report.svg").read_bytes() == svg_before


@pytest.mark.parametrize("argv", [
    ["definitely-not-a-command"],
    [],
    ["mine", "--in", "x", "--epochs", "2", "--seed", "1"],  # missing --out
    ["gen", "--seed", "1", "--out", "x", "--frobnicate"],
])
def test_bad_flags_exit_1(argv, capsys):
    assert main(argv) == 1
    capsys.readouterr()


def test_bad_ratio_exits_1(work, tmp_path, capsys):
    for ratio in ("0", "1.5"):
        assert main(["sample", "--in", str(work / "data"), "--ratio", ratio,
                     "--seed", "1", "--out", str(tmp_path / "s")]) == 1
    capsys.readouterr()


def test_bad_bins_exits_1(work, tmp_path, capsys):
    assert main(["fit-entropy", "--in", str(work / "sparse"), "--bins", "1",
                 "--out", str(tmp_path / "m.json")]) == 1
    capsys.readouterr()


def test_missing_dataset_exits_2(tmp_path, capsys):
    assert main(["sample", "--in", str(tmp_path / "ghost"), "--ratio", "0.5",
                 "--seed", "1", "--out", str(tmp_path / "s")]) == 2
    capsys.readouterr()


def test_corrupt_manifest_exits_2(work, tmp_path, capsys):
    bad = tmp_path / "bad"
    (bad / "scenes").mkdir(parents=True)
    (bad / "annotations.json").write_text("{not json")
    assert main(["sample", "--in", str(bad), "--ratio", "0.5", "--seed", "1",
                 "--out", str(tmp_path / "s")]) == 2
    assert "annotations.json" in capsys.readouterr().err


def test_corrupt_model_exits_2(work, tmp_path, capsys):
    bad = tmp_path / "model.json"
    bad.write_text('{"bins": "many"}')
    args = ["mine", "--in", str(work / "sparse"), "--entropy", str(bad),
            "--epochs", "1", "--seed", "1", "--out", str(tmp_path / "r")]
    assert main(args) == 2
    capsys.readouterr()


def test_eval_without_run_exits_2(tmp_path, capsys):
    assert main(["eval", "--run", str(tmp_path / "nope")]) == 2
    capsys.readouterr()


def test_bad_config_key_exits_2(work, tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[mining]\nscore_threshold = 0.7\n")
    assert main(["gen", "--config", str(cfg), "--seed", "1",
                 "--out", str(tmp_path / "d")]) == 2
    assert "score_threshold" in capsys.readouterr().err


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "gen" in capsys.readouterr().out
