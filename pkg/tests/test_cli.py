import pytest

from tristream.cli import main

CONFIG_TEXT = """
synth.width = 48
synth.height = 48
synth.length = 18
synth.blob_radius = 6.0
encoding.codebook_size = 8
pipeline.train_per_class = 1
pipeline.repeats = 1
pipeline.master_seed = 3
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "run.cfg"
    cfg_path.write_text(CONFIG_TEXT)
    data = root / "data"
    assert main(["synth-gen", "--out", str(data), "--videos-per-class", "2",
                 "--config", str(cfg_path)]) == 0
    assert main(["extract", "--data", str(data), "--config", str(cfg_path)]) == 0
    return root, cfg_path, data


def test_synth_gen_layout(workspace):
    _, _, data = workspace
    classes = sorted(p.name for p in data.iterdir() if p.is_dir() and not p.name.startswith("_"))
    assert classes == ["expand", "oscillate", "translate-left", "translate-right"]
    frames = sorted((data / "expand" / "video_000").glob("frame_*.pgm"))
    assert len(frames) == 18
    assert frames[0].name == "frame_00000.pgm"


def test_extract_warm_cache_message(workspace, capsys):
    root, cfg_path, data = workspace
    assert main(["extract", "--data", str(data), "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "extracted 0 descriptor file(s)" in out
    assert "24 cache hit(s)" in out


def test_evaluate_writes_report_and_figures(workspace, capsys):
    root, cfg_path, data = workspace
    report = root / "out" / "run.tsv"
    assert main(["evaluate", "--data", str(data), "--config", str(cfg_path),
                 "--report", str(report)]) == 0
    out = capsys.readouterr().out
    assert "mean accuracy" in out
    text = report.read_text()
    records = dict(line.split("\t", 1) for line in text.splitlines())
    assert records["streams"] == "lt,st,gt"
    assert records["repeats"] == "1"
    assert 0.0 <= float(records["mean_accuracy"]) <= 1.0
    assert (root / "out" / "run_confusion.png").is_file()
    assert (root / "out" / "run_accuracy.png").is_file()


def test_evaluate_stream_override(workspace):
    root, cfg_path, data = workspace
    report = root / "out" / "two.tsv"
    assert main(["evaluate", "--data", str(data), "--config", str(cfg_path),
                 "--report", str(report), "--streams", "lt,st", "--no-figures"]) == 0
    records = dict(line.split("\t", 1) for line in report.read_text().splitlines())
    assert records["streams"] == "lt,st"
    assert not (root / "out" / "two_confusion.png").exists()


def test_train_and_predict(workspace, capsys):
    root, cfg_path, data = workspace
    model = root / "model"
    assert main(["train", "--data", str(data), "--config", str(cfg_path),
                 "--model", str(model)]) == 0
    assert (model / "config.txt").is_file()
    assert (model / "codebook.cdbk").is_file()
    assert (model / "svm.lsvm").is_file()
    capsys.readouterr()
    assert main(["predict", "--model", str(model),
                 "--video", str(data / "oscillate" / "video_000")]) == 0
    out = capsys.readouterr().out
    lines = dict(line.split("\t", 1) for line in out.strip().splitlines())
    assert lines["label"] in ("expand", "oscillate", "translate-left", "translate-right")
    assert len([k for k in lines if k.startswith("score_")]) == 4


def test_build_codebook_subcommand(workspace):
    root, cfg_path, data = workspace
    model = root / "cbonly"
    assert main(["build-codebook", "--data", str(data), "--config", str(cfg_path),
                 "--model", str(model)]) == 0
    assert (model / "codebook.cdbk").is_file()
    assert (model / "pca_lt.pcam").is_file()


def test_ablate_writes_rows(workspace):
    root, cfg_path, data = workspace
    report = root / "out" / "ablate.tsv"
    assert main(["ablate", "--data", str(data), "--config", str(cfg_path),
                 "--report", str(report)]) == 0
    records = dict(line.split("\t", 1) for line in report.read_text().splitlines())
    assert records["ablation_rows"] == "5"
    assert records["subset_0_streams"] == "lt"
    assert records["subset_4_streams"] == "lt,st,gt"
    assert (root / "out" / "ablate_ablation.png").is_file()


def test_cache_flag_redirects_cache(workspace, tmp_path):
    root, cfg_path, data = workspace
    cache = tmp_path / "altcache"
    assert main(["extract", "--data", str(data), "--config", str(cfg_path),
                 "--cache", str(cache)]) == 0
    assert any(cache.rglob("*.tstd"))


def test_show_config_round_trips(capsys):
    assert main(["show-config"]) == 0
    out = capsys.readouterr().out
    from tristream.config import PipelineConfig, parse_config

    assert parse_config(out) == PipelineConfig()


def test_error_exit_codes(workspace, tmp_path, capsys):
    root, cfg_path, data = workspace
    assert main(["evaluate", "--data", str(tmp_path / "nope"),
                 "--report", str(tmp_path / "r.tsv")]) == 3
    assert "error: data" in capsys.readouterr().err

    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("nonsense.key = 5\n")
    assert main(["extract", "--data", str(data), "--config", str(bad_cfg)]) == 2
    assert "error: configuration" in capsys.readouterr().err

    assert main(["predict", "--model", str(tmp_path / "nomodel"),
                 "--video", str(data / "oscillate" / "video_000")]) == 3
