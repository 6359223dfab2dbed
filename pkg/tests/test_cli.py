import json
import shutil

import pytest

from toat import cli
from toat.trainer import Checkpoint, TrainingError

TINY = dict(d_model=8, text_layers=1, text_heads=2, frame_dim=8, d_audio=8, audio_layers=1, audio_heads=2, pos_kernel=3)
SPEC = dict(n_samples=30, n_topics=4, signal_topic_index=2, class_ratio=0.4, seed=0)


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    spec = write_json(root / "spec.json", SPEC)
    assert cli.main(["synth", "--config", spec, "--out", str(root / "synth")]) == 0
    return root / "synth"


def run_config(tmp_path, dataset, **training):
    obj = {"dataset_root": str(dataset), "n_topics": 4, "training": {"dims": TINY, "epochs": 2, **training}}
    return write_json(tmp_path / "run.json", obj)


def test_synth_writes_expected_files(dataset):
    lines = (dataset / "dataset.jsonl").read_text().splitlines()
    assert len(lines) == 30
    split = json.loads((dataset / "split.json").read_text())
    assert sum(len(split[k]) for k in ("train", "validation", "test")) == 30
    assert json.loads((dataset / "synth_spec.json").read_text())["n_samples"] == 30
    assert (dataset / "run.log").exists()


def test_synth_is_byte_reproducible(tmp_path, dataset):
    spec = write_json(tmp_path / "spec.json", SPEC)
    assert cli.main(["synth", "--config", spec, "--out", str(tmp_path / "again")]) == 0
    for name in ("dataset.jsonl", "split.json", "synth_spec.json", "audio/P00_q2.wav"):
        assert (tmp_path / "again" / name).read_bytes() == (dataset / name).read_bytes()


def test_invalid_spec_names_field(tmp_path, capsys):
    spec = write_json(tmp_path / "spec.json", {"missing_rate": 3})
    assert cli.main(["synth", "--config", spec, "--out", str(tmp_path / "o")]) == 2
    assert "missing_rate" in capsys.readouterr().err


def test_train_then_eval(tmp_path, dataset):
    cfg = run_config(tmp_path, dataset)
    out = tmp_path / "run"
    assert cli.main(["train", "--config", cfg, "--out", str(out), "--dump-attention"]) == 0
    for name in ("checkpoint.npz", "history.csv", "effective_config.json", "attention.jsonl", "run.log"):
        assert (out / name).exists(), name
    assert cli.main(["eval", "--config", cfg, "--out", str(out)]) == 0
    report = json.loads((out / "eval" / "report.json").read_text())
    ckpt = Checkpoint.load(out / "checkpoint.npz")
    assert report["validation"]["metrics"] == ckpt.metrics["validation"]
    assert (out / "eval" / "usage_rates.csv").read_text().count("\n") == 5


def test_train_outputs_are_byte_reproducible(tmp_path, dataset):
    cfg = run_config(tmp_path, dataset)
    out = tmp_path / "run"
    names = ("checkpoint.npz", "history.csv", "effective_config.json")
    snapshots = []
    for _ in range(2):
        assert cli.main(["train", "--config", cfg, "--out", str(out), "--seed", "3", "--force"]) == 0
        snapshots.append({n: (out / n).read_bytes() for n in names})
    assert snapshots[0] == snapshots[1]


def test_flags_override_config_and_are_persisted(tmp_path, dataset):
    cfg = run_config(tmp_path, dataset)
    out = tmp_path / "run"
    assert cli.main(["train", "--config", cfg, "--out", str(out), "--alpha", "0.2", "--modality", "text", "--epochs", "1"]) == 0
    eff = json.loads((out / "effective_config.json").read_text())["training"]
    assert (eff["alpha"], eff["modality"], eff["epochs"]) == (0.2, "text", 1)


def test_missing_dataset_exit_2(tmp_path, capsys):
    cfg = run_config(tmp_path, tmp_path / "nowhere")
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "dataset not found" in capsys.readouterr().err


def test_non_empty_output_needs_force(tmp_path, dataset):
    cfg = run_config(tmp_path, dataset, modality="text")
    out = tmp_path / "run"
    out.mkdir()
    (out / "keep").write_text("x")
    assert cli.main(["train", "--config", cfg, "--out", str(out)]) == 2
    assert cli.main(["train", "--config", cfg, "--out", str(out), "--force"]) == 0


def test_text_modality_never_opens_audio(tmp_path, dataset):
    copy = tmp_path / "noaudio"
    shutil.copytree(dataset, copy)
    shutil.rmtree(copy / "audio")
    cfg = run_config(tmp_path, copy)
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "run"), "--modality", "text"]) == 0
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "run2"), "--modality", "both"]) == 2


def test_version_mismatch_exit_4(tmp_path, dataset, capsys):
    cfg = run_config(tmp_path, dataset, modality="text")
    out = tmp_path / "run"
    assert cli.main(["train", "--config", cfg, "--out", str(out), "--epochs", "1"]) == 0
    ckpt = Checkpoint.load(out / "checkpoint.npz")
    ckpt.version = 2
    ckpt.save(out / "checkpoint.npz")
    assert cli.main(["eval", "--config", cfg, "--out", str(out)]) == 4
    assert "version" in capsys.readouterr().err


def test_training_failure_exit_3(tmp_path, dataset, monkeypatch):
    def boom(*a, **k):
        raise TrainingError("non-finite loss nan")

    monkeypatch.setattr(cli, "train", boom)
    cfg = run_config(tmp_path, dataset)
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "run")]) == 3


def test_unknown_config_field_exit_2(tmp_path, dataset):
    cfg = write_json(tmp_path / "run.json", {"dataset_root": str(dataset), "training": {"lr": 1}})
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_ablate_default_grid(tmp_path, dataset):
    cfg = run_config(tmp_path, dataset, epochs=1)
    out = tmp_path / "abl"
    assert cli.main(["ablate", "--config", cfg, "--out", str(out)]) == 0
    cells = json.loads((out / "ablation.json").read_text())
    assert len(cells) == 8
    assert len((out / "ablation.txt").read_text().splitlines()) == 10


def test_topics_emits_one_row_per_topic(tmp_path, dataset):
    pytest.importorskip("matplotlib")
    cfg = run_config(tmp_path, dataset, epochs=1, modality="text")
    out = tmp_path / "top"
    assert cli.main(["topics", "--config", cfg, "--out", str(out), "--plot"]) == 0
    topics = json.loads((out / "topics.json").read_text())
    assert [t["topic"] for t in topics["topics"]] == [1, 2, 3, 4]
    assert len(topics["usage_rates"]) == 4
    assert (out / "topics.png").exists()
    assert len((out / "topics.csv").read_text().splitlines()) == 5
