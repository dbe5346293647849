import json

import pytest

from kgaction.cli import main


def toy_args(toy_dir, *extra):
    return [
        "--data-dir", str(toy_dir),
        "--manifest", "toy.manifest",
        "--embeddings", "embeddings.txt",
        "--bank", "train.bank",
        "--auxiliary-bank", "auxiliary.bank",
        "--train-features", "train.features",
        "--test-features", "test.features",
        "--hidden", "8",
        "--epochs", "30",
        *extra,
    ]


def read_all(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_no_command_is_usage_error(capsys):
    assert main([]) == 1


def test_unknown_flag_and_choice_are_usage_errors(capsys):
    assert main(["train", "--bogus"]) == 1
    assert main(["ablate", "--axis", "nonsense"]) == 1
    # the message lists the valid axes
    assert "fc-bipartite" in capsys.readouterr().err


def test_train_then_evaluate(toy_dir, tmp_path):
    out = tmp_path / "run"
    assert main(["train", *toy_args(toy_dir), "--out", str(out)]) == 0
    names = set(read_all(out))
    assert {"model.kgcn", "loss.csv", "w_test.bank", "w_test.bank.provenance.json"} <= names
    ev = tmp_path / "ev"
    args = ["evaluate", "--data-dir", str(toy_dir), "--manifest", "toy.manifest",
            "--weights", str(out / "w_test.bank"), "--test-features", "test.features", "--out", str(ev)]
    assert main(args) == 0
    csv_text = (ev / "report.csv").read_text()
    assert csv_text.startswith("class,score\n") and "OVERALL" in csv_text


def test_relative_weights_found_in_working_directory(toy_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("KGACTION_DATA_DIR", str(toy_dir))
    monkeypatch.chdir(tmp_path)
    args = [a for a in toy_args(toy_dir) if a not in ("--data-dir", str(toy_dir))]
    assert main(["train", *args, "--out", "run"]) == 0
    ev = ["evaluate", "--manifest", "toy.manifest", "--weights", "run/w_test.bank",
          "--test-features", "test.features", "--out", "ev"]
    assert main(ev) == 0
    assert (tmp_path / "ev" / "report.csv").exists()


def test_train_reruns_are_byte_identical(toy_dir, tmp_path):
    # the output path is echoed into provenance, so both runs use the same one
    out = tmp_path / "run"
    runs = []
    for _ in range(2):
        assert main(["train", *toy_args(toy_dir), "--out", str(out)]) == 0
        runs.append(read_all(out))
        for p in out.iterdir():
            p.unlink()
    assert runs[0] == runs[1]


def test_evaluate_rejects_other_manifest(toy_dir, tmp_path):
    out = tmp_path / "run"
    assert main(["train", *toy_args(toy_dir), "--out", str(out)]) == 0
    args = ["evaluate", "--dataset", "ucf101", "--weights", str(out / "w_test.bank"),
            "--test-features", str(toy_dir / "test.features"), "--out", str(tmp_path / "ev")]
    assert main(args) == 2
    assert not (tmp_path / "ev").exists()


def test_missing_embedding_leaves_no_outputs(toy_dir, tmp_path):
    partial = tmp_path / "partial.txt"
    partial.write_text("".join(line for line in (toy_dir / "embeddings.txt").read_text().splitlines(True)
                               if not line.startswith("kicking_ball ")))
    out = tmp_path / "run"
    assert main(["train", *toy_args(toy_dir), "--embeddings", str(partial), "--out", str(out)]) == 2
    assert not out.exists()


def test_config_file_and_precedence(toy_dir, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("epochs: 5\nseed: 3\n")
    out = tmp_path / "run"
    assert main(["train", *toy_args(toy_dir), "--config", str(cfg), "--epochs", "7", "--out", str(out)]) == 0
    prov = json.loads((out / "w_test.bank.provenance.json").read_text())
    cfg_echo = prov["config"]
    assert cfg_echo["train"]["epochs"] == 7 and cfg_echo["seed"] == 3
    assert len((out / "loss.csv").read_text().splitlines()) == 8


def test_unknown_config_key_is_validation_error(toy_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epoch": 5}))
    assert main(["train", *toy_args(toy_dir), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


GRAPH_INPUTS = [
    "--manifest", "toy.manifest",
    "--embeddings", "embeddings.txt",
    "--train-features", "train.features",
    "--test-features", "test.features",
    "--auxiliary-features", "auxiliary.features",
]


def test_data_dir_from_environment(toy_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("KGACTION_DATA_DIR", str(toy_dir))
    assert main(["build-kg", *GRAPH_INPUTS, "--out", str(tmp_path / "g")]) == 0


@pytest.mark.parametrize("kind,files", [("kg1", 1), ("kg2", 2), ("kg3", 1)])
def test_build_kg(toy_dir, tmp_path, kind, files):
    out = tmp_path / kind
    args = ["build-kg", "--data-dir", str(toy_dir), *GRAPH_INPUTS, "--kind", kind, "--few-shot-k", "2"]
    assert main([*args, "--out", str(out)]) == 0
    assert len([p for p in out.iterdir() if p.suffix == ".edges"]) == files


def test_selfcheck_passes_and_corruption_fails(tmp_path, capsys):
    assert main(["selfcheck"]) == 0
    assert "checks passed" in capsys.readouterr().out
    assert main(["selfcheck", "--corrupt-gradient", "0", "--out", str(tmp_path / "s")]) == 3
    assert not (tmp_path / "s").exists()


def test_parse_labels(tmp_path):
    out = tmp_path / "p"
    assert main(["parse-labels", "--dataset", "hmdb51", "--out", str(out)]) == 0
    rows = (out / "hmdb51_labels.tsv").read_text().splitlines()
    assert rows[0] == "action\tnoun\tverb\tverb_source\tnoun_source"
    assert "brush hair\thair\tbrushing\tparsed\tparsed" in rows
    assert "pullup\tpullup\tdoing\tdefault_doing\tparsed" in rows
    assert len(rows) == 1 + 51


def test_make_splits(toy_dir, tmp_path):
    out = tmp_path / "s"
    args = ["make-splits", "--data-dir", str(toy_dir), "--manifest", "toy.manifest",
            "--n-test", "2", "--n-splits", "3", "--out", str(out)]
    assert main(args) == 0
    assert sorted(p.name for p in out.iterdir()) == [f"toy-split{k}.manifest" for k in (1, 2, 3)]


@pytest.mark.parametrize("axis,rows", [("graph-config", 3), ("fc-bipartite", 2)])
def test_ablate_rows(toy_dir, tmp_path, axis, rows):
    out = tmp_path / "a"
    assert main(["ablate", *toy_args(toy_dir), "--axis", axis, "--out", str(out)]) == 0
    lines = (out / f"ablation_{axis}.csv").read_text().splitlines()
    assert lines[0] == "variant,metric,score" and len(lines) == 1 + rows


@pytest.mark.parametrize(
    "argv,lr",
    [
        (["--dataset", "ucf101"], 0.001),
        (["--dataset", "ucf101", "--few-shot"], 0.00005),
        (["--dataset", "hmdb51", "--few-shot"], 0.001),
        (["--dataset", "ucf101", "--few-shot", "--lr", "0.01"], 0.01),
    ],
)
def test_learning_rate_defaults(argv, lr):
    from kgaction.cli import COMMANDS, build_parser, experiment_config, load_manifest, resolve_settings

    args = build_parser().parse_args(["train", *argv])
    s = resolve_settings(args, COMMANDS["train"][1])
    assert experiment_config(s, load_manifest(s)).train.lr0 == lr
