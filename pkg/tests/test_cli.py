import json

import pandas as pd
import pytest

from app.api.server import handle_request
from app.cli import main, read_series_file
from app.core.errors import InputValidationError
from app.repository.run_repository import RunRepository
from app.services.dataset_service import generate_strain_dataset
from app.services.prediction_service import Predictor, load_model

FAST = ["--set", "dataset.synthetic.n_per_class=3", "--set", "train.epochs=1", "--set", "train.batch=8"]


@pytest.fixture
def pipeline(tmp_path, capsys):
    """generate -> train on the written files; returns the shared flags and paths."""
    train_path, test_path = tmp_path / "strain_TRAIN.tsv", tmp_path / "strain_TEST.tsv"
    assert main(["generate", "--out", str(train_path), "--test-out", str(test_path), *FAST]) == 0
    flags = [
        *FAST,
        "--set", "dataset.format=ucr",
        "--set", f"dataset.path={train_path}",
        "--set", f"dataset.test_path={test_path}",
        "--set", f"run.db_path={tmp_path / 'runs.db'}",
    ]
    checkpoint = tmp_path / "model.gfef"
    assert main(["train", "--out", str(checkpoint), *flags]) == 0
    capsys.readouterr()
    return flags, checkpoint, tmp_path


def test_generate_train_evaluate(pipeline, capsys):
    flags, checkpoint, tmp_path = pipeline
    assert checkpoint.exists()
    epochs = pd.read_csv(tmp_path / "epochs.tsv", sep="\t")
    assert list(epochs["epoch"]) == [0]

    assert main(["evaluate", "--checkpoint", str(checkpoint), *flags]) == 0
    out = capsys.readouterr().out
    accuracy = float(out.splitlines()[0].split(":")[1])
    assert 0.0 <= accuracy <= 1.0
    assert "confusion:" in out

    runs = RunRepository(str(tmp_path / "runs.db")).get_runs()
    assert len(runs) == 1
    assert runs.iloc[0]["checkpoint_path"] == str(checkpoint)


def test_evaluate_is_byte_identical(pipeline, capsys):
    flags, checkpoint, _ = pipeline
    main(["evaluate", "--checkpoint", str(checkpoint), *flags])
    first = capsys.readouterr().out
    main(["evaluate", "--checkpoint", str(checkpoint), *flags])
    assert capsys.readouterr().out == first


def test_predict_matches_the_service(checkpoint_path, tmp_path):
    instances = generate_strain_dataset(1, seed=12).instances
    source = tmp_path / "series.txt"
    source.write_text("\n".join(",".join(repr(v) for v in inst.values) for inst in instances) + "\n",
                      encoding="utf-8")
    out = tmp_path / "predictions.jsonl"
    assert main(["predict", "--checkpoint", checkpoint_path, "--input", str(source), "--out", str(out)]) == 0

    predictor = Predictor(load_model(checkpoint_path))
    lines = out.read_text(encoding="utf-8").splitlines()
    assert len(lines) == len(instances)
    for line, inst in zip(lines, instances):
        body = json.dumps({"series": inst.values.tolist()}).encode("utf-8")
        status, answer = handle_request(predictor, "POST", "/classify", body)
        assert status == 200
        assert json.loads(line) == answer


def test_multiple_seeds_write_one_checkpoint_each(tmp_path, capsys):
    out = tmp_path / "model.gfef"
    argv = ["train", "--out", str(out), *FAST, "--set", "train.seeds=[0, 1]",
            "--set", f"run.db_path={tmp_path / 'runs.db'}"]
    assert main(argv) == 0
    assert (tmp_path / "model-seed0.gfef").exists()
    assert (tmp_path / "model-seed1.gfef").exists()
    assert "+/-" in capsys.readouterr().out


def test_unknown_key_exits_with_2(capsys):
    assert main(["train", "--set", "model.hiden_size=64"]) == 2
    err = capsys.readouterr().err
    assert "model.hiden_size" in err
    assert "model.hidden_size" in err


def test_invariant_violation_stops_before_work(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "m.gfef"), "--set", "model.patch_len=4"]) == 2
    assert not (tmp_path / "m.gfef").exists()
    assert "patch_len" in capsys.readouterr().err


def test_missing_checkpoint_exits_with_2(tmp_path, capsys):
    assert main(["evaluate", "--checkpoint", str(tmp_path / "none.gfef")]) == 2
    assert "not found" in capsys.readouterr().err


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--selector", "affine", "--trials", "6"]) == 0
    assert capsys.readouterr().out.startswith("PASS affine")
    assert main(["gradcheck", "--selector", "affine", "--trials", "2", "--tolerance", "-1"]) == 1


def test_diagnose_writes_composition(checkpoint_path, tmp_path, capsys):
    out = tmp_path / "composition.tsv"
    assert main(["diagnose", "--checkpoint", checkpoint_path, "--out", str(out),
                 "--set", "dataset.synthetic.n_per_class=2"]) == 0
    frame = pd.read_csv(out, sep="\t")
    assert len(frame) == 48
    assert ((frame[["ts", "img", "exp"]].sum(axis=1) - 1.0).abs() < 1e-9).all()
    assert "ts" in capsys.readouterr().out


def test_series_file_parsing(tmp_path):
    path = tmp_path / "in.txt"
    path.write_text("1, 2, 3\n\n4 5 6\n", encoding="utf-8")
    assert read_series_file(str(path)) == [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]
    path.write_text("1, 2, x\n", encoding="utf-8")
    with pytest.raises(InputValidationError, match="Line 1"):
        read_series_file(str(path))
