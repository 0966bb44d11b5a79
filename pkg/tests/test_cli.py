import subprocess
import sys

import pytest

from sodmv.archive import BadMagicError
from sodmv.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


@pytest.fixture
def treebank(tmp_path, capsys):
    path = tmp_path / "tb.conllu"
    code, _ = run(capsys, "generate", "--grammar", "random:3", "--n", "60", "--max-len", "6", "--seed", "7", "--out", str(path))
    assert code == 0
    return path


def test_generate_is_reproducible(tmp_path, capsys, treebank):
    again = tmp_path / "again.conllu"
    run(capsys, "generate", "--grammar", "random:3", "--n", "60", "--max-len", "6", "--seed", "7", "--out", str(again))
    assert again.read_bytes() == treebank.read_bytes()


def test_eval_identical_files(capsys, treebank):
    code, out = run(capsys, "eval", "--pred", str(treebank), "--gold", str(treebank))
    assert code == 0
    assert out.out.splitlines()[0] == "uas 1.0000"


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--pred", "x"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["train", "--train", "x", "--out", "y", "--method", "nope"])
    assert exc.value.code == 2


def test_failures_exit_nonzero(tmp_path, capsys, treebank):
    code, out = run(capsys, "eval", "--pred", str(tmp_path / "missing"), "--gold", str(treebank))
    assert code == 1 and "error" in out.err
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"not a model at all")
    code, _ = run(capsys, "parse", "--model-file", str(junk), "--input", str(treebank), "--output", str(tmp_path / "o"))
    assert code == BadMagicError.code
    code, _ = run(capsys, "generate", "--grammar", "random:x", "--n", "1", "--out", str(tmp_path / "g"))
    assert code == 1


def test_train_parse_eval(tmp_path, capsys, treebank):
    model = tmp_path / "m.bin"
    code, out = run(capsys, "train", "--train", str(treebank), "--method", "em", "--model", "dmv", "--epochs", "3", "--km-epochs", "5", "--out", str(model))
    assert code == 0 and "restart 0 seed 0" in out.out
    assert (tmp_path / "m.bin.log.tsv").read_text().startswith("epoch\ttrain_loss\tdev_ll\tseconds\n")
    parsed = tmp_path / "p.conllu"
    code, _ = run(capsys, "parse", "--model-file", str(model), "--input", str(treebank), "--output", str(parsed))
    assert code == 0
    code, out = run(capsys, "eval", "--pred", str(parsed), "--gold", str(treebank), "--plot", str(tmp_path / "b.png"))
    assert code == 0 and out.out.startswith("uas ")
    assert (tmp_path / "b.png").stat().st_size > 0


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "sodmv.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "generate" in r.stdout
