from imptrain.cli import main

from trainfix import write_dataset, write_manifest


def test_cli_smoke_run(tmp_path, capsys):
    write_dataset(tmp_path / "train.jsonl", n=8)
    write_manifest(tmp_path / "manifest.txt")
    code = main(
        [
            "--manifest", str(tmp_path / "manifest.txt"),
            "--epochs", "2",
            "--adapter-out", str(tmp_path / "adapter.pt"),
            "--loss-log", str(tmp_path / "loss.tsv"),
        ]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "adapted 4 modules (4096 adapter parameters)" in out
    assert "steps: 2" in out
    assert (tmp_path / "adapter.pt").exists()
    assert (tmp_path / "loss.tsv").exists()


def test_cli_reports_manifest_error(tmp_path, capsys):
    (tmp_path / "manifest.txt").write_text("lora_rank=0\n", encoding="utf-8")
    code = main(["--manifest", str(tmp_path / "manifest.txt")])
    err = capsys.readouterr().err
    assert code == 1
    assert "error:" in err


def test_cli_reports_missing_manifest(tmp_path, capsys):
    code = main(["--manifest", str(tmp_path / "nope.txt")])
    err = capsys.readouterr().err
    assert code == 1
    assert "cannot read manifest" in err
