import pytest

from imptrain.errors import ManifestError
from imptrain.manifest import load_manifest, parse_manifest_text, resolve_dataset_path

from trainfix import write_manifest


def test_default_manifest_round_trip(tmp_path):
    path = write_manifest(tmp_path / "manifest.txt")
    manifest = load_manifest(path)
    assert manifest.base_model_ref == "alpaca-7b"
    assert manifest.lora_rank == 8
    assert manifest.lora_alpha == 16
    assert manifest.lora_dropout == 0.05
    assert manifest.learning_rate == 0.0003
    assert manifest.batch_size == 128
    assert manifest.target_projections == ("query", "value")
    assert manifest.dataset_path == "train.jsonl"


def test_dataset_path_resolves_relative_to_manifest_dir(tmp_path):
    nested = tmp_path / "runs" / "a"
    nested.mkdir(parents=True)
    path = write_manifest(nested / "manifest.txt", dataset_name="data/train.jsonl")
    manifest = load_manifest(path)
    assert resolve_dataset_path(manifest, path) == nested / "data" / "train.jsonl"


def test_absolute_dataset_path_kept(tmp_path):
    path = write_manifest(tmp_path / "manifest.txt", dataset_name="/data/train.jsonl")
    manifest = load_manifest(path)
    assert str(resolve_dataset_path(manifest, path)) == "/data/train.jsonl"


def test_missing_key_fatal(tmp_path):
    text = (tmp_path / "m.txt", write_manifest(tmp_path / "m.txt"))[1].read_text()
    trimmed = "\n".join(
        line for line in text.splitlines() if not line.startswith("lora_rank=")
    )
    with pytest.raises(ManifestError, match="missing manifest keys: lora_rank"):
        parse_manifest_text(trimmed)


def test_unknown_key_fatal():
    with pytest.raises(ManifestError, match="unknown manifest key 'warmup'"):
        parse_manifest_text("warmup=10")


def test_duplicate_key_fatal(tmp_path):
    path = write_manifest(tmp_path / "m.txt")
    doubled = path.read_text() + "lora_rank=8\n"
    with pytest.raises(ManifestError, match="duplicate manifest key 'lora_rank'"):
        parse_manifest_text(doubled)


def test_line_without_equals_fatal():
    with pytest.raises(ManifestError, match=":1: expected 'key=value'"):
        parse_manifest_text("just some words")


def test_non_numeric_rank_fatal(tmp_path):
    path = write_manifest(tmp_path / "m.txt", lora_rank="eight")
    with pytest.raises(ManifestError):
        load_manifest(path)


@pytest.mark.parametrize(
    "overrides,needle",
    [
        ({"lora_rank": 0}, "lora_rank"),
        ({"lora_alpha": 0}, "lora_alpha"),
        ({"lora_dropout": 1.0}, "lora_dropout"),
        ({"lora_dropout": -0.1}, "lora_dropout"),
        ({"learning_rate": 0}, "learning_rate"),
        ({"learning_rate": "inf"}, "learning_rate"),
        ({"batch_size": 0}, "batch_size"),
        ({"target_projections": ""}, "target_projections"),
        ({"target_projections": "query,flux"}, "unknown projection 'flux'"),
        ({"target_projections": "query,query"}, "duplicates"),
        ({"dataset_path": ""}, "dataset_path"),
    ],
)
def test_invariant_violations_fatal(tmp_path, overrides, needle):
    path = write_manifest(tmp_path / "m.txt", **overrides)
    with pytest.raises(ManifestError, match=needle):
        load_manifest(path)


def test_missing_file_fatal(tmp_path):
    with pytest.raises(ManifestError, match="cannot read manifest"):
        load_manifest(tmp_path / "nope.txt")


def test_all_four_projections_accepted(tmp_path):
    path = write_manifest(
        tmp_path / "m.txt", target_projections="query,key,value,output"
    )
    manifest = load_manifest(path)
    assert manifest.target_projections == ("query", "key", "value", "output")
