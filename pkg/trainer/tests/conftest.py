import pytest

from trainfix import write_dataset, write_manifest


@pytest.fixture
def training_dir(tmp_path):
    """A manifest plus a 32-record dataset next to it."""
    write_dataset(tmp_path / "train.jsonl")
    write_manifest(tmp_path / "manifest.txt")
    return tmp_path
