import math

import pytest
import torch

from imptrain.data import PAD_ID, batch_tensors, encode_example
from imptrain.errors import DatasetError, DivergenceError, ModelError
from imptrain.lora import LoRALinear
from imptrain.model import build_base_model
from imptrain.train import TrainerRunConfig, _check_finite, run_finetune

from trainfix import write_dataset, write_manifest


def _config(training_dir, **overrides):
    values = dict(
        manifest_path=str(training_dir / "manifest.txt"),
        epochs=20,
        max_seq_len=192,
        adapter_path=str(training_dir / "adapter.pt"),
        loss_log_path=str(training_dir / "loss.tsv"),
        seed=0,
    )
    values.update(overrides)
    return TrainerRunConfig(**values)


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    """One 32-record, 20-step run shared by the assertions below."""
    root = tmp_path_factory.mktemp("smoke")
    write_dataset(root / "train.jsonl")
    write_manifest(root / "manifest.txt")
    return run_finetune(_config(root)), root


def test_smoke_run_loss_decreases(smoke_run):
    result, _root = smoke_run
    assert len(result.losses) == 20
    assert result.losses[-1] < result.losses[0]


def test_smoke_run_batch_capped_at_dataset_size(smoke_run):
    # manifest asks for batch 128; 32 records make each epoch one step
    result, _root = smoke_run
    assert len(result.losses) == 20


def test_loss_log_format(smoke_run):
    result, _root = smoke_run
    lines = result.loss_log_path.read_text().splitlines()
    header = [line for line in lines if line.startswith("#")]
    body = [line for line in lines if not line.startswith("#")]
    assert any(line.startswith("# adapter_parameters=") for line in header)
    assert len(body) == 20
    for index, line in enumerate(body):
        step, tab, loss = line.partition("\t")
        assert tab == "\t"
        assert int(step) == index
        assert math.isfinite(float(loss))


def test_adapters_attached_to_query_and_value_only(smoke_run):
    result, _root = smoke_run
    assert result.adapted_modules == [
        "blocks.0.attn.q_proj",
        "blocks.0.attn.v_proj",
        "blocks.1.attn.q_proj",
        "blocks.1.attn.v_proj",
    ]
    assert result.adapter_param_count == 4 * 8 * (64 + 64)


def test_base_weights_bit_unchanged_after_training(smoke_run):
    result, _root = smoke_run
    fresh = build_base_model("toy", seed=0, max_seq_len=192)
    fresh_state = dict(fresh.named_parameters())
    for name, param in result.model.named_parameters():
        if name.endswith(("lora_a", "lora_b")):
            continue
        # trained model nests wrapped linears under .base
        fresh_name = name.replace(".base.weight", ".weight")
        assert torch.equal(param, fresh_state[fresh_name]), name


def test_adapter_artifact_holds_trained_factors(smoke_run):
    result, root = smoke_run
    state = torch.load(root / "adapter.pt", weights_only=True)
    assert sorted(state) == sorted(
        f"{path}.{factor}"
        for path in result.adapted_modules
        for factor in ("lora_a", "lora_b")
    )
    # training moved B off its zero init
    assert any(tensor.abs().sum() > 0 for key, tensor in state.items()
               if key.endswith("lora_b"))


def test_run_is_deterministic(training_dir):
    first = run_finetune(_config(training_dir, epochs=3))
    second = run_finetune(_config(training_dir, epochs=3))
    assert first.losses == second.losses


def test_missing_dataset_fatal_before_training(tmp_path):
    write_manifest(tmp_path / "manifest.txt", dataset_name="absent.jsonl")
    with pytest.raises(DatasetError, match="cannot read dataset"):
        run_finetune(_config(tmp_path))
    assert not (tmp_path / "loss.tsv").exists()
    assert not (tmp_path / "adapter.pt").exists()


def test_malformed_record_fatal(tmp_path):
    write_manifest(tmp_path / "manifest.txt")
    (tmp_path / "train.jsonl").write_text(
        '{"instruction": "x", "input": "y"}\n', encoding="utf-8"
    )
    with pytest.raises(DatasetError, match="missing keys: output"):
        run_finetune(_config(tmp_path))


def test_empty_dataset_fatal(tmp_path):
    write_manifest(tmp_path / "manifest.txt")
    (tmp_path / "train.jsonl").write_text("\n", encoding="utf-8")
    with pytest.raises(DatasetError, match="no records"):
        run_finetune(_config(tmp_path))


def test_unloadable_base_model_fatal(training_dir):
    with pytest.raises(ModelError, match="cannot load base model 'alpaca-7b'"):
        run_finetune(_config(training_dir, base_model="alpaca-7b"))


def test_non_finite_loss_aborts_with_step():
    with pytest.raises(DivergenceError, match="at step 7"):
        _check_finite(torch.tensor(float("nan")), step=7)


def test_divergent_run_aborts(tmp_path):
    # an absurd learning rate blows the loss up within a few steps
    write_dataset(tmp_path / "train.jsonl", n=8)
    write_manifest(tmp_path / "manifest.txt", learning_rate=1e12)
    config = _config(tmp_path, epochs=50)
    with pytest.raises(DivergenceError, match="non-finite training loss"):
        run_finetune(config)


def test_encode_example_masks_prompt():
    from imptrain.data import Record

    record = Record(instruction="inst", input="findings", output="impression")
    ids, mask = encode_example(record, max_seq_len=512)
    assert len(ids) == len(mask)
    boundary = mask.index(1)
    assert all(bit == 0 for bit in mask[:boundary])
    assert all(bit == 1 for bit in mask[boundary:])
    # supervised region covers the response bytes plus EOS
    assert sum(mask) == len("impression".encode("utf-8")) + 1


def test_batch_tensors_pads_with_pad_id():
    from imptrain.data import Record

    short = Record(instruction="i", input="x", output="a")
    long = Record(instruction="i", input="x" * 40, output="b" * 20)
    ids, mask = batch_tensors([short, long], max_seq_len=512)
    assert ids.shape == mask.shape
    row = ids[0].tolist()
    assert row[-1] == PAD_ID
    assert mask[0].tolist()[-1] == 0


def test_truncation_keeps_a_supervised_position():
    from imptrain.data import Record

    record = Record(instruction="i" * 100, input="x" * 100, output="y")
    ids, mask = encode_example(record, max_seq_len=32)
    assert len(ids) == 32
    assert sum(mask) >= 1
