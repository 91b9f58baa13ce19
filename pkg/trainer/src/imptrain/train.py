"""The fine-tuning loop: manifest in, adapter weights and a loss log out.

Epochs, optimizer, and the sequence cap are smoke-scale defaults owned
by this package, not by the manifest; the manifest supplies only the
adapter geometry, learning rate, batch size, and dataset location. The
requested batch size is capped at the dataset size so the toy run is
full-batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

from imptrain.data import Record, batch_tensors, load_records
from imptrain.errors import DivergenceError
from imptrain.lora import (
    adapter_parameter_count,
    adapter_parameters,
    adapter_state_dict,
    attach_adapters,
)
from imptrain.manifest import Manifest, load_manifest, resolve_dataset_path
from imptrain.model import build_base_model


@dataclass(frozen=True)
class TrainerRunConfig:
    manifest_path: str
    base_model: str = "toy"
    epochs: int = 20
    max_seq_len: int = 256
    adapter_path: str = "adapter.pt"
    loss_log_path: str = "loss.tsv"
    seed: int = 0


@dataclass
class RunResult:
    adapter_path: Path
    loss_log_path: Path
    losses: list[float]
    adapted_modules: list[str]
    adapter_param_count: int
    manifest: Manifest = field(repr=False)
    model: nn.Module = field(repr=False, default=None)


def masked_lm_loss(
    model: nn.Module, ids: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Cross entropy over next-token predictions where mask is 1."""
    logits = model(ids)
    # predict token t+1 from position t
    shift_logits = logits[:, :-1, :]
    shift_targets = ids[:, 1:]
    shift_mask = mask[:, 1:].bool()
    flat_logits = shift_logits.reshape(-1, shift_logits.size(-1))[shift_mask.reshape(-1)]
    flat_targets = shift_targets.reshape(-1)[shift_mask.reshape(-1)]
    return nn.functional.cross_entropy(flat_logits, flat_targets)


def _check_finite(loss: torch.Tensor, step: int) -> None:
    value = loss.item()
    if not math.isfinite(value):
        raise DivergenceError(
            f"non-finite training loss {value} at step {step}; "
            "lower the learning rate or inspect the dataset"
        )


def run_finetune(config: TrainerRunConfig) -> RunResult:
    manifest = load_manifest(config.manifest_path)
    dataset_path = resolve_dataset_path(manifest, config.manifest_path)
    records = load_records(dataset_path)

    torch.manual_seed(config.seed)
    model = build_base_model(
        config.base_model, seed=config.seed, max_seq_len=config.max_seq_len
    )
    for param in model.parameters():
        param.requires_grad_(False)
    adapted = attach_adapters(
        model,
        family=model.family,
        target_projections=manifest.target_projections,
        rank=manifest.lora_rank,
        alpha=manifest.lora_alpha,
        dropout=manifest.lora_dropout,
    )
    param_count = adapter_parameter_count(model)

    batch_size = min(manifest.batch_size, len(records))
    optimizer = torch.optim.AdamW(
        adapter_parameters(model), lr=manifest.learning_rate
    )

    loss_log_path = Path(config.loss_log_path)
    loss_log_path.parent.mkdir(parents=True, exist_ok=True)
    losses: list[float] = []
    step = 0
    model.train()
    with open(loss_log_path, "w", encoding="utf-8") as log:
        log.write(f"# adapter_parameters={param_count}\n")
        log.write(f"# adapted_modules={','.join(adapted)}\n")
        for _epoch in range(config.epochs):
            for start in range(0, len(records), batch_size):
                batch: list[Record] = records[start : start + batch_size]
                ids, mask = batch_tensors(batch, config.max_seq_len)
                optimizer.zero_grad()
                loss = masked_lm_loss(model, ids, mask)
                _check_finite(loss, step)
                loss.backward()
                optimizer.step()
                losses.append(loss.item())
                log.write(f"{step}\t{loss.item()!r}\n")
                step += 1

    adapter_path = Path(config.adapter_path)
    adapter_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(adapter_state_dict(model), adapter_path)

    return RunResult(
        adapter_path=adapter_path,
        loss_log_path=loss_log_path,
        losses=losses,
        adapted_modules=adapted,
        adapter_param_count=param_count,
        manifest=manifest,
        model=model,
    )
