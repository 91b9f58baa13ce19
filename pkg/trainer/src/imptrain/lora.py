"""Low-rank adapter modules and the attachment glue.

An adapter wraps a frozen ``nn.Linear`` and adds a rank-r bypass:
``W x + (alpha / r) * B A dropout(x)``. B starts at zero so training
begins exactly at the base model's behavior; only A and B receive
gradients. The base weight tensor is shared, not copied, so it stays
bit-identical through training.
"""

from __future__ import annotations

import torch
from torch import nn

from imptrain.errors import ModelError
from imptrain.model import PROJECTION_NAMES


class LoRALinear(nn.Module):
    def __init__(
        self, base: nn.Linear, rank: int, alpha: int, dropout: float
    ) -> None:
        super().__init__()
        self.base = base
        self.base.weight.requires_grad_(False)
        if self.base.bias is not None:
            self.base.bias.requires_grad_(False)
        self.rank = rank
        self.scaling = alpha / rank
        self.dropout = nn.Dropout(dropout)
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.lora_a, a=5 ** 0.5)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        bypass = self.dropout(x) @ self.lora_a.T @ self.lora_b.T
        return self.base(x) + self.scaling * bypass


def attach_adapters(
    model: nn.Module,
    *,
    family: str,
    target_projections: tuple[str, ...],
    rank: int,
    alpha: int,
    dropout: float,
) -> list[str]:
    """Wrap every targeted projection in the model with a LoRALinear.

    Returns the dotted module paths that were adapted, in model order.
    Raises if the family is unknown or nothing matched, since training
    with zero trainable parameters would silently do nothing.
    """
    if family not in PROJECTION_NAMES:
        raise ModelError(f"no projection table for model family {family!r}")
    table = PROJECTION_NAMES[family]
    unmapped = [kind for kind in target_projections if kind not in table]
    if unmapped:
        raise ModelError(
            f"family {family!r} has no module name for: {', '.join(unmapped)}"
        )
    wanted = {table[kind] for kind in target_projections}

    adapted: list[str] = []
    for path, module in list(model.named_modules()):
        attr = path.rsplit(".", 1)[-1]
        if attr not in wanted or not isinstance(module, nn.Linear):
            continue
        parent = model.get_submodule(path.rsplit(".", 1)[0]) if "." in path else model
        setattr(parent, attr, LoRALinear(module, rank, alpha, dropout))
        adapted.append(path)
    if not adapted:
        raise ModelError(
            f"no modules matched target projections {target_projections!r}"
        )
    return adapted


def adapter_parameters(model: nn.Module):
    for module in model.modules():
        if isinstance(module, LoRALinear):
            yield module.lora_a
            yield module.lora_b


def adapter_parameter_count(model: nn.Module) -> int:
    """Deterministic in (model dims, rank, targeted projections)."""
    return sum(param.numel() for param in adapter_parameters(model))


def adapter_state_dict(model: nn.Module) -> dict[str, torch.Tensor]:
    """Only the adapter factors, keyed by their dotted paths."""
    out: dict[str, torch.Tensor] = {}
    for path, module in model.named_modules():
        if isinstance(module, LoRALinear):
            out[f"{path}.lora_a"] = module.lora_a.detach().clone()
            out[f"{path}.lora_b"] = module.lora_b.detach().clone()
    return out
