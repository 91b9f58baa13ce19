"""Low-rank-adapter fine-tuning over the pipeline's dataset artifacts.

Consumes the flat ``key=value`` training manifest and the instruction
JSONL emitted by the report pipeline, attaches LoRA adapters to a base
model, and trains at desk scale. The default base is a small built-in
transformer so the whole loop runs in seconds on a CPU; swap the family
table entry to point the same glue at a real checkpoint.
"""

from imptrain.manifest import Manifest, load_manifest
from imptrain.lora import LoRALinear, attach_adapters, adapter_parameter_count
from imptrain.model import ToyCausalLM, build_base_model, PROJECTION_NAMES
from imptrain.train import TrainerRunConfig, RunResult, run_finetune

__all__ = [
    "Manifest",
    "load_manifest",
    "LoRALinear",
    "attach_adapters",
    "adapter_parameter_count",
    "ToyCausalLM",
    "build_base_model",
    "PROJECTION_NAMES",
    "TrainerRunConfig",
    "RunResult",
    "run_finetune",
]
