"""Instruction-record loading and byte-level tokenization.

Records arrive as JSONL with ``instruction``, ``input``, and ``output``
fields; extra fields (``meta``) ride along untouched. Tokenization is a
fixed byte vocabulary so the toy loop needs no external tokenizer files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

from imptrain.errors import DatasetError

# byte values 0..255, then the three specials
BOS_ID = 256
EOS_ID = 257
PAD_ID = 258
VOCAB_SIZE = 259

PROMPT_TEMPLATE = (
    "### Instruction:\n\n{instruction}\n\n### Input:\n\n{input}\n\n### Response:\n"
)


@dataclass(frozen=True)
class Record:
    instruction: str
    input: str
    output: str


def load_records(path: str | Path) -> list[Record]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    records: list[Record] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(row, dict):
            raise DatasetError(f"{path}:{lineno}: expected an object")
        missing = [key for key in ("instruction", "input", "output") if key not in row]
        if missing:
            raise DatasetError(
                f"{path}:{lineno}: record missing keys: {', '.join(missing)}"
            )
        records.append(
            Record(
                instruction=str(row["instruction"]),
                input=str(row["input"]),
                output=str(row["output"]),
            )
        )
    if not records:
        raise DatasetError(f"{path}: dataset contains no records")
    return records


def render_prompt(record: Record) -> str:
    return PROMPT_TEMPLATE.format(instruction=record.instruction, input=record.input)


def encode_text(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def encode_example(record: Record, max_seq_len: int) -> tuple[list[int], list[int]]:
    """Token ids plus a loss mask (1 where the model should predict).

    The prompt part is context only; loss applies to the response bytes
    and the closing EOS. Sequences longer than max_seq_len keep the
    prompt head and truncate the response tail.
    """
    prompt_ids = [BOS_ID] + encode_text(render_prompt(record))
    response_ids = encode_text(record.output) + [EOS_ID]
    ids = (prompt_ids + response_ids)[:max_seq_len]
    mask = ([0] * len(prompt_ids) + [1] * len(response_ids))[:max_seq_len]
    if sum(mask) == 0:
        # keep at least one supervised position so the example contributes
        mask[-1] = 1
    return ids, mask


def batch_tensors(
    records: list[Record], max_seq_len: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad a record batch to a rectangular (ids, loss_mask) pair."""
    encoded = [encode_example(record, max_seq_len) for record in records]
    width = max(len(ids) for ids, _ in encoded)
    ids_out = torch.full((len(encoded), width), PAD_ID, dtype=torch.long)
    mask_out = torch.zeros((len(encoded), width), dtype=torch.long)
    for row, (ids, mask) in enumerate(encoded):
        ids_out[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        mask_out[row, : len(mask)] = torch.tensor(mask, dtype=torch.long)
    return ids_out, mask_out
