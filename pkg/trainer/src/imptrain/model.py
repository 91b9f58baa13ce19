"""A small causal transformer used as the desk-scale base model.

The attention projections are plain ``nn.Linear`` modules with the
conventional attribute names (q_proj, k_proj, v_proj, o_proj) so the
adapter glue can address them the same way it would address a real
checkpoint's modules. PROJECTION_NAMES maps the manifest's abstract
projection kinds to each family's concrete attribute names.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from imptrain.data import VOCAB_SIZE
from imptrain.errors import ModelError

# abstract kind -> module attribute name, per base-model family
PROJECTION_NAMES: dict[str, dict[str, str]] = {
    "toy": {
        "query": "q_proj",
        "key": "k_proj",
        "value": "v_proj",
        "output": "o_proj",
    },
}


class CausalSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int) -> None:
        super().__init__()
        if d_model % n_heads != 0:
            raise ModelError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model, bias=False)
        self.k_proj = nn.Linear(d_model, d_model, bias=False)
        self.v_proj = nn.Linear(d_model, d_model, bias=False)
        self.o_proj = nn.Linear(d_model, d_model, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, seq, d_model = x.shape
        shape = (batch, seq, self.n_heads, self.head_dim)
        q = self.q_proj(x).view(shape).transpose(1, 2)
        k = self.k_proj(x).view(shape).transpose(1, 2)
        v = self.v_proj(x).view(shape).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        causal = torch.triu(
            torch.ones(seq, seq, dtype=torch.bool, device=x.device), diagonal=1
        )
        scores = scores.masked_fill(causal, float("-inf"))
        attended = torch.softmax(scores, dim=-1) @ v
        merged = attended.transpose(1, 2).reshape(batch, seq, d_model)
        return self.o_proj(merged)


class Block(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = CausalSelfAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, d_ff),
            nn.GELU(),
            nn.Linear(d_ff, d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        x = x + self.mlp(self.ln2(x))
        return x


class ToyCausalLM(nn.Module):
    """Byte-vocabulary causal LM, two blocks, a few hundred KB of weights."""

    family = "toy"

    def __init__(
        self,
        vocab_size: int = VOCAB_SIZE,
        d_model: int = 64,
        n_heads: int = 4,
        n_layers: int = 2,
        d_ff: int = 128,
        max_seq_len: int = 256,
    ) -> None:
        super().__init__()
        self.max_seq_len = max_seq_len
        self.tok_embed = nn.Embedding(vocab_size, d_model)
        self.pos_embed = nn.Embedding(max_seq_len, d_model)
        self.blocks = nn.ModuleList(
            Block(d_model, n_heads, d_ff) for _ in range(n_layers)
        )
        self.ln_final = nn.LayerNorm(d_model)
        self.lm_head = nn.Linear(d_model, vocab_size, bias=False)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        batch, seq = ids.shape
        if seq > self.max_seq_len:
            raise ModelError(f"sequence length {seq} exceeds cap {self.max_seq_len}")
        positions = torch.arange(seq, device=ids.device)
        x = self.tok_embed(ids) + self.pos_embed(positions)[None, :, :]
        for block in self.blocks:
            x = block(x)
        return self.lm_head(self.ln_final(x))


def build_base_model(
    base_ref: str, *, seed: int = 0, max_seq_len: int = 256
) -> ToyCausalLM:
    """Instantiate a base model family by reference.

    Only the built-in toy family is loadable at desk scale; a manifest
    referencing a full-size checkpoint still trains here by passing
    base_ref="toy" in the run config.
    """
    if base_ref != "toy":
        raise ModelError(
            f"cannot load base model {base_ref!r}; available families: toy"
        )
    generator_state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        return ToyCausalLM(max_seq_len=max_seq_len)
    finally:
        torch.random.set_rng_state(generator_state)
