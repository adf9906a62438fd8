"""Small masked-LM encoder instantiated from container metadata.

State-dict keys match the container tensor names one-to-one, so loading a
checkpoint is a plain name-for-name copy with shape checks and no mapping
table. The LM head is tied to the word embedding (plus an optional bias
tensor); an untied head tensor is also supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from adaptharness import HarnessError
from adaptharness.formats import read_container, write_container

REQUIRED_METADATA = ("vocab_size", "hidden_dim", "num_layers", "num_heads", "tied")


@dataclass
class EncoderConfig:
    vocab_size: int
    hidden_dim: int
    num_layers: int
    num_heads: int
    ffn_dim: int
    max_positions: int
    tied: bool
    has_head_bias: bool

    @classmethod
    def from_metadata(cls, metadata: dict) -> "EncoderConfig":
        missing = [k for k in REQUIRED_METADATA if k not in metadata]
        if missing:
            raise HarnessError(f"checkpoint metadata missing {missing}")
        hidden = int(metadata["hidden_dim"])
        return cls(
            vocab_size=int(metadata["vocab_size"]),
            hidden_dim=hidden,
            num_layers=int(metadata["num_layers"]),
            num_heads=int(metadata["num_heads"]),
            ffn_dim=int(metadata.get("ffn_dim", 4 * hidden)),
            max_positions=int(metadata.get("max_positions", 512)),
            tied=metadata["tied"].lower() == "true",
            has_head_bias=metadata.get("output_bias_tensor", "") == "lm_head.bias",
        )


class Block(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.hidden_dim
        self.attn = nn.ModuleDict(
            {
                "q": nn.Linear(d, d),
                "k": nn.Linear(d, d),
                "v": nn.Linear(d, d),
                "out": nn.Linear(d, d),
            }
        )
        self.norm1 = nn.LayerNorm(d)
        self.ffn = nn.ModuleDict(
            {"fc1": nn.Linear(d, cfg.ffn_dim), "fc2": nn.Linear(cfg.ffn_dim, d)}
        )
        self.norm2 = nn.LayerNorm(d)
        self.heads = cfg.num_heads

    def forward(self, h, pad_mask):
        B, L, d = h.shape
        hd = d // self.heads

        def split(x):
            return x.view(B, L, self.heads, hd).transpose(1, 2)

        q, k, v = split(self.attn.q(h)), split(self.attn.k(h)), split(self.attn.v(h))
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        scores = scores.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        a = torch.softmax(scores, dim=-1) @ v
        a = self.attn.out(a.transpose(1, 2).reshape(B, L, d))
        h = self.norm1(h + a)
        f = self.ffn.fc2(torch.nn.functional.gelu(self.ffn.fc1(h)))
        return self.norm2(h + f)


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.embeddings = nn.ModuleDict(
            {
                "word": nn.Embedding(cfg.vocab_size, cfg.hidden_dim),
                "position": nn.Embedding(cfg.max_positions, cfg.hidden_dim),
            }
        )
        self.embeddings["norm"] = nn.LayerNorm(cfg.hidden_dim)
        self.layers = nn.ModuleList(Block(cfg) for _ in range(cfg.num_layers))

    def forward(self, input_ids, attention_mask):
        L = input_ids.shape[1]
        pos = torch.arange(L, device=input_ids.device)
        h = self.embeddings.word(input_ids) + self.embeddings.position(pos)[None]
        h = self.embeddings["norm"](h)
        pad = attention_mask == 0
        for layer in self.layers:
            h = layer(h, pad)
        return h


class EncoderForMLM(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.encoder = Encoder(cfg)
        if cfg.tied:
            self.lm_head_weight = None
        else:
            self.lm_head = nn.Linear(cfg.hidden_dim, cfg.vocab_size, bias=False)
        if cfg.has_head_bias:
            self.lm_bias = nn.Parameter(torch.zeros(cfg.vocab_size))
        else:
            self.lm_bias = None

    def logits(self, h):
        cfg = self.encoder.cfg
        if cfg.tied:
            logits = h @ self.encoder.embeddings.word.weight.T
        else:
            logits = self.lm_head(h)
        if self.lm_bias is not None:
            logits = logits + self.lm_bias
        return logits

    def forward(self, input_ids, attention_mask, labels=None):
        h = self.encoder(input_ids, attention_mask)
        logits = self.logits(h)
        if labels is None:
            return logits, None
        loss = torch.nn.functional.cross_entropy(
            logits.view(-1, logits.shape[-1]), labels.view(-1).long(), ignore_index=-100
        )
        return logits, loss


# Container tensor name <-> state dict key. The encoder prefix differs for
# the task heads, so conversion maps names relative to the encoder.
def _state_key(tensor_name: str) -> str:
    return {
        "lm_head.weight": "lm_head.weight",
        "lm_head.bias": "lm_bias",
    }.get(tensor_name, f"encoder.{tensor_name}")


def convert_checkpoint(path) -> tuple[EncoderForMLM, dict[str, str]]:
    """Instantiate the declared architecture and copy every container
    tensor into it bit-exactly (f32 both sides)."""
    tensors, metadata = read_container(path)
    cfg = EncoderConfig.from_metadata(metadata)
    model = EncoderForMLM(cfg)
    state = model.state_dict()
    emb_name = metadata.get("embedding_tensor", "embeddings.word.weight")
    if emb_name != "embeddings.word.weight":
        raise HarnessError(f"unexpected embedding tensor name {emb_name!r}")
    for name, arr in tensors.items():
        key = _state_key(name)
        if key not in state:
            raise HarnessError(f"container tensor {name!r} has no slot in the model")
        if tuple(state[key].shape) != arr.shape:
            raise HarnessError(
                f"tensor {name!r} shape {arr.shape} does not match model slot {tuple(state[key].shape)}"
            )
        state[key] = torch.from_numpy(arr.copy())
    missing = [k for k in state if k.startswith("encoder.") and _inverse_key(k) not in tensors]
    if missing:
        raise HarnessError(f"container lacks tensors for: {sorted(missing)[:4]}")
    model.load_state_dict(state)
    model.eval()
    return model, metadata


def _inverse_key(state_key: str) -> str:
    if state_key == "lm_bias":
        return "lm_head.bias"
    return state_key.removeprefix("encoder.")


def export_checkpoint(model: EncoderForMLM, metadata: dict[str, str], path) -> None:
    """Inverse of convert: write the model back as a container file."""
    tensors = {}
    for key, value in model.state_dict().items():
        tensors[_inverse_key(key)] = value.detach().cpu().numpy().astype("<f4")
    write_container(path, tensors, metadata)


def embedding_rows_hash(model: EncoderForMLM) -> str:
    import hashlib

    data = model.encoder.embeddings.word.weight.detach().cpu().numpy().astype("<f4")
    return hashlib.sha256(np.ascontiguousarray(data).tobytes()).hexdigest()
