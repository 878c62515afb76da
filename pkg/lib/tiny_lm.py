import hashlib
import logging
import math
import re
from typing import Iterable, List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

logger = logging.getLogger("TinyLM")

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
YES_TOKEN = "Yes"
NO_TOKEN = "No"
RESERVED_TOKENS = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN, YES_TOKEN, NO_TOKEN]

TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]")
# No space is written before these when decoding
_CLOSING = set(".,?!:;)%")


class Tokenizer:
    """Word and punctuation tokens, lowercased except the Yes/No label tokens"""

    def __init__(self, vocabulary: List[str]):
        if vocabulary[: len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise ValueError("Vocabulary must start with the reserved tokens")
        self.vocabulary = list(vocabulary)
        self.ids = {token: i for i, token in enumerate(self.vocabulary)}

    def __len__(self):
        return len(self.vocabulary)

    @staticmethod
    def split(text: str) -> List[str]:
        tokens = []
        for token in TOKEN_PATTERN.findall(text):
            tokens.append(token if token in (YES_TOKEN, NO_TOKEN) else token.lower())
        return tokens

    def token_id(self, token: str) -> int:
        return self.ids.get(token, self.ids[UNK_TOKEN])

    def encode(self, text: str, bos: bool = True) -> List[int]:
        ids = [self.token_id(token) for token in self.split(text)]
        return [self.ids[BOS_TOKEN]] + ids if bos else ids

    def decode(self, ids: Iterable[int]) -> str:
        text = ""
        for i in ids:
            token = self.vocabulary[i]
            if token in (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN):
                continue
            if text and token not in _CLOSING:
                text += " "
            text += token
        return text

    @property
    def yes_id(self) -> int:
        return self.ids[YES_TOKEN]

    @property
    def no_id(self) -> int:
        return self.ids[NO_TOKEN]

    @property
    def eos_id(self) -> int:
        return self.ids[EOS_TOKEN]

    def to_dict(self) -> dict:
        return {"vocabulary": self.vocabulary}


def build_tokenizer(texts: Iterable[str]) -> Tokenizer:
    tokens = set()
    for text in texts:
        tokens.update(Tokenizer.split(text))
    tokens -= set(RESERVED_TOKENS)
    return Tokenizer(RESERVED_TOKENS + sorted(tokens))


def tokenizer_from_dict(values: dict) -> Tokenizer:
    return Tokenizer(list(values["vocabulary"]))


class CausalSelfAttention(nn.Module):
    def __init__(self, d_lm: int, n_heads: int, max_positions: int):
        super().__init__()
        if d_lm % n_heads != 0:
            raise ValueError("The number of heads must divide d_lm")
        self.n_heads = n_heads
        self.head_size = d_lm // n_heads
        self.qkv = nn.Linear(d_lm, 3 * d_lm, bias=False)
        self.proj = nn.Linear(d_lm, d_lm, bias=False)
        tril = torch.tril(torch.ones(max_positions, max_positions, dtype=torch.bool))
        self.register_buffer("tril", tril, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, T, C = x.shape
        q, k, v = self.qkv(x).split(C, dim=-1)
        q = q.view(B, T, self.n_heads, self.head_size).transpose(1, 2)
        k = k.view(B, T, self.n_heads, self.head_size).transpose(1, 2)
        v = v.view(B, T, self.n_heads, self.head_size).transpose(1, 2)
        weights = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_size)
        weights = weights.masked_fill(~self.tril[:T, :T], float("-inf"))
        weights = F.softmax(weights, dim=-1)
        out = (weights @ v).transpose(1, 2).contiguous().view(B, T, C)
        return self.proj(out)


class DecoderBlock(nn.Module):
    def __init__(self, d_lm: int, n_heads: int, max_positions: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_lm)
        self.attention = CausalSelfAttention(d_lm, n_heads, max_positions)
        self.ln2 = nn.LayerNorm(d_lm)
        self.feed_forward = nn.Sequential(
            nn.Linear(d_lm, 4 * d_lm), nn.GELU(), nn.Linear(4 * d_lm, d_lm)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attention(self.ln1(x))
        return x + self.feed_forward(self.ln2(x))


class TinyDecoderLM(nn.Module):
    """Small decoder-only language model with a tied output head.

    An optional prefix of continuous vectors is placed before the token
    embeddings; it takes positions like any token.
    """

    def __init__(
        self,
        vocab_size: int,
        d_lm: int = 128,
        n_heads: int = 4,
        n_blocks: int = 2,
        max_positions: int = 1024,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.d_lm = d_lm
        self.n_heads = n_heads
        self.n_blocks = n_blocks
        self.max_positions = max_positions
        self.frozen = False

        self.token_embedding = nn.Embedding(vocab_size, d_lm)
        self.position_embedding = nn.Embedding(max_positions, d_lm)
        self.blocks = nn.ModuleList(
            [DecoderBlock(d_lm, n_heads, max_positions) for _ in range(n_blocks)]
        )
        self.ln_f = nn.LayerNorm(d_lm)
        nn.init.normal_(self.token_embedding.weight, std=0.02)
        nn.init.normal_(self.position_embedding.weight, std=0.02)

    def hyperparameters(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_lm": self.d_lm,
            "n_heads": self.n_heads,
            "n_blocks": self.n_blocks,
            "max_positions": self.max_positions,
        }

    def forward(self, ids: torch.Tensor, prefix: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Next-token logits for every position, prefix positions included"""
        x = self.token_embedding(ids)
        if prefix is not None:
            if prefix.shape[-1] != self.d_lm:
                raise ValueError(
                    "Prefix width " + str(prefix.shape[-1]) + " does not match d_lm " + str(self.d_lm)
                )
            x = torch.cat([prefix.to(x.dtype), x], dim=1)
        T = x.shape[1]
        if T > self.max_positions:
            raise ValueError(
                "Sequence of " + str(T) + " positions exceeds the limit of " + str(self.max_positions)
            )
        x = x + self.position_embedding(torch.arange(T, device=x.device))
        for block in self.blocks:
            x = block(x)
        return self.ln_f(x) @ self.token_embedding.weight.t()

    def freeze(self):
        for parameter in self.parameters():
            parameter.requires_grad_(False)
        self.eval()
        self.frozen = True
        return self

    def parameter_digest(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in sorted(self.state_dict().items()):
            digest.update(name.encode("utf-8"))
            digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return digest.hexdigest()


def warm_train(
    lm: TinyDecoderLM,
    sequences: List[List[int]],
    epochs: int,
    lr: float,
    rng,
    batch_size: int = 8,
    callback=None,
) -> List[dict]:
    """Next-token training on templated prompts, before the model is frozen.

    A zero prefix vector keeps positions aligned with the graph-token setup.
    """
    if lm.frozen:
        raise ValueError("Cannot warm-train a frozen language model")
    lm.train()
    optimizer = torch.optim.Adam(lm.parameters(), lr=lr)
    prefix = torch.zeros(1, 1, lm.d_lm)
    log = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(sequences))
        total = 0.0
        for start in range(0, len(order), batch_size):
            chosen = order[start : start + batch_size]
            optimizer.zero_grad()
            batch_loss = 0.0
            for i in chosen:
                ids = torch.tensor(sequences[i], dtype=torch.long).unsqueeze(0)
                logits = lm(ids[:, :-1], prefix=prefix)
                # Prefix position predicts the first token
                loss = F.cross_entropy(logits[0], ids[0]) / len(chosen)
                loss.backward()
                batch_loss += float(loss)
            optimizer.step()
            total += batch_loss * len(chosen)
        record = {"epoch": epoch, "lm_loss": total / max(len(sequences), 1)}
        log.append(record)
        logger.info("Warm-up epoch " + str(epoch) + " loss " + str(round(record["lm_loss"], 5)))
        if callback:
            callback(step="LM warm-up", status="epoch " + str(epoch), progress=100.0 * epoch / epochs)
    lm.eval()
    return log
