import hashlib
import logging
import re
import threading
from typing import Dict, List

import numpy as np

from lib.embedders.embedder_interface import EmbedderInterface
from lib.exceptions import DataError

logger = logging.getLogger("Embedder")

TOKEN_PATTERN = re.compile(r"\w+")


def text_tokens(text: str) -> List[str]:
    return TOKEN_PATTERN.findall(text.lower())


def text_ngrams(text: str) -> List[str]:
    tokens = text_tokens(text)
    bigrams = [tokens[i] + " " + tokens[i + 1] for i in range(len(tokens) - 1)]
    return tokens + bigrams


def _keyed_hash(feature: str, person: bytes) -> int:
    digest = hashlib.blake2b(
        feature.encode("utf-8"), digest_size=8, person=person
    ).digest()
    return int.from_bytes(digest, "little")


class HashingEmbedder(EmbedderInterface):
    """Signed feature hashing of word unigrams and bigrams, L2-normalized"""

    def __init__(self, dim: int = 128):
        if dim < 1:
            raise DataError("Embedding dimension must be positive")
        self.dim = dim
        self._cache: Dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _bucket(self, feature: str) -> int:
        return _keyed_hash(feature, b"sg-bucket") % self.dim

    def _sign(self, feature: str) -> float:
        return 1.0 if _keyed_hash(feature, b"sg-sign") & 1 else -1.0

    def embed_text(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise DataError("Cannot embed an empty text")
        with self._lock:
            cached = self._cache.get(text)
        if cached is not None:
            return cached.copy()

        vector = np.zeros(self.dim, dtype=np.float64)
        for feature in text_ngrams(text):
            vector[self._bucket(feature)] += self._sign(feature)
        norm = np.linalg.norm(vector)
        if norm == 0.0:
            # Punctuation-only text, or every count cancelled out
            feature = "text:" + text
            vector[self._bucket(feature)] = self._sign(feature)
            norm = 1.0
        vector = (vector / norm).astype(np.float32)

        with self._lock:
            self._cache[text] = vector
        return vector.copy()

    def describe(self) -> dict:
        return {"mode": "HASHING", "dim": self.dim}
