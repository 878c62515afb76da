import hashlib
import logging
from pathlib import Path
from typing import Dict, Iterable, Tuple

import numpy as np

from lib.embedders.embedder_interface import EmbedderInterface
from lib.exceptions import DataError, EmbeddingLookupError

logger = logging.getLogger("Embedder")


def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class PrecomputedEmbedder(EmbedderInterface):
    """Exact lookup in a "text-hash <tab> floats" vector file"""

    def __init__(self, vectors_path):
        self.vectors_path = str(vectors_path)
        self.table: Dict[str, np.ndarray] = {}
        self.dim = 0
        self._load()

    def _load(self):
        try:
            lines = Path(self.vectors_path).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise DataError("Cannot read vectors " + self.vectors_path + ": " + str(e))

        for line_number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            key, _, values = line.partition("\t")
            try:
                vector = np.asarray(
                    [float(v) for v in values.replace(",", " ").split()],
                    dtype=np.float32,
                )
            except ValueError:
                raise DataError(
                    self.vectors_path + " line " + str(line_number) + ": bad float list"
                )
            if self.dim == 0:
                self.dim = len(vector)
            if len(vector) == 0 or len(vector) != self.dim:
                raise DataError(
                    self.vectors_path
                    + " line "
                    + str(line_number)
                    + ": expected "
                    + str(self.dim)
                    + " values"
                )
            self.table[key.strip()] = vector
        if not self.table:
            raise DataError("Vector file " + self.vectors_path + " is empty")
        logger.info(
            "Loaded "
            + str(len(self.table))
            + " precomputed vectors of dimension "
            + str(self.dim)
        )

    def embed_text(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise DataError("Cannot embed an empty text")
        vector = self.table.get(text_key(text))
        if vector is None:
            raise EmbeddingLookupError("No precomputed vector for text: " + text)
        return vector.copy()

    def describe(self) -> dict:
        return {"mode": "PRECOMPUTED", "dim": self.dim, "vectors": self.vectors_path}


def write_precomputed_vectors(vectors_path, vectors: Iterable[Tuple[str, np.ndarray]]):
    with open(vectors_path, "w", encoding="utf-8", newline="\n") as vectors_file:
        for text, vector in vectors:
            vectors_file.write(
                text_key(text)
                + "\t"
                + " ".join(repr(float(v)) for v in vector)
                + "\n"
            )
