import numpy as np


class EmbedderInterface:
    dim: int

    def embed_text(self, text: str) -> np.ndarray:
        """Embed a question or topic text into a float32 vector of length dim"""
        pass

    def describe(self) -> dict:
        """Settings needed to rebuild the same embedder later"""
        pass
