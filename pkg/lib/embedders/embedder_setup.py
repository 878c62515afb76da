from lib.exceptions import ConfigError

from .hashing import HashingEmbedder
from .precomputed import PrecomputedEmbedder


def embedder_setup(mode: str = "HASHING", dim: int = 128, vectors_path=None):
    mode = mode.upper()
    if mode == "HASHING":
        embedder = HashingEmbedder(dim)
    elif mode == "PRECOMPUTED":
        if not vectors_path:
            raise ConfigError("PRECOMPUTED embeddings need a vectors file")
        embedder = PrecomputedEmbedder(vectors_path)
        if dim and embedder.dim != dim:
            raise ConfigError(
                "Vector file has dimension "
                + str(embedder.dim)
                + " but d_in is "
                + str(dim)
            )
    else:
        raise ConfigError("Unknown embedder mode " + mode)

    return embedder
