import numpy as np

from nknn.datastore import Datastore, NGramConfig


def store_from_keys(keys, values=None, n: int = 1, vocab_size: int = 16, fingerprint: str = "test") -> Datastore:
    """A datastore over arbitrary keys, for exercising search in isolation."""
    keys = np.asarray(keys, dtype=np.float32)
    count, dim = keys.shape
    if values is None:
        values = (np.arange(count * n) % vocab_size).reshape(count, n)
    return Datastore(
        keys=keys,
        values=np.asarray(values).reshape(count, n),
        sentence_index=np.arange(count),
        positions=np.full(count, n),
        config=NGramConfig(n),
        dim=dim,
        vocab_size=vocab_size,
        model_fingerprint=fingerprint,
    )
