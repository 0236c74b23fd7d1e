"""N-gram key/value datastore: building, persistence, size reporting.

A datastore entry at target position t (1-indexed, t >= n) has the pooled
hidden states of positions t-n+1..t as its key and the target tokens at
those positions as its value. With n = 1 this is the usual token-level
store.
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import EOS, SentencePair

MAGIC = b"NKNNDS\x00\x01"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIQBBBxH")


class DatastoreError(ValueError):
    """Inconsistent datastore contents or build inputs."""


class CorruptFileError(DatastoreError):
    pass


class VersionError(DatastoreError):
    pass


class Pooling(enum.IntEnum):
    MEAN = 0
    # key is the last hidden state only; the value is still the n-gram tuple
    LAST = 1


class KeySource(enum.IntEnum):
    AT = 0
    NAT_FIRST = 1
    NAT_SECOND = 2


@dataclass(frozen=True)
class NGramConfig:
    n: int = 2
    pooling: Pooling = Pooling.MEAN

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        object.__setattr__(self, "pooling", Pooling(self.pooling))


@dataclass(frozen=True)
class NGramEntry:
    key: np.ndarray
    value: tuple[int, ...]
    sentence_index: int
    position: int


def pool_ngram(vectors: Sequence[np.ndarray], n: int | None = None, pooling: Pooling = Pooling.MEAN) -> np.ndarray:
    """Pool n hidden vectors into one float32 key (element-wise mean by default)."""
    if len(vectors) == 0:
        raise ValueError("cannot pool an empty n-gram")
    if n is not None and len(vectors) != n:
        raise ValueError(f"expected {n} vectors, got {len(vectors)}")
    dims = {np.shape(v) for v in vectors}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise ValueError(f"all vectors must share one 1-D shape, got {sorted(dims)}")
    if Pooling(pooling) is Pooling.LAST:
        return np.asarray(vectors[-1], dtype=np.float32).copy()
    stacked = np.stack([np.asarray(v, dtype=np.float64) for v in vectors])
    return stacked.mean(axis=0).astype(np.float32)


@dataclass(eq=False)
class Datastore:
    keys: np.ndarray  # (N, D) float32
    values: np.ndarray  # (N, n) int32
    sentence_index: np.ndarray  # (N,) int32
    positions: np.ndarray  # (N,) int32, 1-indexed end position of the gram
    config: NGramConfig
    dim: int
    vocab_size: int
    model_fingerprint: str
    key_source: KeySource = KeySource.AT
    append_eos: bool = False
    # NAT second-pass keys conditioned on the first-pass candidate instead of the gold target
    candidate_input: bool = False

    def __post_init__(self) -> None:
        self.keys = np.ascontiguousarray(self.keys, dtype=np.float32).reshape(-1, self.dim)
        self.values = np.ascontiguousarray(self.values, dtype=np.int32).reshape(-1, self.config.n)
        self.sentence_index = np.ascontiguousarray(self.sentence_index, dtype=np.int32)
        self.positions = np.ascontiguousarray(self.positions, dtype=np.int32)
        self.key_source = KeySource(self.key_source)
        if not (len(self.keys) == len(self.values) == len(self.sentence_index) == len(self.positions)):
            raise DatastoreError("datastore arrays disagree on entry count")
        if not self.model_fingerprint:
            raise DatastoreError("datastore needs a model fingerprint")

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def n(self) -> int:
        return self.config.n

    @cached_property
    def keys64(self) -> np.ndarray:
        return self.keys.astype(np.float64)

    def entry(self, i: int) -> NGramEntry:
        return NGramEntry(
            key=self.keys[i],
            value=tuple(int(v) for v in self.values[i]),
            sentence_index=int(self.sentence_index[i]),
            position=int(self.positions[i]),
        )

    @property
    def entries(self) -> list[NGramEntry]:
        return [self.entry(i) for i in range(len(self))]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Datastore):
            return NotImplemented
        return (
            self.config == other.config
            and self.dim == other.dim
            and self.vocab_size == other.vocab_size
            and self.model_fingerprint == other.model_fingerprint
            and self.key_source == other.key_source
            and self.append_eos == other.append_eos
            and self.candidate_input == other.candidate_input
            and self.keys.tobytes() == other.keys.tobytes()
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.sentence_index, other.sentence_index)
            and np.array_equal(self.positions, other.positions)
        )


def default_key_source(model) -> KeySource:
    return KeySource.NAT_SECOND if hasattr(model, "second_pass") else KeySource.AT


def sequence_states(
    model,
    pair: SentencePair,
    key_source: KeySource,
    append_eos: bool = False,
    candidate_input: bool = False,
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Hidden states over the gold target, and the tokens they predict.

    AT states are teacher-forced on gold prefixes. NAT states come from the
    requested pass at the gold length; the second pass reads the gold target,
    or with ``candidate_input`` the model's own first-pass argmax, which is
    what it reads at inference time.
    """
    key_source = KeySource(key_source)
    if key_source is KeySource.AT:
        tokens = pair.target + ((EOS,) if append_eos else ())
        rows = [model.step(pair.source, tokens[:t])[0] for t in range(len(tokens))]
        return np.stack(rows).astype(np.float32), tokens
    if key_source is KeySource.NAT_SECOND:
        decoder_input = pair.target
        if candidate_input:
            _, dists = model.first_pass(pair.source, len(pair.target))
            decoder_input = tuple(int(np.argmax(d)) for d in dists)
        hidden, _ = model.second_pass(pair.source, decoder_input)
    else:
        hidden, _ = model.first_pass(pair.source, len(pair.target))
    return hidden.vectors, pair.target


def ngram_queries(states: np.ndarray, n: int, pooling: Pooling = Pooling.MEAN) -> list[np.ndarray]:
    """Pooled queries for end positions n..T, in order."""
    return [pool_ngram(states[t - n : t], n, pooling) for t in range(n, len(states) + 1)]


def expected_entry_count(lengths: Sequence[int], n: int) -> int:
    return sum(max(0, T - n + 1) for T in lengths)


def build_datastore(
    corpus: Sequence[SentencePair],
    model,
    config: NGramConfig,
    key_source: KeySource | None = None,
    append_eos: bool | None = None,
    candidate_input: bool = False,
) -> Datastore:
    """Run the model over every gold target and collect n-gram entries.

    ``append_eos`` defaults to True for autoregressive stores so the decoder
    can retrieve the end-of-sentence decision; NAT stores never append it.
    ``candidate_input`` only applies to second-pass NAT stores.
    """
    if len(corpus) == 0:
        raise DatastoreError("cannot build a datastore from an empty corpus")
    key_source = default_key_source(model) if key_source is None else KeySource(key_source)
    if append_eos is None:
        append_eos = key_source is KeySource.AT
    if append_eos and key_source is not KeySource.AT:
        raise DatastoreError("append_eos only applies to autoregressive stores")
    if candidate_input and key_source is not KeySource.NAT_SECOND:
        raise DatastoreError("candidate_input only applies to second-pass NAT stores")
    n = config.n
    keys, values, sent_idx, positions = [], [], [], []
    for i, pair in enumerate(corpus):
        states, tokens = sequence_states(model, pair, key_source, append_eos, candidate_input)
        if states.shape[1] != model.dim:
            raise DatastoreError(f"sentence {i}: hidden dim {states.shape[1]} != model dim {model.dim}")
        for t, key in zip(range(n, len(tokens) + 1), ngram_queries(states, n, config.pooling)):
            keys.append(key)
            values.append(tokens[t - n : t])
            sent_idx.append(i)
            positions.append(t)
    dim = model.dim
    return Datastore(
        keys=np.stack(keys) if keys else np.zeros((0, dim), np.float32),
        values=np.asarray(values, dtype=np.int32).reshape(-1, n),
        sentence_index=np.asarray(sent_idx, dtype=np.int32),
        positions=np.asarray(positions, dtype=np.int32),
        config=config,
        dim=dim,
        vocab_size=model.vocab_size,
        model_fingerprint=model.fingerprint,
        key_source=key_source,
        append_eos=append_eos,
        candidate_input=candidate_input,
    )


def save_datastore(store: Datastore, path: str | Path) -> int:
    """Write the little-endian binary layout; returns the byte count written."""
    fp = store.model_fingerprint.encode("ascii")
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        store.dim,
        store.n,
        store.vocab_size,
        len(store),
        int(store.config.pooling),
        int(store.key_source),
        int(store.append_eos) | (int(store.candidate_input) << 1),
        len(fp),
    )
    payload = b"".join(
        [
            header,
            fp,
            store.keys.astype("<f4").tobytes(),
            store.values.astype("<i4").tobytes(),
            store.sentence_index.astype("<i4").tobytes(),
            store.positions.astype("<i4").tobytes(),
        ]
    )
    with open(path, "wb") as fh:
        fh.write(payload)
    return len(payload)


def load_datastore(path: str | Path) -> Datastore:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise CorruptFileError(f"{path}: truncated header")
    magic, version, dim, n, vocab, count, pooling, key_source, flags, fp_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptFileError(f"{path}: not a datastore file")
    if version != VERSION:
        raise VersionError(f"{path}: format version {version}, expected {VERSION}")
    if fp_len == 0:
        raise CorruptFileError(f"{path}: missing model fingerprint")
    if flags & ~0b11:
        raise CorruptFileError(f"{path}: unknown flag bits {flags:#04x}")
    off = _HEADER.size
    expected = off + fp_len + count * (4 * dim + 4 * n + 8)
    if len(blob) != expected:
        raise CorruptFileError(f"{path}: size {len(blob)} bytes, expected {expected}")
    try:
        fingerprint = blob[off : off + fp_len].decode("ascii")
        config = NGramConfig(n=n, pooling=Pooling(pooling))
        key_source = KeySource(key_source)
    except (UnicodeDecodeError, ValueError) as exc:
        raise CorruptFileError(f"{path}: bad header field ({exc})") from None
    off += fp_len

    def take(dtype: str, size: int) -> np.ndarray:
        nonlocal off
        arr = np.frombuffer(blob, dtype=dtype, count=size, offset=off)
        off += arr.nbytes
        return arr

    keys = take("<f4", count * dim).reshape(count, dim)
    values = take("<i4", count * n).reshape(count, n)
    sent_idx = take("<i4", count)
    positions = take("<i4", count)
    return Datastore(
        keys=keys.astype(np.float32),
        values=values.astype(np.int32),
        sentence_index=sent_idx.astype(np.int32),
        positions=positions.astype(np.int32),
        config=config,
        dim=dim,
        vocab_size=vocab,
        model_fingerprint=fingerprint,
        key_source=key_source,
        append_eos=bool(flags & 1),
        candidate_input=bool(flags & 2),
    )


def report_size(path: str | Path) -> int:
    return os.path.getsize(path)
