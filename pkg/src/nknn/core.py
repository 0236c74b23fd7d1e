"""Token and corpus data model shared by every other module."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<s>", "</s>", "<unk>")


class CorpusError(ValueError):
    """Malformed or invalid corpus record."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class Vocabulary:
    """Ordered token alphabet with the four reserved ids at 0-3."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise ConfigError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary tokens must be unique")
        self._tokens = tuple(tokens)
        self._index = {tok: i for i, tok in enumerate(self._tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def __hash__(self) -> int:
        return hash(self._tokens)

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token_of(self, idx: int) -> str:
        return self._tokens[idx]

    def tokenize(self, text: str) -> list[int]:
        return [self.id_of(tok) for tok in text.split()]

    def detokenize(self, ids: Iterable[int], strip_special: bool = True) -> str:
        out = []
        for i in ids:
            i = int(i)
            if strip_special and i in (PAD, BOS, EOS):
                continue
            out.append(self._tokens[i])
        return " ".join(out)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


def build_vocab(lines: Iterable[str], max_size: int) -> Vocabulary:
    """Reserved tokens first, then the most frequent tokens.

    Frequency ties are broken lexicographically so identical input always
    yields the same ordering.
    """
    if max_size < 5:
        raise ConfigError(f"max_size must be >= 5, got {max_size}")
    counts: Counter[str] = Counter()
    for line in lines:
        counts.update(line.split())
    for tok in RESERVED_TOKENS:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    body = [tok for tok, _ in ranked[: max_size - len(RESERVED_TOKENS)]]
    return Vocabulary(list(RESERVED_TOKENS) + body)


@dataclass(frozen=True)
class SentencePair:
    source: tuple[int, ...]
    target: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.source or not self.target:
            raise CorpusError("source and target must both be non-empty")
        object.__setattr__(self, "source", tuple(int(t) for t in self.source))
        object.__setattr__(self, "target", tuple(int(t) for t in self.target))


@dataclass(frozen=True)
class HiddenSequence:
    """Per-position hidden vectors, one row per target position."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.vectors, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError("hidden sequence must be 2-D (T, D)")
        if not np.all(np.isfinite(v)):
            raise ValueError("hidden sequence contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


def _parse_record(line: str, lineno: int) -> tuple[str, str]:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict) or not isinstance(rec.get("source"), str) or not isinstance(
        rec.get("target"), str
    ):
        raise CorpusError(f"line {lineno}: record needs string 'source' and 'target' fields")
    return rec["source"], rec["target"]


def read_corpus_text(path: str | Path) -> list[tuple[str, str]]:
    """Raw (source, target) strings from a JSONL corpus, blank lines skipped."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            out.append(_parse_record(line, lineno))
    return out


def load_corpus(path: str | Path, vocab: Vocabulary) -> list[SentencePair]:
    pairs = []
    for lineno, (src, tgt) in enumerate(read_corpus_text(path), start=1):
        s, t = vocab.tokenize(src), vocab.tokenize(tgt)
        if not s or not t:
            raise CorpusError(f"record {lineno}: empty source or target")
        pairs.append(SentencePair(tuple(s), tuple(t)))
    return pairs


def write_corpus(path: str | Path, pairs: Iterable[SentencePair], vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {"source": vocab.detokenize(p.source), "target": vocab.detokenize(p.target)}
            fh.write(json.dumps(rec) + "\n")
