"""Sequence-model contracts and deterministic synthetic stand-ins.

The synthetic models never train. Every hidden vector is a weighted sum of
seeded hash embeddings of a few local features, plus a small full-context
hash term so that distinct contexts never share a vector. Token
distributions are a softmax over seeded per-context logits with a bump on
the token the model's built-in lexicon prefers.

Token id layout for a vocabulary of size V: ids 0-3 are reserved, the next
``m = (V - 4) // 2`` ids are source words and the following ``m`` ids are
target words.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .core import BOS, EOS, PAD, UNK, ConfigError, HiddenSequence

_MASKED = (PAD, BOS, UNK)


class ModelInterfaceAT(Protocol):
    dim: int
    vocab_size: int

    @property
    def fingerprint(self) -> str: ...

    def step(self, source: Sequence[int], prefix: Sequence[int]) -> tuple[np.ndarray, np.ndarray]: ...


class ModelInterfaceNAT(Protocol):
    dim: int
    vocab_size: int

    @property
    def fingerprint(self) -> str: ...

    def predict_length(self, source: Sequence[int]) -> int: ...

    def first_pass(self, source: Sequence[int], length: int) -> tuple[HiddenSequence, list[np.ndarray]]: ...

    def second_pass(
        self, source: Sequence[int], candidate: Sequence[int]
    ) -> tuple[HiddenSequence, list[np.ndarray]]: ...


@dataclass(frozen=True)
class SyntheticModelConfig:
    """Knobs of the synthetic models.

    Weights are relative to a unit-norm feature embedding; the final vector
    is multiplied by ``hidden_scale``.
    """

    dim: int = 32
    seed: int = 17
    noise_scale: float = 0.0
    vocab_size: int = 104
    hidden_scale: float = 10.0
    context_weight: float = 0.05
    prev_weight: float = 0.7
    left_weight: float = 0.7
    window_weight: float = 0.05
    position_weight: float = 0.3
    first_pass_noise: float = 0.0
    confidence: float = 5.0
    logit_noise: float = 1.0
    confusion: float = 0.0

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ConfigError(f"dim must be >= 2, got {self.dim}")
        if self.vocab_size < 6:
            raise ConfigError(f"vocab_size must be >= 6, got {self.vocab_size}")
        for name in ("noise_scale", "first_pass_noise", "logit_noise", "hidden_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.confusion <= 1.0:
            raise ConfigError("confusion must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticModelConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not a flat JSON object ({exc.msg})") from None
        if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
            raise ConfigError(f"{path}: model config must be a flat key/value object")
        return cls.from_dict(data)

    def fingerprint(self, kind: str) -> str:
        blob = json.dumps({"kind": kind, **self.to_dict()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _hash64(*parts: object) -> int:
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


class _SyntheticBase:
    kind = "base"

    def __init__(self, config: SyntheticModelConfig):
        self.config = config
        self.dim = config.dim
        self.vocab_size = config.vocab_size
        self.n_words = (config.vocab_size - 4) // 2
        rng = np.random.default_rng(_hash64(config.seed, "lexicon"))
        self._perm = rng.permutation(self.n_words)
        self._emb_cache: dict[tuple, np.ndarray] = {}

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint(self.kind)

    # Token layout helpers -------------------------------------------------

    @property
    def source_ids(self) -> range:
        return range(4, 4 + self.n_words)

    @property
    def target_ids(self) -> range:
        return range(4 + self.n_words, 4 + 2 * self.n_words)

    def lexicon(self, src: int) -> int:
        """Target word the model believes translates ``src``."""
        j = src - 4
        if 0 <= j < self.n_words:
            return 4 + self.n_words + int(self._perm[j])
        return 4 + self.n_words + (src % self.n_words)

    # Hash embeddings -------------------------------------------------------

    def _gauss(self, *key: object) -> np.ndarray:
        rng = np.random.default_rng(_hash64(self.config.seed, *key))
        return rng.standard_normal(self.dim) / np.sqrt(self.dim)

    def _feature(self, *key: object) -> np.ndarray:
        vec = self._emb_cache.get(key)
        if vec is None:
            vec = self._gauss("feat", *key)
            self._emb_cache[key] = vec
        return vec

    def _uniform(self, *key: object) -> float:
        return _hash64(self.config.seed, "u", *key) / 2.0**64

    def _distribution(self, preferred: int, *key: object) -> np.ndarray:
        rng = np.random.default_rng(_hash64(self.config.seed, "logits", *key))
        logits = self.config.logit_noise * rng.random(self.vocab_size)
        logits[preferred] += self.config.confidence
        logits[list(_MASKED)] = -np.inf
        return _softmax(logits)

    def _finish(self, vec: np.ndarray) -> np.ndarray:
        return (self.config.hidden_scale * vec).astype(np.float32)


class SyntheticATModel(_SyntheticBase):
    """Autoregressive stand-in.

    The state for predicting position t mixes the aligned source word, the
    previous target token and a hash of the whole (source, prefix) context.
    It never sees source words to the right of t, which is what makes
    token-level retrieval ambiguous for right-context-dependent words.
    """

    kind = "at"

    def step(self, source: Sequence[int], prefix: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        if not source:
            raise ValueError("empty source")
        cfg = self.config
        source, prefix = tuple(int(s) for s in source), tuple(int(p) for p in prefix)
        t = len(prefix) + 1
        word = source[t - 1] if t <= len(source) else EOS
        prev = prefix[-1] if prefix else BOS
        ctx = (source, prefix)
        vec = self._feature("x", word) + cfg.prev_weight * self._feature("y", prev)
        vec = vec + cfg.context_weight * self._gauss("ctx-at", ctx)
        if cfg.noise_scale:
            vec = vec + cfg.noise_scale * self._gauss("noise-at", ctx)
        preferred = self.lexicon(word) if t <= len(source) else EOS
        return self._finish(vec), self._distribution(preferred, "at", ctx)


class SyntheticNATModel(_SyntheticBase):
    """Non-autoregressive stand-in with a first and a second pass.

    First-pass states see only (source, position). Second-pass states also
    see the candidate tokens at t-1, t, t+1 (clamped at the edges); the left
    neighbour carries ``left_weight``, the other two ``window_weight``.
    """

    kind = "nat"

    def predict_length(self, source: Sequence[int]) -> int:
        return len(source)

    def _aligned(self, source: tuple[int, ...], t: int, length: int) -> int:
        # proportional monotone alignment, identity when lengths agree
        j = -(-t * len(source) // length)
        return source[min(max(j, 1), len(source)) - 1]

    def _preferred(self, source: tuple[int, ...], t: int, length: int) -> int:
        if t > 1 and self._uniform("confuse", source, t) < self.config.confusion:
            return self.lexicon(self._aligned(source, t - 1, length))
        return self.lexicon(self._aligned(source, t, length))

    def first_pass(self, source: Sequence[int], length: int) -> tuple[HiddenSequence, list[np.ndarray]]:
        if not source:
            raise ValueError("empty source")
        if length < 1:
            raise ValueError(f"length must be >= 1, got {length}")
        cfg = self.config
        source = tuple(int(s) for s in source)
        rows, dists = [], []
        for t in range(1, length + 1):
            word = self._aligned(source, t, length)
            vec = self._feature("x", word) + cfg.position_weight * self._feature("pos", t)
            vec = vec + cfg.context_weight * self._gauss("ctx-nat1", source, t)
            if cfg.first_pass_noise:
                vec = vec + cfg.first_pass_noise * self._gauss("noise-nat1", source, t)
            rows.append(self._finish(vec))
            dists.append(self._distribution(self._preferred(source, t, length), "nat1", source, t))
        return HiddenSequence(np.stack(rows)), dists

    def second_pass(
        self, source: Sequence[int], candidate: Sequence[int]
    ) -> tuple[HiddenSequence, list[np.ndarray]]:
        if not source:
            raise ValueError("empty source")
        if len(candidate) == 0:
            raise ValueError("candidate translation must be non-empty")
        cfg = self.config
        source, cand = tuple(int(s) for s in source), tuple(int(c) for c in candidate)
        T = len(cand)
        rows, dists = [], []
        for t in range(1, T + 1):
            window = (cand[max(t - 1, 1) - 1], cand[t - 1], cand[min(t + 1, T) - 1])
            word = self._aligned(source, t, T)
            vec = self._feature("x", word) + cfg.left_weight * self._feature("c-1", window[0])
            vec = vec + cfg.window_weight * (self._feature("c0", window[1]) + self._feature("c+1", window[2]))
            ctx = (source, window, t)
            vec = vec + cfg.context_weight * self._gauss("ctx-nat2", ctx)
            if cfg.noise_scale:
                vec = vec + cfg.noise_scale * self._gauss("noise-nat2", ctx)
            rows.append(self._finish(vec))
            dists.append(self._distribution(self._preferred(source, t, T), "nat2", ctx))
        return HiddenSequence(np.stack(rows)), dists


def synthetic_at_step(
    config: SyntheticModelConfig, source: Sequence[int], prefix: Sequence[int]
) -> tuple[np.ndarray, np.ndarray]:
    return SyntheticATModel(config).step(source, prefix)


def synthetic_nat_passes(
    config: SyntheticModelConfig, source: Sequence[int], candidate: Sequence[int] | None = None
) -> tuple[HiddenSequence, list[np.ndarray]]:
    model = SyntheticNATModel(config)
    if candidate is None:
        return model.first_pass(source, model.predict_length(source))
    return model.second_pass(source, candidate)
