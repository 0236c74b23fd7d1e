"""Synthetic translation corpora matched to the synthetic models.

The language translates word by word. Each source word has the general
sense the model's lexicon predicts. A few "ambiguous" source words switch to
a domain-specific second sense when a trigger word sits next to them, on
the left for some words and on the right for others. The model never learns
the second sense, so only retrieval from in-domain data can recover it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import RESERVED_TOKENS, SentencePair, Vocabulary, write_corpus
from .metrics import WSDItem
from .model import SyntheticATModel, SyntheticModelConfig, _hash64


@dataclass(frozen=True)
class LanguageConfig:
    domain_seed: int = 17
    n_ambiguous: int = 8
    # share of source words that trigger the second sense; 0.5 balances the senses
    trigger_fraction: float = 0.5
    ambiguous_rate: float = 0.3
    min_len: int = 4
    max_len: int = 10
    # keeping sentence-initial words unambiguous lets a model-only first step be right
    ambiguous_initial: bool = False

    def __post_init__(self) -> None:
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if not 0.0 <= self.trigger_fraction <= 1.0 or not 0.0 <= self.ambiguous_rate <= 1.0:
            raise ValueError("fractions must lie in [0, 1]")


@dataclass(frozen=True)
class Sense:
    second: int
    side: str  # "left" or "right"


class SyntheticLanguage:
    def __init__(self, model_config: SyntheticModelConfig, config: LanguageConfig = LanguageConfig()):
        self.model_config = model_config
        self.config = config
        lexicon_model = SyntheticATModel(model_config)
        self.lexicon = lexicon_model.lexicon
        sources = list(lexicon_model.source_ids)
        targets = list(lexicon_model.target_ids)
        if config.n_ambiguous >= len(sources):
            raise ValueError("too many ambiguous words for the vocabulary")
        rng = np.random.default_rng(_hash64(config.domain_seed, "domain"))
        ambiguous = sorted(int(s) for s in rng.choice(sources, config.n_ambiguous, replace=False))
        self.plain = [s for s in sources if s not in set(ambiguous)]
        n_trig = int(round(config.trigger_fraction * len(sources)))
        self.triggers = frozenset(int(s) for s in rng.choice(sources, n_trig, replace=False))
        self.senses: dict[int, Sense] = {}
        for i, s in enumerate(ambiguous):
            options = [t for t in targets if t != self.lexicon(s)]
            self.senses[s] = Sense(second=int(rng.choice(options)), side="right" if i % 2 == 0 else "left")

    @property
    def ambiguous(self) -> list[int]:
        return sorted(self.senses)

    def _uses_second_sense(self, source: tuple[int, ...], t: int) -> bool:
        sense = self.senses.get(source[t])
        if sense is None:
            return False
        j = t + 1 if sense.side == "right" else t - 1
        return 0 <= j < len(source) and source[j] in self.triggers

    def translate(self, source) -> tuple[int, ...]:
        source = tuple(source)
        out = []
        for t, s in enumerate(source):
            out.append(self.senses[s].second if self._uses_second_sense(source, t) else self.lexicon(s))
        return tuple(out)

    def contrastive(self, source, target) -> list[tuple[int, ...]]:
        """Targets with one ambiguous word flipped to its other sense."""
        source, target = tuple(source), tuple(target)
        out = []
        for t, s in enumerate(source):
            if s in self.senses:
                other = self.lexicon(s) if target[t] == self.senses[s].second else self.senses[s].second
                out.append(target[:t] + (other,) + target[t + 1 :])
        return out

    def sample_source(self, rng: np.random.Generator) -> tuple[int, ...]:
        cfg = self.config
        length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        out = []
        for t in range(length):
            if rng.random() < cfg.ambiguous_rate and (t > 0 or cfg.ambiguous_initial):
                out.append(int(rng.choice(self.ambiguous)))
            else:
                out.append(int(rng.choice(self.plain)))
        return tuple(out)

    def sample_pairs(self, count: int, seed: int, exclude: set | None = None) -> list[SentencePair]:
        """``count`` pairs with distinct sources, none of them in ``exclude``."""
        rng = np.random.default_rng(_hash64(seed, "sentences"))
        seen = set(exclude or ())
        pairs = []
        attempts = 0
        while len(pairs) < count:
            attempts += 1
            if attempts > 100 * count + 1000:
                raise RuntimeError("could not sample enough distinct sources")
            src = self.sample_source(rng)
            if src in seen:
                continue
            seen.add(src)
            pairs.append(SentencePair(src, self.translate(src)))
        return pairs

    def wsd_items(self, pairs) -> list[WSDItem]:
        items = []
        for p in pairs:
            contrast = self.contrastive(p.source, p.target)
            if contrast:
                items.append(WSDItem(p.source, p.target, tuple(contrast)))
        return items


def synthetic_vocabulary(vocab_size: int) -> Vocabulary:
    m = (vocab_size - 4) // 2
    tokens = list(RESERVED_TOKENS) + [f"s{i}" for i in range(m)] + [f"t{i}" for i in range(m)]
    return Vocabulary(tokens)


MEMORIZE_MODEL = dict(noise_scale=0.0, first_pass_noise=0.0, confusion=0.0)
ABLATION_MODEL = dict(noise_scale=0.0, first_pass_noise=0.5, confusion=0.05)


@dataclass
class SyntheticWorld:
    model_config: SyntheticModelConfig
    language: SyntheticLanguage
    vocab: Vocabulary
    train: list[SentencePair]
    eval: list[SentencePair] = field(default_factory=list)


def make_world(
    seed: int = 17,
    n_train: int = 2000,
    n_eval: int = 200,
    profile: str = "ablation",
    model_overrides: dict | None = None,
    language_overrides: dict | None = None,
) -> SyntheticWorld:
    """Model config, language and disjoint train/eval corpora from one seed."""
    if profile == "ablation":
        base = dict(ABLATION_MODEL)
    elif profile == "memorize":
        base = dict(MEMORIZE_MODEL)
    else:
        raise ValueError(f"unknown profile {profile!r}")
    base.update(model_overrides or {})
    model_config = SyntheticModelConfig(seed=seed, **base)
    language = SyntheticLanguage(model_config, LanguageConfig(domain_seed=seed, **(language_overrides or {})))
    train = language.sample_pairs(n_train, seed)
    eval_pairs = language.sample_pairs(n_eval, seed + 1, exclude={p.source for p in train}) if n_eval else []
    return SyntheticWorld(model_config, language, synthetic_vocabulary(model_config.vocab_size), train, eval_pairs)


def write_world(world: SyntheticWorld, out_dir: str | Path) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "train": out / "train.jsonl",
        "eval": out / "eval.jsonl",
        "vocab": out / "vocab.txt",
        "model_config": out / "model.json",
        "wsd": out / "wsd.jsonl",
    }
    write_corpus(paths["train"], world.train, world.vocab)
    write_corpus(paths["eval"], world.eval, world.vocab)
    world.vocab.save(paths["vocab"])
    world.model_config.save(paths["model_config"])
    v = world.vocab
    with open(paths["wsd"], "w", encoding="utf-8") as fh:
        for item in world.language.wsd_items(world.train):
            rec = {
                "source": v.detokenize(item.source),
                "reference": v.detokenize(item.reference),
                "contrastive": [v.detokenize(c) for c in item.contrastive],
            }
            fh.write(json.dumps(rec) + "\n")
    with open(out / "language.json", "w") as fh:
        json.dump(asdict(world.language.config), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {k: str(p) for k, p in paths.items()}
