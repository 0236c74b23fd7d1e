"""The AT and NAT ablation grids: five AT settings, six NAT settings."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

from .ann import IVFConfig, VectorIndex, train_ivf
from .core import SentencePair
from .datastore import Datastore, KeySource, NGramConfig, Pooling, build_datastore
from .decode_at import BeamConfig, beam_search, decode_at
from .decode_nat import NATDecodeConfig, decode_nat, plain_nat_decode
from .knnmath import RetrievalParams
from .metrics import corpus_bleu, repetition_ratio, topk_accuracy
from .model import SyntheticATModel, SyntheticModelConfig, SyntheticNATModel

AT_ROWS = (
    "(1): Base AT",
    "(2): (1) + kNN",
    "(3): (2) + Update Beam",
    "(4): (1) + n-kNN w/o Update Beam",
    "(5): n-kNN + Update Beam",
)
NAT_ROWS = (
    "(1): Base NAT",
    "(2): (1) + kNN",
    "(3): (1) + n-kNN",
    "(4): (1) + Two-Pass",
    "(5): (2) + Two-Pass",
    "(6): n-kNN + Two-Pass",
)


@dataclass(frozen=True)
class AblationSettings:
    lam_at: float = 0.7
    lam_nat: float = 0.8
    n: int = 2
    k: int = 8
    tau: float = 10.0
    beam: int = 4
    max_len: int = 64
    topk: int = 5
    use_ivf: bool = True
    n_probe: int | None = None
    nat_candidate_input: bool = True
    seed: int = 17


@dataclass
class AblationCell:
    model: str  # "AT" or "NAT"
    label: str
    bleu: float
    repetition: float
    topk_accuracy: float | None
    outputs: list[list[int]]

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("outputs")
        return d


@dataclass
class AblationTable:
    cells: list[AblationCell]
    settings: AblationSettings

    def cell(self, model: str, label_prefix: str) -> AblationCell:
        for c in self.cells:
            if c.model == model and c.label.startswith(label_prefix):
                return c
        raise KeyError(f"{model} {label_prefix}")

    def bleu(self, model: str, row: int) -> float:
        return self.cell(model, f"({row})").bleu

    def format(self) -> str:
        lines = [f"{'Model':<4} {'Setting':<36} {'BLEU':>7} {'Rep':>7} {'Top-k':>7}"]
        for c in self.cells:
            topk = "-" if c.topk_accuracy is None else f"{c.topk_accuracy:.4f}"
            lines.append(f"{c.model:<4} {c.label:<36} {c.bleu:7.2f} {c.repetition:7.4f} {topk:>7}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"settings": asdict(self.settings), "rows": [c.summary() for c in self.cells]}


def _index_for(store: Datastore, settings: AblationSettings) -> VectorIndex | None:
    if not settings.use_ivf or len(store) == 0:
        return None
    overrides = {} if settings.n_probe is None else {"n_probe": settings.n_probe}
    cfg = IVFConfig.for_size(len(store), seed=settings.seed, **overrides)
    return train_ivf(store, cfg)


def run_ablation(
    train: Sequence[SentencePair],
    eval_pairs: Sequence[SentencePair],
    model_config: SyntheticModelConfig,
    settings: AblationSettings = AblationSettings(),
) -> AblationTable:
    at, nat = SyntheticATModel(model_config), SyntheticNATModel(model_config)
    sources = [p.source for p in eval_pairs]
    refs = [p.target for p in eval_pairs]
    n, s = settings.n, settings
    cells: list[AblationCell] = []

    def add(model: str, label: str, outputs, topk=None):
        cells.append(AblationCell(model, label, corpus_bleu(outputs, refs), repetition_ratio(outputs), topk, outputs))

    def store_for(model, gram: int, key_source: KeySource, pooling=Pooling.MEAN):
        cand = s.nat_candidate_input and key_source is KeySource.NAT_SECOND
        store = build_datastore(train, model, NGramConfig(gram, pooling), key_source=key_source, candidate_input=cand)
        return store, _index_for(store, s)

    def at_cell(label: str, gram: int, update: bool, pooling=Pooling.MEAN):
        store, index = store_for(at, gram, KeySource.AT, pooling)
        params = RetrievalParams(k=s.k, tau=s.tau, lam=s.lam_at)
        cfg = BeamConfig(beam_size=s.beam, max_len=s.max_len, params=params, n=gram, update_beam=update)
        outputs = [decode_at(src, at, store, index, cfg) for src in sources]
        add("AT", label, outputs, topk_accuracy(store, index, eval_pairs, at, gram, s.topk))

    def nat_cell(label: str, gram: int, two_pass: bool):
        key_source = KeySource.NAT_SECOND if two_pass else KeySource.NAT_FIRST
        store, index = store_for(nat, gram, key_source)
        cfg = NATDecodeConfig(params=RetrievalParams(k=s.k, tau=s.tau, lam=s.lam_nat), n=gram, two_pass=two_pass)
        outputs = [decode_nat(src, nat, store, index, cfg) for src in sources]
        add("NAT", label, outputs, topk_accuracy(store, index, eval_pairs, nat, gram, s.topk))

    base_cfg = BeamConfig(beam_size=s.beam, max_len=s.max_len)
    add("AT", AT_ROWS[0], [beam_search(src, at, base_cfg) for src in sources])
    at_cell(AT_ROWS[1], 1, update=False)
    # token-level key with n-gram values, so earlier steps can still be re-weighted
    at_cell(AT_ROWS[2], n, update=True, pooling=Pooling.LAST)
    at_cell(AT_ROWS[3], n, update=False)
    at_cell(AT_ROWS[4], n, update=True)

    add("NAT", NAT_ROWS[0], [plain_nat_decode(src, nat) for src in sources])
    nat_cell(NAT_ROWS[1], 1, two_pass=False)
    nat_cell(NAT_ROWS[2], n, two_pass=False)
    add("NAT", NAT_ROWS[3], [plain_nat_decode(src, nat, two_pass=True) for src in sources])
    nat_cell(NAT_ROWS[4], 1, two_pass=True)
    nat_cell(NAT_ROWS[5], n, two_pass=True)
    return AblationTable(cells, settings)
