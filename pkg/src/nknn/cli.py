"""Command-line entry point.

Every subcommand writes a JSON run manifest next to its main output, recording
the resolved parameters, seeds, SHA-256 of every input file, output paths and
wall-clock duration. Exit codes: 0 success, 2 usage, 3 fingerprint mismatch,
4 I/O or corrupt input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .ablation import AblationSettings, run_ablation
from .ann import IVFConfig, load_index, save_index, train_ivf
from .core import CorpusError, Vocabulary, build_vocab, load_corpus, read_corpus_text
from .datastore import (
    CorruptFileError,
    KeySource,
    NGramConfig,
    Pooling,
    build_datastore,
    load_datastore,
    VersionError,
    save_datastore,
)
from .decode_at import BeamConfig, FingerprintMismatch, beam_search, check_store, decode_at
from .decode_nat import NATDecodeConfig, decode_nat, plain_nat_decode
from .knnmath import RetrievalParams
from .metrics import WSDItem, evaluate, topk_accuracy, wsd_contrastive
from .model import SyntheticATModel, SyntheticModelConfig, SyntheticNATModel
from .synthetic import make_world, write_world

log = logging.getLogger("nknn")

EXIT_OK, EXIT_USAGE, EXIT_FINGERPRINT, EXIT_IO = 0, 2, 3, 4
MANIFEST_SCHEMA = 1
DEFAULT_SEED = 17


class UsageError(Exception):
    pass


# Manifest ----------------------------------------------------------------


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(
    path: str | Path,
    command: str,
    args: argparse.Namespace,
    inputs: Sequence[str | None],
    outputs: Sequence[str | None],
    started: float,
    extra: dict | None = None,
) -> dict:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "tool_version": __version__,
        "command": command,
        "params": params,
        "seeds": {"seed": getattr(args, "seed", DEFAULT_SEED)},
        "inputs": {str(p): sha256_file(p) for p in inputs if p},
        "outputs": [str(p) for p in outputs if p],
        "duration_s": round(time.perf_counter() - started, 6),
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return manifest


def _manifest_path(args: argparse.Namespace, primary: str | Path) -> Path:
    return Path(args.manifest) if args.manifest else Path(str(primary) + ".manifest.json")


# Shared loaders ------------------------------------------------------------


def _model(mode: str, config_path: str):
    config = SyntheticModelConfig.load(config_path)
    return SyntheticATModel(config) if mode == "at" else SyntheticNATModel(config)


def _key_source(mode: str, single_pass: bool) -> KeySource:
    if mode == "at":
        return KeySource.AT
    return KeySource.NAT_FIRST if single_pass else KeySource.NAT_SECOND


def _read_sources(path: str, vocab: Vocabulary) -> list[list[int]]:
    sources = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                text = json.loads(line)["source"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object with a 'source' field") from None
            ids = vocab.tokenize(text)
            if not ids:
                raise CorpusError(f"{path}:{lineno}: empty source")
            sources.append(ids)
    return sources


def _read_lines(path: str) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh.read().splitlines()]


def _read_references(path: str) -> list[list[str]]:
    if path.endswith(".jsonl"):
        return [tgt.split() for _, tgt in read_corpus_text(path)]
    return _read_lines(path)


def _retrieval_params(args: argparse.Namespace, lam: float) -> RetrievalParams:
    return RetrievalParams(k=args.k, tau=args.tau, lam=lam)


def _decoder(args: argparse.Namespace, model) -> tuple[Callable, list[str]]:
    """Per-sentence decode function for the ``decode``/``wsd-test`` flags, plus the files it read."""
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    if args.no_retrieval:
        if args.mode == "at":
            cfg = BeamConfig(beam_size=args.beam, max_len=args.max_len)
            return (lambda src: beam_search(src, model, cfg)), []
        return (lambda src: plain_nat_decode(src, model, two_pass=not args.single_pass)), []
    if args.datastore is None or args.lam is None:
        raise UsageError("--datastore and --lambda are required unless --no-retrieval is given")
    store = load_datastore(args.datastore)
    index = load_index(args.index, store) if args.index else None
    params = _retrieval_params(args, args.lam)
    inputs = [args.datastore] + ([args.index] if args.index else [])
    if args.mode == "at":
        cfg = BeamConfig(
            beam_size=args.beam, max_len=args.max_len, params=params, n=args.n, update_beam=not args.no_update_beam
        )
        decode_one = lambda src: decode_at(src, model, store, index, cfg)  # noqa: E731
    else:
        cfg = NATDecodeConfig(params=params, n=args.n, two_pass=not args.single_pass)
        decode_one = lambda src: decode_nat(src, model, store, index, cfg)  # noqa: E731
    # surface a fingerprint or configuration mismatch before any decoding starts
    check_store(store, model.fingerprint, _key_source(args.mode, args.single_pass), args.n)
    return decode_one, inputs


def _map_ordered(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# Subcommands -------------------------------------------------------------


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    world = make_world(seed=args.seed, n_train=args.n_train, n_eval=args.n_eval, profile=args.profile)
    paths = write_world(world, args.out_dir)
    for name, path in paths.items():
        print(f"{name}: {path}")
    print(f"seed: {args.seed}")
    manifest = _manifest_path(args, Path(args.out_dir) / "synthetic")
    write_manifest(manifest, "gen-synthetic", args, [], list(paths.values()), started)
    return EXIT_OK


def cmd_build_vocab(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    lines = [f"{s} {t}" for s, t in read_corpus_text(args.corpus)]
    vocab = build_vocab(lines, args.max_size)
    vocab.save(args.out)
    print(f"vocabulary: {len(vocab)} tokens -> {args.out}")
    write_manifest(_manifest_path(args, args.out), "build-vocab", args, [args.corpus], [args.out], started)
    return EXIT_OK


def cmd_build_datastore(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    print(f"seed: {args.seed}")
    vocab = Vocabulary.load(args.vocab)
    model = _model(args.mode, args.model_config)
    corpus = load_corpus(args.corpus, vocab)
    store = build_datastore(
        corpus,
        model,
        NGramConfig(n=args.n, pooling=Pooling[args.pooling.upper()]),
        key_source=_key_source(args.mode, args.single_pass),
        candidate_input=args.mode == "nat" and not args.single_pass and args.second_pass_input == "candidate",
    )
    size = save_datastore(store, args.out)
    print(f"entries: {len(store)}")
    print(f"datastore bytes: {size}")
    index_path = None
    if len(store) == 0:
        log.warning("no target is at least %d tokens long; the datastore is empty and no index was trained", args.n)
    elif not args.no_index:
        overrides = {}
        if args.n_centroids is not None:
            overrides["n_centroids"] = args.n_centroids
        if args.n_probe is not None:
            overrides["n_probe"] = args.n_probe
        config = IVFConfig.for_size(len(store), seed=args.seed, **overrides)
        index_path = args.index_out or args.out + ".ivf"
        index_bytes = save_index(train_ivf(store, config), index_path)
        print(f"index: {config.n_centroids} centroids, n_probe {config.n_probe}, {index_bytes} bytes")
    write_manifest(
        _manifest_path(args, args.out),
        "build-datastore",
        args,
        [args.corpus, args.model_config, args.vocab],
        [args.out, index_path],
        started,
        {"entries": len(store), "datastore_bytes": size, "model_fingerprint": store.model_fingerprint},
    )
    return EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    print(f"seed: {args.seed}")
    vocab = Vocabulary.load(args.vocab)
    model = _model(args.mode, args.model_config)
    decode_one, store_inputs = _decoder(args, model)
    sources = _read_sources(args.input, vocab)
    outputs = _map_ordered(decode_one, sources, args.workers)
    with open(args.out, "w", encoding="utf-8") as fh:
        for out in outputs:
            fh.write(vocab.detokenize(out) + "\n")
    print(f"decoded {len(outputs)} sentences -> {args.out}")
    write_manifest(
        _manifest_path(args, args.out),
        "decode",
        args,
        [args.input, args.vocab, args.model_config, *store_inputs],
        [args.out],
        started,
    )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    hyps, refs = _read_lines(args.hyp), _read_references(args.ref)
    if len(hyps) != len(refs):
        raise UsageError(f"{len(hyps)} hypotheses but {len(refs)} references")
    topk, inputs = None, [args.hyp, args.ref]
    if args.datastore:
        if not (args.model_config and args.vocab):
            raise UsageError("--datastore needs --model-config and --vocab for top-k accuracy")
        store = load_datastore(args.datastore)
        index = load_index(args.index, store) if args.index else None
        mode = "at" if store.key_source is KeySource.AT else "nat"
        model = _model(mode, args.model_config)
        pairs = load_corpus(args.ref, Vocabulary.load(args.vocab))
        topk = topk_accuracy(store, index, pairs, model, store.n, args.topk)
        inputs += [args.datastore, args.model_config, args.vocab] + ([args.index] if args.index else [])
    report = evaluate(hyps, refs, topk)
    print(f"BLEU: {report.corpus_bleu:.2f}")
    print(f"repetition ratio: {report.repetition_ratio:.4f}")
    if topk is not None:
        print(f"top-{args.topk} accuracy: {topk:.4f}")
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    write_manifest(_manifest_path(args, args.report or args.hyp), "evaluate", args, inputs, [args.report], started)
    return EXIT_OK


def _read_wsd_items(path: str, vocab: Vocabulary) -> list[WSDItem]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                items.append(
                    WSDItem(
                        tuple(vocab.tokenize(rec["source"])),
                        tuple(vocab.tokenize(rec["reference"])),
                        tuple(tuple(vocab.tokenize(c)) for c in rec["contrastive"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError):
                raise CorpusError(f"{path}:{lineno}: expected source, reference and contrastive fields") from None
    return items


def cmd_wsd_test(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    vocab = Vocabulary.load(args.vocab)
    model = _model(args.mode, args.model_config)
    decode_one, store_inputs = _decoder(args, model)
    items = _read_wsd_items(args.items, vocab)
    accuracy = wsd_contrastive(decode_one, items)
    print(f"items: {len(items)}")
    print(f"contrastive accuracy: {accuracy:.4f}")
    if args.report:
        Path(args.report).write_text(json.dumps({"items": len(items), "accuracy": accuracy}, indent=2) + "\n")
    write_manifest(
        _manifest_path(args, args.report or args.items),
        "wsd-test",
        args,
        [args.items, args.vocab, args.model_config, *store_inputs],
        [args.report],
        started,
        {"accuracy": accuracy},
    )
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    print(f"seed: {args.seed}")
    vocab = Vocabulary.load(args.vocab)
    config = SyntheticModelConfig.load(args.model_config)
    train = load_corpus(args.train, vocab)
    eval_pairs = load_corpus(args.eval, vocab)
    settings = AblationSettings(
        lam_at=args.lambda_at,
        lam_nat=args.lambda_nat,
        n=args.n,
        k=args.k,
        tau=args.tau,
        beam=args.beam,
        max_len=args.max_len,
        topk=args.topk,
        use_ivf=not args.no_index,
        seed=args.seed,
        nat_candidate_input=args.second_pass_input == "candidate",
    )
    table = run_ablation(train, eval_pairs, config, settings)
    print(table.format())
    if args.out:
        Path(args.out).write_text(json.dumps(table.to_dict(), indent=2) + "\n")
    write_manifest(
        _manifest_path(args, args.out or args.eval),
        "ablate",
        args,
        [args.train, args.eval, args.model_config, args.vocab],
        [args.out],
        started,
    )
    return EXIT_OK


# Parser ------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for every random choice (default 17)")
    p.add_argument("--manifest", help="manifest path (default: next to the main output)")


def _add_retrieval(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=8, help="neighbors per query (default 8)")
    p.add_argument("--tau", type=float, default=10.0, help="distance temperature (default 10)")
    p.add_argument("--n", type=int, default=2, help="gram size (default 2)")
    p.add_argument("--beam", type=int, default=4, help="AT beam size (default 4)")
    p.add_argument("--max-len", type=int, default=64)


def _add_decoder(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("at", "nat"), required=True)
    p.add_argument("--model-config", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--datastore")
    p.add_argument("--index", help="IVF index file; exact search when omitted")
    p.add_argument("--lambda", dest="lam", type=float, help="interpolation weight, required with --datastore")
    p.add_argument("--no-update-beam", action="store_true", help="AT: skip re-weighting earlier beam steps")
    p.add_argument("--single-pass", action="store_true", help="NAT: retrieve with first-pass states")
    p.add_argument("--no-retrieval", action="store_true", help="plain beam search / plain NAT argmax")
    _add_retrieval(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nknn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic corpus, vocabulary and model config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-eval", type=int, default=200)
    p.add_argument("--profile", choices=("ablation", "memorize"), default="ablation")
    _add_common(p)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("build-vocab", help="build a vocabulary from a JSONL corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--max-size", type=int, default=32000)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("build-datastore", help="extract n-gram keys and values and train an IVF index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model-config", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("at", "nat"), default="at")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--pooling", choices=("mean", "last"), default="mean")
    p.add_argument("--single-pass", action="store_true", help="NAT: keys from first-pass states")
    p.add_argument(
        "--second-pass-input",
        choices=("gold", "candidate"),
        default="gold",
        help="NAT: decoder input of the second pass when extracting keys (default gold)",
    )
    p.add_argument("--index-out", help="index path (default: <out>.ivf)")
    p.add_argument("--no-index", action="store_true")
    p.add_argument("--n-centroids", type=int)
    p.add_argument("--n-probe", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_build_datastore)

    p = sub.add_parser("decode", help="translate a JSONL file of sources")
    p.add_argument("--input", required=True, help="JSONL with a 'source' field per line")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1, help="concurrent sentences; output order is preserved")
    _add_decoder(p)
    _add_common(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", help="BLEU, repetition ratio and optional top-k accuracy")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True, help="JSONL corpus or one reference per line")
    p.add_argument("--report")
    p.add_argument("--datastore")
    p.add_argument("--index")
    p.add_argument("--model-config")
    p.add_argument("--vocab")
    p.add_argument("--topk", type=int, default=5)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("wsd-test", help="contrastive word-sense accuracy")
    p.add_argument("--items", required=True)
    p.add_argument("--report")
    _add_decoder(p)
    _add_common(p)
    p.set_defaults(func=cmd_wsd_test)

    p = sub.add_parser("ablate", help="run the AT and NAT ablation grids")
    p.add_argument("--train", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--model-config", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--lambda-at", type=float, required=True)
    p.add_argument("--lambda-nat", type=float, required=True)
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--no-index", action="store_true", help="exact search instead of IVF")
    p.add_argument(
        "--second-pass-input",
        choices=("gold", "candidate"),
        default="candidate",
        help="NAT: decoder input of the second pass when extracting keys (default candidate)",
    )
    p.add_argument("--out", help="JSON table")
    _add_retrieval(p)
    _add_common(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except FingerprintMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except (OSError, CorpusError, CorruptFileError, VersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError) as exc:
        # ConfigError, store/decoder mismatches and invalid parameter values
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
