"""``comprag`` command line: ingest, score, query, inspect.

Exit status: 0 success, 1 relevance violations, 2 bad input or missing
files, 3 remote embedder/generator failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .chunker import chunk_corpus, read_document, validate_relevance
from .config import PipelineConfig, load_config, parse_cutoff
from .errors import ChunkingError, CompragError, ConfigError, RemoteServiceError
from .evaluator import correlate, load_filtration, save_filtration
from .index import build_index, load_index, save_index
from .pipeline import AnswerBundle, QueryRequest, answer
from .recommender import build_filtration, read_metrics_csv

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_INPUT = 2
EXIT_REMOTE = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError(f"{what} not found: {path}")
    return path


def cmd_ingest(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    docs = [read_document(_require(Path(p), "records file")) for p in args.records]
    try:
        chunks = chunk_corpus(docs, cfg.chunking)
    except (ChunkingError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    violations = validate_relevance(chunks)
    print(f"chunks: {len(chunks)}")
    print(f"violations: {len(violations)}")
    for v in violations:
        print(f"  {v.rule} {v.chunk_hash} {v.detail}")
    if violations and not args.allow_violations:
        return EXIT_VIOLATIONS
    bad = {v.chunk_hash for v in violations}
    kept = []
    for c in chunks:
        if c.hash in bad:
            continue
        bad.add(c.hash)  # keep only the first copy of a duplicated hash
        kept.append(c)
    index = build_index(kept, cfg.embedder.build())
    out = Path(args.output) if args.output else cfg.paths.index
    save_index(index, out)
    print(f"indexed: {len(index)} -> {out}")
    return EXIT_OK


def cmd_score(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    records = read_metrics_csv(_require(Path(args.metrics), "metrics file"))
    flist = build_filtration(records, cfg.weights, cfg.bounds)
    out = Path(args.output) if args.output else cfg.paths.filtration
    save_filtration(flist, out)
    print(f"entries: {len(flist)} -> {out}")
    return EXIT_OK


def _load_pair(args: argparse.Namespace, cfg: PipelineConfig):
    index_path = _require(Path(args.index) if args.index else cfg.paths.index, "index file")
    flist_path = _require(Path(args.filtration) if args.filtration else cfg.paths.filtration, "filtration file")
    embedder = cfg.embedder.build()
    index = load_index(index_path, expected_fingerprint=embedder.fingerprint)
    flist = load_filtration(flist_path)
    return index, flist, embedder


def _print_bundle(bundle: AnswerBundle) -> None:
    print(bundle.answer_text)
    print()
    print(f"{'#':>3}  {'object':<28} {'hash':<32}  {'fused':>7} {'semantic':>8} {'determ.':>7} {'rank':>5}")
    for e in bundle.evidence:
        rank = "-" if e.rank is None else str(e.rank)
        print(
            f"{e.final_rank:>3}  {e.object_key[:28]:<28} {e.chunk_hash}  "
            f"{e.fused:>7.4f} {e.semantic:>8.4f} {e.deterministic:>7.4f} {rank:>5}"
        )
    if bundle.unmatched_report["retrieved_unmatched"]:
        print(f"\nunranked hits: {len(bundle.unmatched_report['retrieved_unmatched'])}")


def cmd_query(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    policy = cfg.evaluator
    if args.mode is not None:
        policy = replace(policy, mode=args.mode)
    if args.alpha is not None:
        policy = replace(policy, alpha=args.alpha)
    if args.cutoff is not None:
        policy = replace(policy, cutoff_m=parse_cutoff(args.cutoff))
    if args.missing is not None:
        policy = replace(policy, missing_policy=args.missing)
    index, flist, embedder = _load_pair(args, cfg)
    req = QueryRequest(args.query, k=args.k if args.k is not None else cfg.k, policy=policy)
    bundle = answer(index, flist, req, generator=cfg.generator.build(), embedder=embedder)
    if args.json:
        print(json.dumps(bundle.to_dict(), indent=2, ensure_ascii=False))
    else:
        _print_bundle(bundle)
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    index, flist, _ = _load_pair(args, cfg)
    print(json.dumps(correlate(index, flist).to_dict(), indent=2, ensure_ascii=False))
    return EXIT_OK


def _cutoff_arg(value: str) -> int | str:
    if value == "unlimited":
        return value
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("cutoff must be >= 1 or 'unlimited'")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file (default: ./comprag.toml)")

    parser = argparse.ArgumentParser(prog="comprag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="chunk object records and build the index")
    p.add_argument("records", nargs="+", help="JSONL object-record file(s)")
    p.add_argument("-o", "--output", help="index file (default: paths.index)")
    p.add_argument("--allow-violations", action="store_true", help="index anyway, skipping offending chunks")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("score", parents=[common], help="rank objects from a metrics CSV")
    p.add_argument("metrics", help="CSV with object_key,nps,response_time_min,review_score,proximity_km")
    p.add_argument("-o", "--output", help="filtration list file (default: paths.filtration)")
    p.set_defaults(func=cmd_score)

    files = argparse.ArgumentParser(add_help=False)
    files.add_argument("--index", help="index file (default: paths.index)")
    files.add_argument("--filtration", help="filtration list file (default: paths.filtration)")

    p = sub.add_parser("query", parents=[common, files], help="answer a query")
    p.add_argument("query")
    p.add_argument("--k", type=int, help="retrieval depth")
    p.add_argument("--mode", choices=["pass_through", "filter", "fuse"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--cutoff", type=_cutoff_arg, help="filter cutoff rank or 'unlimited'")
    p.add_argument("--missing", choices=["drop", "keep_zero", "keep_semantic"])
    p.add_argument("--json", action="store_true", help="emit the full answer bundle as JSON")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("inspect", parents=[common, files], help="dump the hash/ranking correlation map")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except RemoteServiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except (ConfigError, CompragError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
