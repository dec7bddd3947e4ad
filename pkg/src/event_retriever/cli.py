"""Command line entry point: ``event-retriever <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import synthetic
from .config import PipelineConfig
from .corpus import QueryCaption, ingest_corpus, load_queries
from .errors import RetrieverError
from .fusion import DEFAULT_RRF_K, fuse_submissions
from .index import Index, build_index
from .metrics import GroundTruth, evaluate, fit_overall_weights
from .pipeline import (
    Engine,
    QueryResult,
    embed_corpus,
    read_ranked_lists,
    run_retrieval,
    to_submission,
    write_intermediates,
    write_ranked_lists,
)
from .providers import build_provider
from .submission import SubmissionTable

logger = logging.getLogger("event_retriever")


def _cmd_ingest(args: argparse.Namespace) -> int:
    corpus = ingest_corpus(args.corpus)
    print(json.dumps({"articles": corpus.n_articles, "images": corpus.n_images}))
    return 0


def _cmd_embed(args: argparse.Namespace) -> int:
    cfg = PipelineConfig.load(args.config)
    corpus = ingest_corpus(cfg.corpus)
    provider = build_provider(cfg.text, seed=cfg.seed, retry=cfg.retry)
    ids, vecs = embed_corpus(corpus, provider)
    build_index(ids=ids, vectors=vecs, backend="exact").save(args.out)
    print(json.dumps({"embedded": len(ids), "dim": cfg.text.dim, "out": str(args.out)}))
    return 0


def _cmd_index(args: argparse.Namespace) -> int:
    cfg = PipelineConfig.load(args.config)
    backend = args.backend or cfg.index_backend
    out = args.out or cfg.index_dir
    if out is None:
        raise RetrieverError("no index directory: pass --out or set index_dir in the config")
    if args.embeddings:
        raw = Index.load(args.embeddings)
        ids, vecs = raw.ids, raw.vectors
    else:
        corpus = ingest_corpus(cfg.corpus)
        ids, vecs = embed_corpus(corpus, build_provider(cfg.text, seed=cfg.seed, retry=cfg.retry))
    idx = build_index(ids=ids, vectors=vecs, backend=backend, params=cfg.ann)
    idx.save(out)
    print(json.dumps({**idx.metadata(), "build_seconds": round(idx.build_seconds, 3), "out": str(out)}))
    return 0


def _cmd_retrieve(args: argparse.Namespace) -> int:
    cfg = PipelineConfig.load(args.config)
    if args.fail_hard:
        cfg = cfg.with_overrides(on_provider_failure="fail")
    if args.workers:
        cfg = cfg.with_overrides(workers=args.workers)
    queries = load_queries(args.queries)
    if args.from_articles:
        engine = Engine.from_config(cfg)
        lists = read_ranked_lists(args.from_articles)
        results = []
        for q in queries:
            articles = lists[q.query_id].head(cfg.stage.K)
            cands, images = engine.select_images(q, articles)
            results.append(QueryResult(q.query_id, q.caption, articles, articles, cands, images))
        table = to_submission(results, cfg)
        if args.intermediates:
            write_intermediates(results, args.intermediates)
    else:
        table = run_retrieval(cfg, queries, intermediates=args.intermediates)
    table.write(args.out)
    print(json.dumps({"queries": len(table), "out": str(args.out)}))
    return 0


def _cmd_rerank_only(args: argparse.Namespace) -> int:
    cfg = PipelineConfig.load(args.config)
    engine = Engine.from_config(cfg)
    stage1 = read_ranked_lists(args.stage1)
    out = []
    for q in load_queries(args.queries):
        reranked, _ = engine.rerank(q, stage1[q.query_id])
        out.append(reranked)
    write_ranked_lists(out, args.out)
    print(json.dumps({"queries": len(out), "out": str(args.out)}))
    return 0


def _cmd_fuse(args: argparse.Namespace) -> int:
    rrf_k = DEFAULT_RRF_K
    output_len = 10
    if args.config:
        cfg = PipelineConfig.load(args.config)
        rrf_k, output_len = cfg.rrf_k, cfg.stage.output_len
    if args.rrf_k is not None:
        rrf_k = args.rrf_k
    if args.output_len is not None:
        output_len = args.output_len
    runs = [SubmissionTable.read(p) for p in args.runs]
    fused = fuse_submissions(runs, rrf_k=rrf_k, output_len=output_len)
    fused.write(args.out)
    print(json.dumps({"runs": len(runs), "queries": len(fused), "rrf_k": rrf_k, "out": str(args.out)}))
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    if args.fit_weights:
        fit = fit_overall_weights()
        print(json.dumps({"weights": fit.weights, "rmse": fit.rmse, "max_abs_error": fit.max_abs_error}, indent=2))
        if not args.truth:
            return 0
    if not args.truth or not (args.submission or args.articles):
        raise RetrieverError("eval needs --truth and --submission or --articles")
    truth = GroundTruth.read(args.truth)
    weights = json.loads(args.weights) if args.weights else None
    reports = {}
    if args.submission:
        reports["image"] = evaluate(SubmissionTable.read(args.submission), truth, weights=weights)
    if args.articles:
        lists = read_ranked_lists(args.articles)
        reports["article"] = evaluate({q: rl.ids for q, rl in lists.items()}, truth, task="article", weights=weights)
    for task, report in reports.items():
        print(f"[{task}]")
        print(report.table())
    if args.json:
        payload = {task: json.loads(r.to_json()) for task, r in reports.items()}
        Path(args.json).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    cfg = PipelineConfig.load(args.config)
    serve(Engine.from_config(cfg), host=args.host, port=args.port)
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    data = synthetic.generate(args.articles, args.queries, seed=args.seed)
    paths = synthetic.write(data, args.out, index_backend=args.backend)
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    return 0


def _cmd_query(args: argparse.Namespace) -> int:
    cfg = PipelineConfig.load(args.config)
    engine = Engine.from_config(cfg)
    result = engine.retrieve(QueryCaption(args.query_id, args.caption))
    print(json.dumps(result.to_json(cfg.stage.pad_token), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="event-retriever", description="Event-centric article and image retrieval")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate a corpus file and report counts")
    s.add_argument("corpus")
    s.set_defaults(func=_cmd_ingest)

    s = sub.add_parser("embed", help="embed all articles into a raw vector directory")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=_cmd_embed)

    s = sub.add_parser("index", help="build and persist the article index")
    s.add_argument("--config", required=True)
    s.add_argument("--embeddings", type=Path, help="reuse vectors written by 'embed'")
    s.add_argument("--backend", choices=("exact", "ann"))
    s.add_argument("--out", type=Path)
    s.set_defaults(func=_cmd_index)

    s = sub.add_parser("retrieve", help="run the pipeline over a query file")
    s.add_argument("--config", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--intermediates", type=Path, help="directory for per-stage JSONL")
    s.add_argument("--from-articles", type=Path, help="skip dense+rerank; read ranked articles JSONL")
    s.add_argument("--workers", type=int)
    s.add_argument("--fail-hard", action="store_true", help="abort on the first provider failure")
    s.set_defaults(func=_cmd_retrieve)

    s = sub.add_parser("rerank-only", help="rerank persisted dense-retrieval lists")
    s.add_argument("--config", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--stage1", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=_cmd_rerank_only)

    s = sub.add_parser("fuse", help="Reciprocal Rank Fusion of submission CSVs")
    s.add_argument("runs", nargs="+")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--config")
    s.add_argument("--rrf-k", type=float)
    s.add_argument("--output-len", type=int)
    s.set_defaults(func=_cmd_fuse)

    s = sub.add_parser("eval", help="score submissions against ground truth")
    s.add_argument("--submission")
    s.add_argument("--articles", help="ranked articles JSONL for caption-to-article metrics")
    s.add_argument("--truth")
    s.add_argument("--weights", help='overall-score weights as JSON, e.g. \'{"mAP": 1.0}\'')
    s.add_argument("--json", help="write the report as JSON")
    s.add_argument("--fit-weights", action="store_true", help="print weights fitted to published leaderboard rows")
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("serve", help="start the HTTP service")
    s.add_argument("--config", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8080)
    s.set_defaults(func=_cmd_serve)

    s = sub.add_parser("query", help="retrieve for one caption and print provenance")
    s.add_argument("--config", required=True)
    s.add_argument("--caption", required=True)
    s.add_argument("--query-id", default="q0")
    s.set_defaults(func=_cmd_query)

    s = sub.add_parser("synth", help="write a synthetic corpus with planted queries")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--articles", type=int, default=1000)
    s.add_argument("--queries", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--backend", choices=("exact", "ann"), default="exact")
    s.set_defaults(func=_cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (RetrieverError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
