"""Command-line entry point: ``gqr index | recommend | evaluate | sweep | report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus, evaluation, metrics, plotting, prompting, rag, report
from .config import RunConfig, build_config
from .llm_backend import ConfigurationError, HttpBackend, MockBackend

log = logging.getLogger("gqr")

METRIC_FLAGS = {"scs": [evaluation.SCS], "ndcg": [evaluation.NDCG], "all": list(evaluation.METRICS)}
LIVE_SYSTEMS = {"gqr": "GQR", "ra-gqr": "RA-GQR"}


class UsageError(Exception):
    pass


def make_backend(cfg: RunConfig):
    if cfg.backend == "mock":
        return MockBackend(cfg.seed, cfg.mock_mode, cfg.mock_emit_prob)
    return HttpBackend(cfg.endpoint, cfg.model, cfg.api_key_env)


def make_provider(cfg: RunConfig):
    if cfg.embedding_provider == "hashing":
        return rag.HashingEmbedder(cfg.embedding_dims)
    return rag.HttpEmbedder(cfg.embedding_endpoint, cfg.embedding_model, cfg.api_key_env,
                            retries=cfg.retries, timeout=cfg.timeout)


def load_or_build_index(cfg: RunConfig) -> corpus.InvertedIndex:
    if cfg.index and Path(cfg.index).is_file():
        return corpus.load_index(cfg.index).with_params(cfg.k1, cfg.b)
    cfg.require("corpus")
    tok = corpus.Tokenizer(cfg.stopwords, cfg.stem)
    return corpus.build_index(corpus.read_corpus(cfg.corpus), tok, cfg.k1, cfg.b)


def _pool(cfg: RunConfig):
    return prompting.read_prompt_pool(cfg.prompt_pool)


class RagContext:
    def __init__(self, cfg: RunConfig):
        if not cfg.session_log:
            raise ConfigurationError("RA-GQR needs a session log: set session_log in the config or pass --session-log")
        cfg.require("session_log")
        self.log = rag.read_log(cfg.session_log)
        self.provider = make_provider(cfg)
        self.index = rag.EmbeddingIndex.from_log(self.log, self.provider)

    def recommender(self, config, backend):
        def recommend(qid, text):
            return rag.ra_generate(text, self.log, self.index, config, backend, self.provider, query_id=qid)

        return recommend


# -- commands ---------------------------------------------------------------

def cmd_index(args, cfg: RunConfig) -> int:
    cfg.require("corpus")
    out = args.output or cfg.index or "index.bin"
    tok = corpus.Tokenizer(cfg.stopwords, cfg.stem)
    idx = corpus.build_index(corpus.read_corpus(cfg.corpus), tok, cfg.k1, cfg.b)
    corpus.save_index(idx, out)
    s = idx.stats
    print(f"indexed {s.doc_count} documents, {s.total_tokens} tokens, {len(s.term_count)} terms -> {out}")
    return 0


def _queries_from_file(path: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            qid, tab, text = line.partition("\t")
            if not tab:
                qid, text = str(lineno), line
            out[qid.strip()] = text.strip()
    return out


def cmd_recommend(args, cfg: RunConfig) -> int:
    gen = cfg.generation()
    backend = make_backend(cfg)
    if args.rag:
        recommend = RagContext(cfg).recommender(gen, backend)
    else:
        recommend = evaluation.gqr_recommender(_pool(cfg), gen, backend)

    if args.query is not None:
        recs = recommend("1", args.query)
        results = [recs]
        for item in recs.items:
            print(item)
        if recs.failed:
            print("warning: generation failed, no recommendations parsed", file=sys.stderr)
    else:
        queries = _queries_from_file(args.query_file)
        results = evaluation.bounded_map(lambda q: recommend(q, queries[q]), list(queries), cfg.workers)
        out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
        try:
            for recs in results:
                rec = {"query_id": recs.query_id, "query": recs.query, "items": recs.items, "flags": list(recs.flags)}
                out.write(json.dumps(rec, ensure_ascii=False) + "\n")
        finally:
            if out is not sys.stdout:
                out.close()
    if args.audit:
        prompting.write_audit(results, args.audit)
    return 0


def _parse_run_arg(spec: str) -> tuple[str, str]:
    name, eq, path = spec.partition("=")
    if not eq:
        return Path(spec).stem, spec
    return name, path


def collect_runs(args, cfg: RunConfig, queries) -> list[evaluation.SystemRun]:
    runs = []
    systems = args.system or ([] if args.run else ["gqr"])
    if systems:
        gen = cfg.generation()
        backend = make_backend(cfg)
        ctx = None
        for system in systems:
            if system == "gqr":
                rec = evaluation.gqr_recommender(_pool(cfg), gen, backend)
            else:
                ctx = ctx or RagContext(cfg)
                rec = ctx.recommender(gen, backend)
            runs.append(evaluation.run_system(LIVE_SYSTEMS[system], queries, rec, cfg.workers))
    for spec in args.run or []:
        name, path = _parse_run_arg(spec)
        runs.append(evaluation.read_run_cache(path, name))
    return runs


def write_report(rep: evaluation.EvalReport, out_dir: Path, figures: bool = True) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt, ext in (("markdown", "md"), ("csv", "csv")):
        path = out_dir / f"report.{ext}"
        path.write_bytes(report.render_report(rep, fmt))
        written.append(path)
    path = out_dir / "report.json"
    path.write_text(rep.to_json() + "\n", "utf-8")
    written.append(path)
    if figures:
        written += plotting.render_figures(rep, out_dir / "figures")
    return written


def cmd_evaluate(args, cfg: RunConfig) -> int:
    cfg.require("queries", "qrels")
    queries = evaluation.read_queries(cfg.queries)
    qrels = metrics.read_qrels(cfg.qrels)
    index = load_or_build_index(cfg)
    runs = collect_runs(args, cfg, queries)
    if args.save_runs:
        Path(args.save_runs).mkdir(parents=True, exist_ok=True)
        for run in runs:
            evaluation.write_run_cache(run, Path(args.save_runs) / f"{run.system_name}.jsonl")
    rep = evaluation.build_report(runs, queries, index, qrels, cfg.k, cfg.alpha, args.reference,
                                  METRIC_FLAGS[args.metric], cfg.workers)
    out_dir = Path(args.out_dir)
    write_report(rep, out_dir, figures=not args.no_figures)
    print(f"report written to {out_dir}")
    bad = [r.system_name for r in runs if r.error_rate(len(queries)) > evaluation.MAX_ERROR_RATE]
    if bad:
        print(f"error: systems failed on more than {evaluation.MAX_ERROR_RATE:.0%} of queries: {', '.join(bad)}",
              file=sys.stderr)
        return 1
    return 0


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--sizes must be comma-separated integers, got {text!r}") from None
    if not sizes:
        raise UsageError("--sizes must list at least one prompt size")
    return sizes


def cmd_sweep(args, cfg: RunConfig) -> int:
    sizes = _sizes(args.sizes)
    cfg.require("queries", "qrels")
    queries = evaluation.read_queries(cfg.queries)
    qrels = metrics.read_qrels(cfg.qrels)
    index = load_or_build_index(cfg)
    rows = evaluation.sweep_examples(sizes, queries, _pool(cfg), make_backend(cfg), cfg.generation(),
                                     index, qrels, cfg.workers)
    md = report.render_sweep(rows, "markdown")
    sys.stdout.write(md.decode("utf-8"))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.md").write_bytes(md)
        (out / "sweep.csv").write_bytes(report.render_sweep(rows, "csv"))
        if not args.no_figures:
            plotting.plot_sweep(rows, out / "sweep.png")
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    rep = evaluation.EvalReport.from_json(Path(args.input).read_text("utf-8"))
    data = report.render_report(rep, args.format)
    if args.output:
        Path(args.output).write_bytes(data)
    else:
        sys.stdout.write(data.decode("utf-8"))
    if args.figures:
        plotting.render_figures(rep, args.figures)
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("configuration")
    g.add_argument("--config", help="key = value config file ('@mini' for the bundled mini experiment)")
    g.add_argument("--seed", type=int)
    g.add_argument("--corpus")
    g.add_argument("--qrels")
    g.add_argument("--queries")
    g.add_argument("--index", help="persisted index file (built from --corpus when absent)")
    g.add_argument("--prompt-pool")
    g.add_argument("--session-log")
    g.add_argument("--backend", choices=["http", "mock"])
    g.add_argument("--mock-mode", choices=list(MockBackend.MODES))
    g.add_argument("--embedding-provider", choices=["http", "hashing"])
    g.add_argument("--k", type=int)
    g.add_argument("--n-examples", type=int)
    g.add_argument("--temperature", type=float)
    g.add_argument("--max-tokens", type=int)
    g.add_argument("--k1", type=float)
    g.add_argument("--b", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--workers", type=int)
    g.add_argument("--stopwords", action="store_true", default=None)
    g.add_argument("--stem", action="store_true", default=None)
    g.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="gqr", description="Generative query recommendation and IR evaluation.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", parents=[common], help="build and persist a BM25 index")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("recommend", parents=[common], help="generate recommendations")
    q = p.add_mutually_exclusive_group(required=True)
    q.add_argument("--query")
    q.add_argument("--query-file")
    p.add_argument("--rag", action="store_true", help="retrieve prompt examples from the session log")
    p.add_argument("-o", "--output", help="JSONL output for --query-file (default stdout)")
    p.add_argument("--audit", help="write the audit log (JSONL) here")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("evaluate", parents=[common], help="run Substitution/Concat evaluation")
    p.add_argument("--system", action="append", choices=list(LIVE_SYSTEMS))
    p.add_argument("--run", action="append", metavar="NAME=PATH", help="replay a cached run (JSONL)")
    p.add_argument("--reference", help="system the significance letters refer to (default: first)")
    p.add_argument("--metric", choices=list(METRIC_FLAGS), default="all")
    p.add_argument("--out-dir", default="report")
    p.add_argument("--save-runs", metavar="DIR")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="vary the number of prompt examples")
    p.add_argument("--sizes", default="1,2,5,10")
    p.add_argument("--out-dir")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="re-render a saved report.json")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=list(report.FORMATS), default="markdown")
    p.add_argument("-o", "--output")
    p.add_argument("--figures", metavar="DIR")
    p.set_defaults(func=cmd_report)
    return ap


OVERRIDE_KEYS = ("seed", "corpus", "qrels", "queries", "index", "prompt_pool", "session_log", "backend",
                 "mock_mode", "embedding_provider", "k", "n_examples", "temperature", "max_tokens",
                 "k1", "b", "alpha", "workers", "stopwords", "stem")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k, None) for k in OVERRIDE_KEYS}
    try:
        cfg = build_config(args.config, overrides)
        return args.func(args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 1


def _one_line(exc: Exception) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
