"""Command-line interface: crawl, classify, evaluate, export, subgraph, record.

Exit codes: 0 success, 2 configuration or invalid input, 3 budget abort when
--fail-on-budget is set, 4 backend unreachable or cassette failure, 5 unknown
entity. Every command writes a manifest.json listing inputs and outputs with
content digests; timestamps live outside the digested content.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone

from . import backends as be
from . import classify as cl
from . import crawler as cr
from . import graph as gr
from .corpus import StopwordLists, load_corpus, load_stopwords
from .errors import (
    BackendUnavailable,
    CassetteWriteError,
    DegenerateClass,
    DuplicateId,
    DuplicateKey,
    EmptyInput,
    EmptyName,
    LengthMismatch,
    MissingPrediction,
    ParseError,
    ReplayMiss,
    SchemaVersionMismatch,
    ScriptMiss,
    SupplyGraphError,
    UnknownNode,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_BACKEND = 4
EXIT_UNKNOWN_ENTITY = 5

_CONFIG_ERRORS = (
    ValueError,
    ParseError,
    DuplicateId,
    DuplicateKey,
    SchemaVersionMismatch,
    LengthMismatch,
    EmptyInput,
    MissingPrediction,
    DegenerateClass,
    EmptyName,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
)
_BACKEND_ERRORS = (BackendUnavailable, CassetteWriteError, ScriptMiss, ReplayMiss)

_EXPORT_EXT = {"graphml": "graphml", "dot": "dot", "jsonl": "jsonl"}


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _report_digest(report: dict) -> str:
    # duration_ms is wall clock; it is zeroed in the digested form so
    # identical runs produce identical manifests.
    canonical = dict(report)
    canonical["duration_ms"] = 0
    return hashlib.sha256(
        json.dumps(canonical, sort_keys=True, ensure_ascii=False).encode("utf-8")
    ).hexdigest()


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def _write_manifest(
    out_dir: str,
    command: str,
    backend_spec: str | None,
    config: dict,
    inputs: list[str],
    outputs: list[dict],
) -> str:
    manifest = {
        "created_at": datetime.now(timezone.utc).isoformat(),
        "command": command,
        "backend": backend_spec,
        "config": config,
        "inputs": [
            {"path": os.path.abspath(p), "sha256": _sha256_file(p)} for p in inputs
        ],
        "outputs": outputs,
    }
    path = os.path.join(out_dir, "manifest.json")
    _write_json(path, manifest)
    return path


def _output_entry(path: str, digest: str | None = None, excludes: list[str] | None = None) -> dict:
    entry = {"path": os.path.abspath(path), "sha256": digest or _sha256_file(path)}
    if excludes:
        entry["digest_excludes"] = excludes
    return entry


def _make_backend(spec: str, args: argparse.Namespace) -> be.Backend:
    if spec.startswith("script:"):
        return be.ScriptedBackend(be.load_script(spec[len("script:"):]))
    if spec.startswith("replay:"):
        return be.ReplayBackend(be.load_script(spec[len("replay:"):]))
    if spec == "http" or spec.startswith("http:") or spec.startswith("https:"):
        kwargs = {
            "timeout_s": args.http_timeout,
            "retry_cap": args.http_retries,
            "backoff_base_s": args.http_backoff,
        }
        if spec == "http":
            return be.HttpBackend.from_env(**kwargs)
        return be.HttpBackend(
            endpoint=spec,
            api_key=os.environ.get(be.API_KEY_ENV) or None,
            model=os.environ.get(be.MODEL_ENV) or None,
            **kwargs,
        )
    raise ValueError(f"unknown backend spec {spec!r}; use script:PATH, replay:PATH, or http[s]:URL")


def _backend_input_path(spec: str) -> str | None:
    for prefix in ("script:", "replay:"):
        if spec.startswith(prefix):
            return spec[len(prefix):]
    return None


def _load_stopword_args(args: argparse.Namespace) -> StopwordLists:
    if args.suffixes or args.stopwords:
        defaults = StopwordLists.default()
        suffixes = defaults.company_suffixes
        general = defaults.general_stopwords
        if args.suffixes and args.stopwords:
            return load_stopwords(args.suffixes, args.stopwords)
        if args.suffixes:
            return StopwordLists(
                company_suffixes=load_stopwords(args.suffixes, args.suffixes).company_suffixes,
                general_stopwords=general,
            )
        return StopwordLists(
            company_suffixes=suffixes,
            general_stopwords=load_stopwords(args.stopwords, args.stopwords).general_stopwords,
        )
    return StopwordLists.default()


def _build_crawl_config(args: argparse.Namespace) -> cr.CrawlConfig:
    # Precedence: command-line flags, then config file values, then defaults.
    file_values: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_values = json.load(fh)
        if not isinstance(file_values, dict):
            raise ValueError("config file must hold a JSON object")

    def pick(flag, key, default):
        if flag is not None:
            return flag
        if key in file_values:
            return file_values[key]
        return default

    seeds = args.seeds.split(",") if args.seeds else None
    seeds = pick(seeds, "seeds", None)
    if not seeds:
        raise ValueError("seeds are required (--seeds or config file)")
    year_start = pick(args.year_start, "year_start", None)
    year_end = pick(args.year_end, "year_end", None)
    year_range = tuple(file_values.get("year_range", (2018, 2023)))
    if year_start is not None or year_end is not None:
        year_range = (
            year_start if year_start is not None else year_range[0],
            year_end if year_end is not None else year_range[1],
        )
    deterministic = args.deterministic
    if deterministic is None:
        deterministic = bool(file_values.get("deterministic", True))
    return cr.CrawlConfig(
        seeds=[s.strip() for s in seeds],
        industry=pick(args.industry, "industry", "civil engineering"),
        year_range=(int(year_range[0]), int(year_range[1])),
        per_year_min=int(pick(args.per_year_min, "per_year_min", 10)),
        token_budget=int(pick(args.token_budget, "token_budget", 3000)),
        max_nodes=int(pick(args.max_nodes, "max_nodes", 100000)),
        max_articles=int(pick(args.max_articles, "max_articles", 1000000)),
        deterministic=deterministic,
        parallelism=int(pick(args.parallelism, "parallelism", 1)),
    )


def _run_crawl_command(args: argparse.Namespace, record_cassette: str | None) -> int:
    config = _build_crawl_config(args)
    corpus = load_corpus(args.corpus, strict=not args.lenient)
    stopwords = _load_stopword_args(args)
    backend = _make_backend(args.backend, args)
    backend_spec = args.backend
    os.makedirs(args.out, exist_ok=True)
    cassette_path = None
    if record_cassette is not None:
        cassette_path = os.path.join(args.out, record_cassette)
        open(cassette_path, "w", encoding="utf-8").close()  # recording starts fresh
        backend = be.RecordingBackend(backend, cassette_path)
        backend_spec = f"record:{args.backend}"

    graph = gr.SupplyChainGraph(stopwords)
    if args.aliases:
        graph.apply_aliases(gr.load_alias_file(args.aliases))
    graph, report = cr.run_crawl(config, corpus, backend, graph)

    state_path = os.path.join(args.out, "graph.json")
    export_path = os.path.join(args.out, f"graph.{_EXPORT_EXT[args.export_format]}")
    report_path = os.path.join(args.out, "crawl_report.json")
    gr.save_state(graph, state_path)
    gr.export_graph(graph, args.export_format, export_path)
    report_dict = report.to_dict()
    _write_json(report_path, report_dict)

    inputs = [args.corpus]
    script_path = _backend_input_path(args.backend)
    if script_path:
        inputs.append(script_path)
    if args.config:
        inputs.append(args.config)
    if args.aliases:
        inputs.append(args.aliases)
    if args.suffixes:
        inputs.append(args.suffixes)
    if args.stopwords:
        inputs.append(args.stopwords)
    outputs = [
        _output_entry(state_path),
        _output_entry(export_path),
        _output_entry(report_path, digest=_report_digest(report_dict), excludes=["duration_ms"]),
    ]
    if cassette_path:
        outputs.append(_output_entry(cassette_path))
    _write_manifest(args.out, "record" if record_cassette else "crawl",
                    backend_spec, config.to_dict(), inputs, outputs)

    print(
        f"crawl finished: {report.termination_reason}; "
        f"nodes={len(graph.nodes)} edges={len(graph.edges)} "
        f"articles={report.stats.articles_processed}"
    )
    if args.fail_on_budget and report.termination_reason != cr.TERMINATION_EXHAUSTED:
        print(f"budget abort: {report.termination_reason}", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


def cmd_crawl(args: argparse.Namespace) -> int:
    return _run_crawl_command(args, record_cassette=None)


def cmd_record(args: argparse.Namespace) -> int:
    return _run_crawl_command(args, record_cassette=args.cassette)


def _taxonomy_from_args(args: argparse.Namespace) -> cl.CategoryTaxonomy:
    if getattr(args, "taxonomy", None):
        with open(args.taxonomy, encoding="utf-8") as fh:
            categories = tuple(
                line.strip() for line in fh
                if line.strip() and not line.lstrip().startswith("#")
            )
        return cl.CategoryTaxonomy(categories)
    return cl.CategoryTaxonomy()


def cmd_classify(args: argparse.Namespace) -> int:
    graph = gr.load_state(args.state)
    taxonomy = _taxonomy_from_args(args)
    backend = _make_backend(args.backend, args)
    os.makedirs(args.out, exist_ok=True)
    outcome = cl.classify_graph(graph, taxonomy, backend, token_budget=args.token_budget)

    state_path = os.path.join(args.out, "graph.json")
    report_path = os.path.join(args.out, "classification_report.json")
    predictions_path = os.path.join(args.out, "predictions.jsonl")
    gr.save_state(graph, state_path)
    _write_json(report_path, outcome.to_report(taxonomy))
    with open(predictions_path, "w", encoding="utf-8") as fh:
        for cid in sorted(outcome.results):
            result = outcome.results[cid]
            for category in taxonomy:
                if category in result.undetermined:
                    record = {"entity_id": cid, "category": category, "undetermined": True}
                else:
                    record = {
                        "entity_id": cid,
                        "category": category,
                        "prediction": category in result.labels,
                    }
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    inputs = [args.state]
    script_path = _backend_input_path(args.backend)
    if script_path:
        inputs.append(script_path)
    if args.taxonomy:
        inputs.append(args.taxonomy)
    _write_manifest(
        args.out, "classify", args.backend,
        {"token_budget": args.token_budget, "taxonomy": list(taxonomy)},
        inputs,
        [_output_entry(state_path), _output_entry(report_path), _output_entry(predictions_path)],
    )
    print(
        f"classified {len(outcome.results)} entities "
        f"({len(outcome.skipped_no_description)} skipped without descriptions)"
    )
    return EXIT_OK


def _load_predictions(path: str) -> tuple[dict[tuple[str, str], bool], set[tuple[str, str]]]:
    predictions: dict[tuple[str, str], bool] = {}
    undetermined: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON: {exc.msg}", path=path, line=lineno) from exc
            if "entity_id" not in record or "category" not in record:
                raise ParseError("prediction needs entity_id and category", path=path, line=lineno)
            pair = (record["entity_id"], record["category"])
            if record.get("undetermined"):
                undetermined.add(pair)
            elif "prediction" in record and isinstance(record["prediction"], bool):
                predictions[pair] = record["prediction"]
            else:
                raise ParseError("prediction must be boolean", path=path, line=lineno)
    return predictions, undetermined


def cmd_evaluate(args: argparse.Namespace) -> int:
    taxonomy = _taxonomy_from_args(args)
    dataset = cl.load_labeled_dataset(args.dataset, taxonomy)
    if args.balanced:
        balanced: list[cl.LabeledExample] = []
        for category in taxonomy:
            if not any(ex.category == category for ex in dataset):
                continue
            balanced.extend(cl.downsample_balanced(dataset, category, args.rng_seed))
        dataset = balanced
    undetermined: set[tuple[str, str]] = set()
    if args.predictions:
        predictions, undetermined = _load_predictions(args.predictions)
    else:
        graph = gr.load_state(args.state)
        predictions = {}
        for example in dataset:
            node = graph.nodes.get(example.entity_id)
            if node is None:
                raise MissingPrediction(f"entity {example.entity_id!r} not in graph state")
            predictions[(example.entity_id, example.category)] = (
                example.category in node.categories
            )
    report = cl.evaluate_all(dataset, predictions, taxonomy, undetermined)
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.json")
    payload = report.to_dict()
    payload["balanced"] = bool(args.balanced)
    if args.balanced:
        payload["rng_seed"] = args.rng_seed
    _write_json(metrics_path, payload)

    inputs = [args.dataset]
    if args.predictions:
        inputs.append(args.predictions)
    else:
        inputs.append(args.state)
    if args.taxonomy:
        inputs.append(args.taxonomy)
    _write_manifest(
        args.out, "evaluate", None,
        {"balanced": bool(args.balanced), "rng_seed": args.rng_seed},
        inputs, [_output_entry(metrics_path)],
    )
    print(
        f"evaluated {report.evaluated} examples: "
        f"micro accuracy={report.micro.accuracy:.3f} f1={report.micro.f1:.3f}"
    )
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    graph = gr.load_state(args.state)
    os.makedirs(args.out, exist_ok=True)
    export_path = os.path.join(args.out, f"graph.{_EXPORT_EXT[args.format]}")
    gr.export_graph(graph, args.format, export_path)
    _write_manifest(
        args.out, "export", None, {"format": args.format},
        [args.state], [_output_entry(export_path)],
    )
    print(f"exported {len(graph.nodes)} nodes, {len(graph.edges)} edges to {export_path}")
    return EXIT_OK


def cmd_subgraph(args: argparse.Namespace) -> int:
    graph = gr.load_state(args.state)
    seed = graph.canonicalize(args.entity)
    if seed is None:
        raise UnknownNode(args.entity)
    sampled = graph.sample_k_hop(seed, args.hops, args.max_nodes, args.rng_seed)
    os.makedirs(args.out, exist_ok=True)
    export_path = os.path.join(args.out, f"subgraph.{_EXPORT_EXT[args.format]}")
    gr.export_graph(sampled, args.format, export_path)
    _write_manifest(
        args.out, "subgraph", None,
        {
            "entity": args.entity,
            "seed": seed,
            "hops": args.hops,
            "max_nodes": args.max_nodes,
            "rng_seed": args.rng_seed,
        },
        [args.state], [_output_entry(export_path)],
    )
    print(f"sampled {len(sampled.nodes)} nodes around {seed!r} to {export_path}")
    return EXIT_OK


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", required=True,
                        help="script:PATH, replay:PATH, http (env endpoint), or http(s)://URL")
    parser.add_argument("--http-timeout", type=float, default=30.0)
    parser.add_argument("--http-retries", type=int, default=3)
    parser.add_argument("--http-backoff", type=float, default=0.5)


def _add_crawl_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--corpus", required=True, help="JSONL article corpus")
    _add_backend_flags(parser)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seeds", help="comma-separated seed entity names")
    parser.add_argument("--industry")
    parser.add_argument("--year-start", type=int, dest="year_start")
    parser.add_argument("--year-end", type=int, dest="year_end")
    parser.add_argument("--per-year-min", type=int, dest="per_year_min")
    parser.add_argument("--token-budget", type=int, dest="token_budget")
    parser.add_argument("--max-nodes", type=int, dest="max_nodes")
    parser.add_argument("--max-articles", type=int, dest="max_articles")
    parser.add_argument("--parallelism", type=int)
    parser.add_argument("--deterministic", action="store_true", default=None)
    parser.add_argument("--non-deterministic", action="store_false", dest="deterministic")
    parser.add_argument("--config", help="JSON config file (flags take precedence)")
    parser.add_argument("--aliases", help="TSV alias file: variant<TAB>canonical")
    parser.add_argument("--suffixes", help="company-suffix stopword file")
    parser.add_argument("--stopwords", help="general stopword file")
    parser.add_argument("--export-format", choices=sorted(_EXPORT_EXT), default="graphml")
    parser.add_argument("--fail-on-budget", action="store_true",
                        help="exit 3 when the crawl stops on a budget instead of exhaustion")
    parser.add_argument("--lenient", action="store_true",
                        help="ignore unknown corpus fields instead of rejecting them")
    parser.add_argument("--rng-seed", type=int, default=0, dest="rng_seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="supplygraph",
        description="Build, classify, and export supply-chain co-mention graphs.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="INFO-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_crawl = sub.add_parser("crawl", help="crawl a corpus into a graph")
    _add_crawl_flags(p_crawl)
    p_crawl.set_defaults(func=cmd_crawl)

    p_record = sub.add_parser("record", help="crawl while recording a replay cassette")
    _add_crawl_flags(p_record)
    p_record.add_argument("--cassette", default="cassette.jsonl",
                          help="cassette file name inside the output directory")
    p_record.set_defaults(func=cmd_record)

    p_classify = sub.add_parser("classify", help="label graph entities by category")
    p_classify.add_argument("--state", required=True, help="graph state JSON")
    _add_backend_flags(p_classify)
    p_classify.add_argument("--out", required=True)
    p_classify.add_argument("--token-budget", type=int, default=512, dest="token_budget")
    p_classify.add_argument("--taxonomy", help="category list file, one per line")
    p_classify.set_defaults(func=cmd_classify)

    p_eval = sub.add_parser("evaluate", help="score predictions against gold labels")
    p_eval.add_argument("--dataset", required=True, help="labeled JSONL dataset")
    group = p_eval.add_mutually_exclusive_group(required=True)
    group.add_argument("--predictions", help="predictions JSONL")
    group.add_argument("--state", help="graph state JSON with categories")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--balanced", action="store_true",
                        help="downsample each category to balance before scoring")
    p_eval.add_argument("--rng-seed", type=int, default=0, dest="rng_seed")
    p_eval.add_argument("--taxonomy")
    p_eval.set_defaults(func=cmd_evaluate)

    p_export = sub.add_parser("export", help="export a saved graph")
    p_export.add_argument("--state", required=True)
    p_export.add_argument("--format", choices=sorted(_EXPORT_EXT), default="graphml")
    p_export.add_argument("--out", required=True)
    p_export.set_defaults(func=cmd_export)

    p_sub = sub.add_parser("subgraph", help="sample a k-hop neighborhood")
    p_sub.add_argument("--state", required=True)
    p_sub.add_argument("--entity", required=True, help="entity name (any known variant)")
    p_sub.add_argument("--hops", type=int, default=1)
    p_sub.add_argument("--max-nodes", type=int, default=50, dest="max_nodes")
    p_sub.add_argument("--rng-seed", type=int, default=0, dest="rng_seed")
    p_sub.add_argument("--format", choices=sorted(_EXPORT_EXT), default="graphml")
    p_sub.add_argument("--out", required=True)
    p_sub.set_defaults(func=cmd_subgraph)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s %(message)s",
    )
    try:
        return args.func(args)
    except UnknownNode as exc:
        print(f"error: unknown entity: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_ENTITY
    except _BACKEND_ERRORS as exc:
        print(f"error: backend: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SupplyGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
