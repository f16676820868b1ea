"""Command-line front for the curation pipeline.

Exit codes: 0 success, 1 usage error, 2 data error, 3 remote-service error.
Every command accepts --config/--seed/--out where meaningful, and --json
switches stdout to machine-parseable JSON lines.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from . import corpus as corpus_mod
from . import curriculum as curriculum_mod
from . import mixture as mixture_mod
from . import synthesis as synthesis_mod
from .clients import Endpoint, EndpointConfig
from .corpus import IngestReport, Language, Source
from .corruption import CorruptionSpec, Lexicon, build_doc_freq, corrupt_corpus
from .errors import CptForgeError, DataError, RemoteError, UsageError
from .planner import (
    PipelineConfig,
    SamplerState,
    Stage,
    build_stage_plan,
    run_pipeline,
    sample_round,
    split_pools,
    write_shard,
)
from .topic import LexiconClassifier, TopicTaxonomy, annotate_batch

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_REMOTE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class _Output:
    def __init__(self, as_json: bool):
        self.as_json = as_json

    def emit(self, obj: dict, text: str | None = None):
        if self.as_json:
            print(json.dumps(obj, ensure_ascii=False, sort_keys=True))
        else:
            print(text if text is not None else json.dumps(obj, ensure_ascii=False))


def _load_corpus(path: str, language: str, source: str, strict: bool = True):
    report = IngestReport(path=path)
    docs = list(corpus_mod.ingest(
        path, Language.parse(language), Source.parse(source),
        strict=strict, report=report,
    ))
    report.log_summary()
    return docs, report


def _endpoint_from_args(args) -> Endpoint:
    if not getattr(args, "endpoint_url", None):
        raise UsageError("--endpoint-url is required for this command")
    cfg = EndpointConfig(
        base_url=args.endpoint_url,
        auth_token_env_var=getattr(args, "auth_env", None),
        max_retries=getattr(args, "max_retries", 3),
    )
    return Endpoint(cfg)


def _counter_from_args(args):
    return corpus_mod.make_counter(getattr(args, "count", "whitespace"),
                                   getattr(args, "vocab_path", None))


# --- command implementations -------------------------------------------------

def cmd_ingest(args, out: _Output) -> int:
    docs, report = _load_corpus(args.input, args.language, args.source,
                                strict=not args.lenient)
    counter = _counter_from_args(args)
    docs = corpus_mod.count_corpus(docs, counter)
    if args.out:
        corpus_mod.write_jsonl(docs, args.out)
    out.emit(
        {"accepted": report.accepted, "rejected": len(report.rejected),
         "rejected_lines": [n for n, _ in report.rejected], "out": args.out},
        f"ingested {report.accepted} records ({len(report.rejected)} rejected)"
        + (f" -> {args.out}" if args.out else ""),
    )
    return EXIT_OK


def cmd_stats(args, out: _Output) -> int:
    docs, _ = _load_corpus(args.input, args.language, args.source)
    docs = corpus_mod.count_corpus(docs, _counter_from_args(args))
    stats = corpus_mod.source_stats(docs)
    payload = stats.to_json()
    lines = [f"{'language':<10}{'source':<18}{'docs':>8}{'tokens':>12}"]
    for cell in payload["cells"]:
        lines.append(f"{cell['language']:<10}{cell['source']:<18}"
                     f"{cell['docs']:>8}{cell['tokens']:>12}")
    lines.append(f"{'total':<28}{payload['grand_docs']:>8}{payload['grand_tokens']:>12}")
    out.emit(payload, "\n".join(lines))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_classify(args, out: _Output) -> int:
    docs, _ = _load_corpus(args.input, args.language, args.source)
    classifier = LexiconClassifier.from_json_file(args.keywords)
    from dataclasses import replace

    labeled = []
    counts: dict[str, int] = {}
    for doc in docs:
        if doc.topic is None:
            label = classifier(doc)
            doc = replace(doc, topic=label.label)
        counts[doc.topic] = counts.get(doc.topic, 0) + 1
        labeled.append(doc)
    if args.out:
        corpus_mod.write_jsonl(labeled, args.out)
    out.emit({"labeled": len(labeled), "topics": counts, "out": args.out},
             "\n".join(f"{t:<40}{n:>6}" for t, n in sorted(counts.items())))
    return EXIT_OK


def cmd_annotate(args, out: _Output) -> int:
    docs, _ = _load_corpus(args.input, args.language, args.source)
    endpoint = _endpoint_from_args(args)
    taxonomy = TopicTaxonomy.default()

    def llm(prompt: str) -> str:
        request = {
            "model": args.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0.0,
            "max_tokens": 32,
        }
        return endpoint.chat_complete(request)

    results = annotate_batch(docs, llm, taxonomy, out_path=args.out,
                             concurrency=args.workers)
    labeled = sum(1 for r in results if r.label is not None)
    warned = sum(1 for r in results if r.warning)
    out.emit({"annotated": labeled, "warnings": warned, "out": args.out},
             f"annotated {labeled}/{len(results)} documents ({warned} warnings)")
    return EXIT_OK


def cmd_split_val(args, out: _Output) -> int:
    docs, _ = _load_corpus(args.input, args.language, args.source)
    train, val = corpus_mod.split_validation(docs, per_topic=args.per_topic,
                                             seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    train_path = os.path.join(args.out, "train.jsonl")
    val_path = os.path.join(args.out, "val.jsonl")
    corpus_mod.write_jsonl(train, train_path)
    corpus_mod.write_jsonl(val, val_path)
    out.emit({"train": len(train), "val": len(val),
              "train_path": train_path, "val_path": val_path},
             f"train {len(train)} / val {len(val)} -> {args.out}")
    return EXIT_OK


def cmd_score(args, out: _Output) -> int:
    docs, _ = _load_corpus(args.input, args.language, args.source)
    endpoint = _endpoint_from_args(args)

    def scorer(texts):
        return endpoint.score_ppl(texts, batch_size=args.batch_size,
                                  tag_prefix="cli-score")

    scored = curriculum_mod.assign_ppl(docs, scorer, cache_path=args.cache,
                                       batch_size=args.batch_size)
    if args.out:
        corpus_mod.write_jsonl(scored, args.out)
    out.emit({"scored": len(scored), "out": args.out},
             f"scored {len(scored)} documents" + (f" -> {args.out}" if args.out else ""))
    return EXIT_OK


def cmd_mixture_step(args, out: _Output) -> int:
    with open(args.state, encoding="utf-8") as fh:
        state_obj = json.load(fh)
    state = mixture_mod.MixtureState.from_json(state_obj)
    topics = state_obj.get("topics")
    if topics is None:
        raise DataError("state file must carry a 'topics' list for snapshot alignment")

    def load_snapshot(path):
        with open(path, encoding="utf-8") as fh:
            return mixture_mod.PplSnapshot.from_json(json.load(fh), topics)

    prev = load_snapshot(args.prev)
    cur = load_snapshot(args.cur)
    new_state, record = mixture_mod.mixture_step(state, prev, cur)
    out_path = args.out or args.state
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(new_state.to_json(topics), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.audit:
        with open(args.audit, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record.to_json()) + "\n")
    out.emit(record.to_json(),
             "round {}: r = [{}]".format(
                 new_state.round,
                 ", ".join(f"{v:.6f}" for v in new_state.proportions)))
    return EXIT_OK


def cmd_curriculum(args, out: _Output) -> int:
    docs, _ = _load_corpus(args.input, args.language, args.source)
    scorer = None
    if args.endpoint_url:
        endpoint = _endpoint_from_args(args)
        scorer = lambda texts: endpoint.score_ppl(texts, tag_prefix="cli-curriculum")  # noqa: E731

    plan, _scored = curriculum_mod.build_ppl_plan(
        docs, strategy=args.strategy, seed=args.seed, k=args.k,
        scorer=scorer, cache_path=args.cache,
    )
    plan.save(args.out)
    stats = [s.to_json() for s in plan.bin_stats]
    out.emit({"strategy": plan.strategy, "bins": len(plan.bins),
              "bin_stats": stats, "out": args.out},
             "\n".join(f"bin {i}: {s['count']} docs, mean ppl "
                       f"{s['mean_ppl'] if s['mean_ppl'] is None else round(s['mean_ppl'], 3)}"
                       for i, s in enumerate(stats)))
    return EXIT_OK


def cmd_synth_sci(args, out: _Output) -> int:
    docs, _ = _load_corpus(args.seeds, args.language, args.source)
    endpoint = _endpoint_from_args(args)
    settings = synthesis_mod.GenerationSettings(
        model_id=args.model, concurrency=args.workers,
        created_at=args.created_at or "",
    )

    def chat(request, tag):
        return endpoint.chat_complete(request, tag=tag)

    pairs, report = synthesis_mod.synth_sci(
        docs, args.discipline, chat, budget=args.budget, seed=args.seed,
        settings=settings,
    )
    synthesis_mod.write_qa_store(pairs, args.out)
    out.emit(report.to_json(),
             f"{args.discipline}: emitted {report.emitted}/{report.requested} "
             f"({report.parse_failures} parse failures) -> {args.out}")
    return EXIT_OK


def cmd_synth_code(args, out: _Output) -> int:
    seeds = synthesis_mod.CodeSeed.load_jsonl(args.seeds)
    endpoint = _endpoint_from_args(args)
    settings = synthesis_mod.GenerationSettings(
        model_id=args.model, concurrency=args.workers,
        created_at=args.created_at or "",
    )

    def chat(request, tag):
        return endpoint.chat_complete(request, tag=tag)

    pairs, report = synthesis_mod.synth_code(
        seeds, chat, budget=args.budget, seed=args.seed,
        k_demos=args.k_demos, settings=settings,
    )
    synthesis_mod.write_qa_store(pairs, args.out)
    out.emit(report.to_json(),
             f"code: emitted {report.emitted}/{report.requested} -> {args.out}")
    return EXIT_OK


def cmd_corrupt(args, out: _Output) -> int:
    docs, _ = _load_corpus(args.input, args.language, args.source)
    spec = CorruptionSpec(
        ratio=args.ratio,
        seed=args.seed,
        lexicon=Lexicon.from_json_file(args.lexicon),
        top_k_frequent=args.top_k,
    )
    corrupted, reports = corrupt_corpus(docs, spec, build_doc_freq(docs))
    corpus_mod.write_jsonl(corrupted, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            for rep in reports:
                fh.write(json.dumps(rep.to_json(), ensure_ascii=False) + "\n")
    candidates = sum(r.candidates for r in reports)
    replaced = sum(r.replaced for r in reports)
    out.emit({"documents": len(docs), "candidates": candidates, "replaced": replaced,
              "fraction": replaced / candidates if candidates else 0.0, "out": args.out},
             f"replaced {replaced}/{candidates} candidates "
             f"({replaced / candidates:.3f})" if candidates else "no candidates")
    return EXIT_OK


def cmd_plan(args, out: _Output) -> int:
    overrides = {}
    if args.config:
        cfg = PipelineConfig.load(args.config)
        section = cfg.get("stage1" if args.stage in ("1", "stage1") else "stage2",
                          default={}) or {}
        if section.get("ratios"):
            overrides["language_ratios"] = section["ratios"]
        if section.get("source_ratios"):
            overrides["source_ratios"] = section["source_ratios"]
        if section.get("budget"):
            overrides["budget"] = section["budget"]
    if args.round_tokens:
        overrides["round_tokens"] = args.round_tokens
    overrides["seed"] = args.seed
    plan = build_stage_plan(Stage.parse(args.stage), args.total_budget, overrides)
    payload = plan.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    out.emit(payload,
             f"stage {plan.stage.value}: budget {plan.token_budget} tokens, "
             f"{plan.rounds} rounds of {plan.round_tokens}")
    return EXIT_OK


def cmd_sample(args, out: _Output) -> int:
    from .mixture import MixtureState
    from .planner import StagePlan

    with open(args.plan, encoding="utf-8") as fh:
        plan = StagePlan.from_json(json.load(fh))
    docs, _ = _load_corpus(args.input, args.language, args.source)
    docs = corpus_mod.count_corpus(docs, _counter_from_args(args))
    pools = split_pools(docs)
    mixtures = None
    topic_orders = None
    if args.mixture_state:
        with open(args.mixture_state, encoding="utf-8") as fh:
            obj = json.load(fh)
        state = MixtureState.from_json(obj)
        pool = obj.get("pool", "zh")
        mixtures = {pool: state}
        topic_orders = {pool: obj["topics"]}
    curriculum_plan = None
    if args.curriculum:
        curriculum_plan = curriculum_mod.CurriculumPlan.load(args.curriculum)
    state = SamplerState.load(args.sampler_state) if (
        args.sampler_state and os.path.exists(args.sampler_state)) else SamplerState()
    shard = sample_round(
        pools, plan, mixtures, curriculum_plan,
        round_index=args.round, topic_orders=topic_orders, state=state,
    )
    manifest = write_shard(shard, args.out, counter_name=args.count,
                           vocab_path=args.vocab_path)
    if args.sampler_state:
        state.save(args.sampler_state)
    out.emit({"out": args.out, "records": manifest["record_count"],
              "tokens": manifest["grand_tokens"]},
             f"round {args.round}: {manifest['record_count']} records, "
             f"{manifest['grand_tokens']} tokens -> {args.out}")
    return EXIT_OK


def cmd_run(args, out: _Output) -> int:
    if not args.config:
        raise UsageError("run requires --config")
    if not args.out:
        raise UsageError("run requires --out directory")
    config = PipelineConfig.load(args.config)
    result = run_pipeline(config, args.out, workers=args.workers)
    for shard in result.shards:
        out.emit(shard, f"{shard['path']}  {shard['sha256'][:16]}  "
                        f"{shard['tokens']} tokens")
    out.emit({"out_dir": result.out_dir, "shards": len(result.shards)},
             f"run complete: {len(result.shards)} shards -> {result.out_dir}")
    return EXIT_OK


def cmd_report(args, out: _Output) -> int:
    run_dir = args.run_dir
    out_dir = args.out or run_dir
    os.makedirs(out_dir, exist_ok=True)
    emitted = {}

    comp_path = os.path.join(run_dir, "composition_report.json")
    if os.path.exists(comp_path):
        with open(comp_path, encoding="utf-8") as fh:
            comp = json.load(fh)
        csv_path = os.path.join(out_dir, "composition.csv")
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source", "tokens", "share", "target_tokens",
                             "reference_share"])
            for source, row in sorted(comp["per_source"].items()):
                writer.writerow([source, row["tokens"], f"{row['share']:.6f}",
                                 f"{row['target_tokens']:.1f}",
                                 f"{row['reference_share']:.6f}"])
        emitted["composition_csv"] = csv_path
        lines = [f"{'source':<18}{'tokens':>10}{'share':>9}{'ref':>9}"]
        for source, row in sorted(comp["per_source"].items()):
            lines.append(f"{source:<18}{row['tokens']:>10}"
                         f"{row['share']:>9.4f}{row['reference_share']:>9.4f}")
        out.emit({"composition": comp["per_source"]}, "\n".join(lines))

    for name in sorted(os.listdir(run_dir)):
        if not (name.startswith("mixture_audit_") and name.endswith(".jsonl")):
            continue
        audit_path = os.path.join(run_dir, name)
        with open(audit_path, encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        if not records:
            continue
        csv_path = os.path.join(out_dir, name.replace(".jsonl", ".csv"))
        n = len(records[0]["r_new"])
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round"] + [f"r_{i}" for i in range(n)]
                            + [f"delta_p_{i}" for i in range(n)])
            for rec in records:
                writer.writerow([rec["round"]]
                                + [f"{v:.8f}" for v in rec["r_new"]]
                                + [f"{v:.6f}" for v in rec["delta_p"]])
        emitted[name] = csv_path
        lines = [f"{name}  (round -> proportions)"]
        for rec in records:
            lines.append(f"  {rec['round']:>3}: "
                         + " ".join(f"{v:.4f}" for v in rec["r_new"]))
        out.emit({"audit": name, "rounds": len(records)}, "\n".join(lines))

    if not emitted:
        raise DataError(f"no reports found under {run_dir}")
    out.emit({"written": emitted}, f"wrote {len(emitted)} report files -> {out_dir}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="cptforge", description=__doc__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, corpus_input=True):
        p.add_argument("--config")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out")
        p.add_argument("--json", action="store_true")
        p.add_argument("--workers", type=int, default=4)
        if corpus_input:
            p.add_argument("--language", default="en")
            p.add_argument("--source", default="web_pages")
            p.add_argument("--count", default="whitespace",
                           choices=["whitespace", "bytes", "vocab"])
            p.add_argument("--vocab-path")

    p = sub.add_parser("ingest", help="validate a JSONL corpus and count tokens")
    p.add_argument("--input", required=True)
    p.add_argument("--lenient", action="store_true")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="per-(language, source) document/token totals")
    p.add_argument("--input", required=True)
    common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("classify", help="label topics with the keyword classifier")
    p.add_argument("--input", required=True)
    p.add_argument("--keywords", required=True)
    common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("annotate", help="label topics via a chat-completion endpoint")
    p.add_argument("--input", required=True)
    p.add_argument("--endpoint-url")
    p.add_argument("--auth-env")
    p.add_argument("--model", default="gpt-4")
    common(p)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("split-val", help="carve a per-topic validation split")
    p.add_argument("--input", required=True)
    p.add_argument("--per-topic", type=int, default=200)
    common(p)
    p.set_defaults(func=cmd_split_val)

    p = sub.add_parser("score", help="fill per-document PPL from a scorer endpoint")
    p.add_argument("--input", required=True)
    p.add_argument("--endpoint-url")
    p.add_argument("--auth-env")
    p.add_argument("--cache")
    p.add_argument("--batch-size", type=int, default=64)
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("mixture-step", help="one mixture adjustment round")
    p.add_argument("--state", required=True)
    p.add_argument("--prev", required=True)
    p.add_argument("--cur", required=True)
    p.add_argument("--audit")
    common(p, corpus_input=False)
    p.set_defaults(func=cmd_mixture_step)

    p = sub.add_parser("curriculum", help="build a difficulty-ordered plan")
    p.add_argument("--input", required=True)
    p.add_argument("--strategy", default="LH", choices=["RM", "LH", "HL"])
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--endpoint-url")
    p.add_argument("--auth-env")
    p.add_argument("--cache")
    common(p)
    p.set_defaults(func=cmd_curriculum)

    p = sub.add_parser("synth-sci", help="synthesize scientific QA pairs")
    p.add_argument("--seeds", required=True)
    p.add_argument("--discipline", required=True,
                   choices=list(synthesis_mod.SCIENTIFIC_DISCIPLINES))
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--endpoint-url")
    p.add_argument("--auth-env")
    p.add_argument("--model", default="unspecified")
    p.add_argument("--created-at")
    common(p)
    p.set_defaults(func=cmd_synth_sci)

    p = sub.add_parser("synth-code", help="synthesize code QA pairs from demonstrations")
    p.add_argument("--seeds", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--k-demos", type=int, default=3)
    p.add_argument("--endpoint-url")
    p.add_argument("--auth-env")
    p.add_argument("--model", default="unspecified")
    p.add_argument("--created-at")
    common(p, corpus_input=False)
    p.set_defaults(func=cmd_synth_code)

    p = sub.add_parser("corrupt", help="apply quality-degradation transforms")
    p.add_argument("--input", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--top-k", type=int, default=500)
    p.add_argument("--report")
    common(p)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("plan", help="build a stage plan from budgets and ratios")
    p.add_argument("--stage", required=True)
    p.add_argument("--total-budget", type=int, required=True)
    p.add_argument("--round-tokens", type=int)
    common(p, corpus_input=False)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("sample", help="draw one round's shard from a plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--round", type=int, default=1)
    p.add_argument("--mixture-state")
    p.add_argument("--curriculum")
    p.add_argument("--sampler-state")
    common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("run", help="execute the full two-stage pipeline")
    common(p, corpus_input=False)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render audit logs and composition as CSV/tables")
    p.add_argument("--run-dir", required=True)
    common(p, corpus_input=False)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        out = _Output(as_json=getattr(args, "json", False))
        return args.func(args, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RemoteError as exc:
        print(f"remote-service error: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CptForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
