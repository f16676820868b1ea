"""End-to-end two-stage run: ingest, label, split, curriculum, mixture-steered
sampling, synthesis, sharding, and reports.

Everything a run emits (shards, audit logs, reports) is deterministic for a
fixed config, fixed seeds, and a deterministic (or replayed) endpoint; worker
count only changes wall-clock time. Reports contain no wall-clock values or
absolute paths, so two runs in different directories produce identical bytes.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

from ..clients import CassetteTransport, Endpoint, EndpointConfig, HttpTransport
from ..corpus import (
    Document,
    IngestReport,
    Language,
    Source,
    count_corpus,
    ingest,
    make_counter,
    source_stats,
    split_validation,
)
from ..corruption import CorruptionSpec, Lexicon, build_doc_freq, corrupt_corpus
from ..curriculum import CurriculumPlan, build_ppl_plan
from ..errors import CptForgeError, DataError
from ..mixture import MixtureState, PplSnapshot, mixture_step, snapshot_from_topic_means
from ..seeding import derive_seed
from ..synthesis import (
    CodeSeed,
    DomainRegistry,
    GenerationSettings,
    QAPair,
    filter_seed_corpus,
    qa_to_training_text,
    scaled_quotas,
    synth_code,
    synth_sci,
    write_qa_store,
)
from ..topic import LexiconClassifier, RemoteClassifier, TopicTaxonomy
from .plans import (
    POOL_EN,
    POOL_SYN,
    POOL_ZH,
    Stage,
    StagePlan,
    build_stage_plan,
)
from .sharding import (
    SamplerState,
    sample_round,
    shard_paths,
    shard_sha256,
    split_pools,
    write_shard,
)

logger = logging.getLogger(__name__)

DEFAULT_DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data")


@dataclass
class PipelineConfig:
    """Parsed run configuration; relative paths resolve against the file's dir."""

    raw: dict
    base_dir: str = "."

    @classmethod
    def load(cls, path: str) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(raw=raw, base_dir=os.path.dirname(os.path.abspath(path)))

    def resolve(self, path: str | None) -> str | None:
        if path is None:
            return None
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def seed(self, name: str) -> int:
        seeds = self.raw.get("seeds", {})
        if name in seeds:
            return int(seeds[name])
        return derive_seed(int(seeds.get("pipeline", 0)), name)

    def get(self, *keys, default=None):
        node = self.raw
        for key in keys:
            if not isinstance(node, dict) or key not in node:
                return default
            node = node[key]
        return node


@dataclass
class RunResult:
    out_dir: str
    shards: list[dict] = field(default_factory=list)
    reports: dict = field(default_factory=dict)
    synthesis_reports: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "shards": self.shards,
            "reports": self.reports,
            "synthesis": self.synthesis_reports,
        }


def _wrap_context(exc: CptForgeError, context: str) -> CptForgeError:
    from ..errors import RemoteError

    try:
        return exc.__class__(f"{context}: {exc}")
    except TypeError:
        base = RemoteError if isinstance(exc, RemoteError) else DataError
        return base(f"{context}: {exc}")


class _Run:
    def __init__(self, config: PipelineConfig, out_dir: str, workers: int | None = None):
        self.config = config
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.workers = workers or int(config.get("workers", default=4))
        self.result = RunResult(out_dir=out_dir)

        counter_cfg = config.get("counter", default={"kind": "whitespace"})
        self.counter_name = counter_cfg.get("kind", "whitespace")
        self.vocab_path = config.resolve(counter_cfg.get("vocab_path"))
        self.counter = make_counter(self.counter_name, self.vocab_path)

        taxonomy_path = config.resolve(config.get("taxonomy_path"))
        self.taxonomy = (TopicTaxonomy.from_json_file(taxonomy_path)
                         if taxonomy_path else TopicTaxonomy.default())

        self.transport = self._build_transport()
        self.endpoints = {
            name: Endpoint(EndpointConfig.from_json(cfg), transport=self.transport)
            for name, cfg in (config.get("endpoints", default={}) or {}).items()
        }

    def _build_transport(self):
        cassette = self.config.get("cassette")
        if not cassette:
            return HttpTransport()
        path = self.config.resolve(cassette["path"])
        return CassetteTransport(path, cassette.get("mode", "replay"))

    # --- corpus preparation -------------------------------------------------

    def load_corpus(self) -> list[Document]:
        entries = self.config.get("corpora", default=None)
        if not entries:
            raise DataError("config lists no corpora")
        docs: list[Document] = []
        for entry in entries:
            path = self.config.resolve(entry["path"])
            report = IngestReport(path=path)
            docs.extend(ingest(
                path,
                Language.parse(entry["language"]),
                Source.parse(entry["source"]),
                strict=bool(entry.get("strict", True)),
                report=report,
            ))
            report.log_summary()
        ids = [d.id for d in docs]
        if len(ids) != len(set(ids)):
            raise DataError("duplicate document ids across corpora")
        return count_corpus(docs, self.counter)

    def label_topics(self, docs: list[Document]) -> list[Document]:
        unlabeled = [d for d in docs if d.topic is None]
        if not unlabeled:
            return docs
        keywords_path = self.config.resolve(self.config.get("keywords_path"))
        if keywords_path:
            classifier = LexiconClassifier.from_json_file(keywords_path, self.taxonomy)
        elif "classifier" in self.endpoints:
            endpoint = self.endpoints["classifier"]

            def post(body: dict) -> dict:
                return endpoint._send_with_retry(body, tag=None)

            classifier = RemoteClassifier(post, self.taxonomy)
        else:
            raise DataError(
                f"{len(unlabeled)} documents lack topic labels and no classifier "
                "is configured (keywords_path or endpoints.classifier)"
            )
        from dataclasses import replace

        labeled = []
        for doc in docs:
            if doc.topic is None:
                label = classifier(doc)
                doc = replace(doc, topic=label.label)
            labeled.append(doc)
        return labeled

    # --- scoring helpers ------------------------------------------------------

    def scorer_fn(self, tag_prefix: str):
        if "scorer" not in self.endpoints:
            return None
        endpoint = self.endpoints["scorer"]
        batch_size = int(self.config.get("endpoints", "scorer", "batch_size", default=64))

        def score(texts: list[str]) -> list[float]:
            return endpoint.score_ppl(texts, batch_size=batch_size, tag_prefix=tag_prefix)

        return score

    def collect_snapshot(self, round_index: int, language: Language,
                         val_docs: Sequence[Document]) -> PplSnapshot:
        """Mean validation PPL per topic for one language at one round."""
        topics = self.taxonomy.for_language(language)
        scorer = self.scorer_fn(f"valscore:{language.value}:round:{round_index}")
        if scorer is None:
            raise DataError("mixture tracking requires endpoints.scorer")
        docs = sorted((d for d in val_docs if d.language is language), key=lambda d: d.id)
        if not docs:
            raise DataError(f"no validation documents for language {language.value}")
        values = scorer([d.text for d in docs])
        sums: dict[str, float] = {}
        counts: dict[str, int] = {}
        for doc, ppl in zip(docs, values):
            sums[doc.topic] = sums.get(doc.topic, 0.0) + ppl
            counts[doc.topic] = counts.get(doc.topic, 0) + 1
        means = {}
        for topic in topics:
            if counts.get(topic):
                means[topic] = sums[topic] / counts[topic]
            else:
                # A topic absent from the validation split contributes no
                # signal; pin it to 1.0 so its delta is always zero.
                means[topic] = 1.0
        return snapshot_from_topic_means(round_index, means, topics)

    # --- synthesis -------------------------------------------------------------

    def chat_fn(self):
        endpoint = self.endpoints.get("chat")
        if endpoint is None:
            raise DataError("synthesis requires endpoints.chat")

        def call(request: dict, tag: str) -> str:
            return endpoint.chat_complete(request, tag=tag)

        return call

    def synthesize(self, en_train: Sequence[Document]) -> tuple[list[Document], list[QAPair]]:
        synth_cfg = self.config.get("stage2", "synthesis", default={}) or {}
        quotas = {k: int(v) for k, v in (synth_cfg.get("quotas") or {}).items()}
        if not quotas:
            factor = float(synth_cfg.get("quota_scale", 1e-3))
            quotas = scaled_quotas(factor=factor)
        settings = GenerationSettings(
            model_id=synth_cfg.get("model_id", "unspecified"),
            temperature=float(synth_cfg.get("temperature", 0.7)),
            max_tokens=int(synth_cfg.get("max_tokens", 1024)),
            created_at=synth_cfg.get("created_at", ""),
            concurrency=int(synth_cfg.get("concurrency", 4)),
            workers=self.workers,
        )
        snippet_kwargs = {}
        if "snippet_min_chars" in synth_cfg:
            snippet_kwargs["snippet_min_chars"] = int(synth_cfg["snippet_min_chars"])
        if "snippet_max_chars" in synth_cfg:
            snippet_kwargs["snippet_max_chars"] = int(synth_cfg["snippet_max_chars"])
        chat = self.chat_fn()
        seed = self.config.seed("synthesis")
        pairs: list[QAPair] = []

        sci_quotas = {d: q for d, q in quotas.items() if d != "code" and q > 0}
        if sci_quotas:
            domains_path = self.config.resolve(self.config.get("domains_path"))
            if not domains_path:
                raise DataError("scientific synthesis requires domains_path")
            registry = DomainRegistry.from_json_file(domains_path)
            seed_sets = filter_seed_corpus(en_train, registry,
                                           disciplines=sorted(sci_quotas))
            for discipline in sorted(sci_quotas):
                discipline_pairs, report = synth_sci(
                    seed_sets.get(discipline, []),
                    discipline,
                    chat,
                    budget=sci_quotas[discipline],
                    seed=seed,
                    settings=settings,
                    **snippet_kwargs,
                )
                pairs.extend(discipline_pairs)
                self.result.synthesis_reports.append(report.to_json())

        code_quota = int(quotas.get("code", 0))
        if code_quota > 0:
            code_seeds_path = self.config.resolve(self.config.get("code_seeds_path"))
            if not code_seeds_path:
                raise DataError("code synthesis requires code_seeds_path")
            code_pairs, report = synth_code(
                CodeSeed.load_jsonl(code_seeds_path),
                chat,
                budget=code_quota,
                seed=seed,
                k_demos=int(synth_cfg.get("k_demos", 3)),
                settings=settings,
            )
            pairs.extend(code_pairs)
            self.result.synthesis_reports.append(report.to_json())

        for pair in pairs:
            pair.validate_provenance()
        write_qa_store(pairs, os.path.join(self.out_dir, "qa_store.jsonl"))

        docs = count_corpus([qa_to_training_text(p) for p in pairs], self.counter)
        corruption_cfg = self.config.get("stage2", "corruption")
        if corruption_cfg and float(corruption_cfg.get("ratio", 0.0)) > 0.0:
            lexicon_path = self.config.resolve(self.config.get("lexicon_path"))
            if not lexicon_path:
                raise DataError("corruption requires lexicon_path")
            spec = CorruptionSpec(
                ratio=float(corruption_cfg["ratio"]),
                seed=self.config.seed("corruption"),
                lexicon=Lexicon.from_json_file(lexicon_path),
                top_k_frequent=int(corruption_cfg.get("top_k_frequent", 500)),
            )
            docs, reports = corrupt_corpus(docs, spec, build_doc_freq(docs))
            docs = count_corpus(docs, self.counter)
            with open(os.path.join(self.out_dir, "corruption_report.jsonl"), "w",
                      encoding="utf-8") as fh:
                for rep in reports:
                    fh.write(json.dumps(rep.to_json(), ensure_ascii=False) + "\n")
        return docs, pairs

    # --- stages ------------------------------------------------------------------

    def run(self) -> RunResult:
        # Idempotent re-runs: audit logs are append-mode within a run, so any
        # leftovers from a previous run in the same directory must go first.
        for name in os.listdir(self.out_dir):
            if name.startswith("mixture_audit_") and name.endswith(".jsonl"):
                os.unlink(os.path.join(self.out_dir, name))
        docs = self.label_topics(self.load_corpus())
        per_topic = int(self.config.get("validation", "per_topic", default=200))
        train, val = split_validation(docs, per_topic=per_topic,
                                      seed=self.config.seed("split"))
        pools = split_pools(train)
        total_budget = int(self.config.get("total_budget", default=100_000))
        round_tokens = int(self.config.get("round_tokens", default=10_000))
        sampler_state = SamplerState()

        # Stage 1: bilingual adaptation.
        stage1_over = dict(self.config.get("stage1", default={}) or {})
        plan1 = build_stage_plan(Stage.BILINGUAL_ADAPTATION, total_budget, {
            **({"budget": stage1_over["budget"]} if stage1_over.get("budget") else {}),
            **({"language_ratios": stage1_over["ratios"]} if stage1_over.get("ratios") else {}),
            **({"source_ratios": stage1_over["source_ratios"]}
               if stage1_over.get("source_ratios") else {}),
            "round_tokens": round_tokens,
            "seed": self.config.seed("sampling"),
            **{k: stage1_over[k] for k in ("use_topic_mixture", "use_ppl_curriculum")
               if k in stage1_over},
        })

        audit_files = {}
        try:
            curriculum = (self._build_curriculum(plan1, pools)
                          if plan1.use_ppl_curriculum else None)
            mixtures, topic_orders, snapshots = self._init_mixture(
                plan1, stage1_over, val)
            for round_index in range(1, plan1.rounds + 1):
                shard = sample_round(
                    pools, plan1, mixtures, curriculum,
                    round_index=round_index, topic_orders=topic_orders,
                    state=sampler_state,
                )
                self._write_shard(shard, plan1)
                if mixtures:
                    for language in sorted(mixtures, key=str):
                        lang = Language.parse(language)
                        cur = self.collect_snapshot(round_index, lang, val)
                        new_state, record = mixture_step(
                            mixtures[language], snapshots[language], cur
                        )
                        mixtures[language] = new_state
                        snapshots[language] = cur
                        audit_path = os.path.join(
                            self.out_dir, f"mixture_audit_{language}.jsonl")
                        with open(audit_path, "a", encoding="utf-8") as fh:
                            fh.write(json.dumps(record.to_json()) + "\n")
                        audit_files[language] = f"mixture_audit_{language}.jsonl"
        except CptForgeError as exc:
            raise _wrap_context(exc, f"stage {plan1.stage.value}") from exc

        # Stage 2: synthetic enhancement.
        stage2_over = dict(self.config.get("stage2", default={}) or {})
        plan2 = build_stage_plan(Stage.SYNTHETIC_ENHANCEMENT, total_budget, {
            **({"budget": stage2_over["budget"]} if stage2_over.get("budget") else {}),
            **({"language_ratios": stage2_over["ratios"]} if stage2_over.get("ratios") else {}),
            **({"source_ratios": stage2_over["source_ratios"]}
               if stage2_over.get("source_ratios") else {}),
            "round_tokens": round_tokens,
            "seed": self.config.seed("sampling"),
        })
        try:
            syn_docs, _pairs = self.synthesize(pools[POOL_EN])
            pools[POOL_SYN] = syn_docs
            for round_index in range(1, plan2.rounds + 1):
                shard = sample_round(
                    pools, plan2, None, None,
                    round_index=round_index, state=sampler_state,
                )
                self._write_shard(shard, plan2)
        except CptForgeError as exc:
            raise _wrap_context(exc, f"stage {plan2.stage.value}") from exc

        self._write_reports(plan1, plan2, audit_files, pools)
        return self.result

    def _build_curriculum(self, plan: StagePlan, pools) -> CurriculumPlan | None:
        zh_docs = pools.get(POOL_ZH, [])
        if not zh_docs:
            return None
        cur_cfg = self.config.get("stage1", "curriculum", default={}) or {}
        plan_obj, scored = build_ppl_plan(
            zh_docs,
            strategy=cur_cfg.get("strategy", "LH"),
            seed=self.config.seed("curriculum"),
            k=int(cur_cfg.get("k", 10)),
            scorer=self.scorer_fn("curriculum:zh"),
            cache_path=os.path.join(self.out_dir, "ppl_cache.jsonl"),
        )
        pools[POOL_ZH] = scored
        plan_obj.save(os.path.join(self.out_dir, "curriculum_plan.json"))
        return plan_obj

    def _init_mixture(self, plan: StagePlan, stage1_over: dict, val):
        if not plan.use_topic_mixture:
            return None, None, None
        alpha = float(stage1_over.get("alpha", 0.5))
        floor = float(stage1_over.get("floor", 0.05))
        weights = stage1_over.get("weights")
        mixtures: dict[str, MixtureState] = {}
        topic_orders: dict[str, list[str]] = {}
        snapshots: dict[str, PplSnapshot] = {}
        for pool, language in ((POOL_ZH, Language.ZH), (POOL_EN, Language.EN)):
            if plan.language_ratios.get(pool, 0) == 0:
                continue
            topics = list(self.taxonomy.for_language(language))
            mixtures[pool] = MixtureState.uniform(
                len(topics), alpha=alpha, floor=floor,
                weights=weights if weights is not None else None,
            )
            topic_orders[pool] = topics
            snapshots[pool] = self.collect_snapshot(0, language, val)
        return mixtures, topic_orders, snapshots

    def _write_shard(self, shard, plan: StagePlan):
        path = shard_paths(self.out_dir, plan.stage, shard.round)
        manifest = write_shard(shard, path, counter_name=self.counter_name,
                               vocab_path=self.vocab_path)
        self.result.shards.append({
            "path": os.path.basename(path),
            "sha256": shard_sha256(path),
            "stage": plan.stage.value,
            "round": shard.round,
            "records": manifest["record_count"],
            "tokens": manifest["grand_tokens"],
        })

    def _write_reports(self, plan1: StagePlan, plan2: StagePlan, audit_files, pools):
        composition = self._composition_report(plan1, plan2)
        comp_path = os.path.join(self.out_dir, "composition_report.json")
        with open(comp_path, "w", encoding="utf-8") as fh:
            json.dump(composition, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.result.reports = {
            "composition": "composition_report.json",
            "mixture_audit": audit_files or {},
            "qa_store": "qa_store.jsonl",
            "curriculum_plan": "curriculum_plan.json" if plan1.use_ppl_curriculum else None,
        }
        report_path = os.path.join(self.out_dir, "run_report.json")
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(self.result.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def _composition_report(self, plan1: StagePlan, plan2: StagePlan) -> dict:
        per_source: dict[str, int] = {}
        per_cell: dict[tuple[str, str], int] = {}
        grand = 0
        for entry in self.result.shards:
            manifest_file = os.path.join(self.out_dir, entry["path"] + ".manifest.json")
            with open(manifest_file, encoding="utf-8") as fh:
                manifest = json.load(fh)
            for cell in manifest["cells"]:
                per_source[cell["source"]] = per_source.get(cell["source"], 0) + cell["tokens"]
                key = (cell["language"], cell["source"])
                per_cell[key] = per_cell.get(key, 0) + cell["tokens"]
                grand += cell["tokens"]

        targets: dict[str, float] = {}
        for plan in (plan1, plan2):
            stage_tokens = plan.rounds * plan.round_tokens
            for pool, lang_ratio in plan.language_ratios.items():
                for source, source_ratio in plan.source_ratios[pool].items():
                    targets[source] = targets.get(source, 0.0) + (
                        stage_tokens * lang_ratio * source_ratio
                    )

        from .plans import TABLE1_VOLUMES

        table_total = sum(TABLE1_VOLUMES.values())
        return {
            "grand_tokens": grand,
            "per_source": {
                source: {
                    "tokens": tokens,
                    "share": tokens / grand if grand else 0.0,
                    "target_tokens": targets.get(source, 0.0),
                    "reference_share": TABLE1_VOLUMES[Source.parse(source)] / table_total,
                }
                for source, tokens in sorted(per_source.items())
            },
            "per_language_source": {
                f"{lang}/{source}": tokens
                for (lang, source), tokens in sorted(per_cell.items())
            },
        }


def run_pipeline(config: PipelineConfig, out_dir: str,
                 workers: int | None = None) -> RunResult:
    """Execute both CPT stages and emit shards, audit logs, and reports."""
    return _Run(config, out_dir, workers=workers).run()
