"""Deterministic round sampling and shard serialization.

A round's token budget is apportioned (largest remainder) over
(pool, source[, topic]) cells. Each cell draws from a seeded, pre-shuffled
queue of its documents until the cell target is met, overshooting by at most
one document; exhausted queues fall back to seeded sampling with replacement
under a loud warning. Queue order depends only on (seed, stage, cell), and
cursor positions live in a serializable SamplerState, so one long run and a
sequence of single-round invocations produce byte-identical shards.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..corpus import Document, Language, Source, TokenCounter, make_counter
from ..curriculum import CurriculumPlan
from ..errors import DataError, ShardIntegrityError
from ..mixture import MixtureState
from ..seeding import derive_rng
from .plans import POOL_EN, POOL_SYN, POOL_ZH, Stage, StagePlan, apportion

logger = logging.getLogger(__name__)

Cell = tuple[str, str, str]  # (pool, source value, topic or "")


def pool_of(doc: Document) -> str:
    if doc.source is Source.SYNTHETIC:
        return POOL_SYN
    return POOL_ZH if doc.language is Language.ZH else POOL_EN


def split_pools(docs: Sequence[Document]) -> dict[str, list[Document]]:
    pools: dict[str, list[Document]] = {POOL_ZH: [], POOL_EN: [], POOL_SYN: []}
    for doc in docs:
        pools[pool_of(doc)].append(doc)
    return pools


def cell_targets(
    plan: StagePlan,
    mixtures: Mapping[str, MixtureState] | None,
    topic_orders: Mapping[str, Sequence[str]] | None,
    round_tokens: int | None = None,
) -> dict[Cell, int]:
    """Integer token targets per cell for one round.

    Cell weights are language_ratio * source_ratio (* topic proportion when
    the plan uses topic mixture and the pool has a mixture state).
    """
    weights: dict[Cell, float] = {}
    for pool, lang_ratio in plan.language_ratios.items():
        if lang_ratio == 0:
            continue
        state = (mixtures or {}).get(pool) if plan.use_topic_mixture else None
        for source, source_ratio in plan.source_ratios[pool].items():
            if source_ratio == 0:
                continue
            if state is not None:
                order = (topic_orders or {}).get(pool)
                if order is None or len(order) != state.size:
                    raise DataError(
                        f"pool {pool!r}: topic order missing or mismatched with mixture state"
                    )
                for topic, proportion in zip(order, state.proportions):
                    weights[(pool, source, topic)] = lang_ratio * source_ratio * float(proportion)
            else:
                weights[(pool, source, "")] = lang_ratio * source_ratio
    total = round_tokens if round_tokens is not None else plan.round_tokens
    return apportion(total, weights)


@dataclass
class SamplerState:
    """Per-cell consumption cursors; serializable so sampling can resume."""

    drawn: dict[str, int] = field(default_factory=dict)
    fallback: dict[str, int] = field(default_factory=dict)

    @staticmethod
    def _key(stage: Stage, cell: Cell) -> str:
        return "/".join((stage.value,) + cell)

    def to_json(self) -> dict:
        return {"drawn": dict(self.drawn), "fallback": dict(self.fallback)}

    @classmethod
    def from_json(cls, obj: dict) -> "SamplerState":
        return cls(drawn=dict(obj.get("drawn", {})),
                   fallback=dict(obj.get("fallback", {})))

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "SamplerState":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class Shard:
    stage: Stage
    round: int
    index: int
    records: tuple[Document, ...]

    def manifest(self) -> dict:
        cells: dict[tuple[str, str, str], list[int]] = {}
        grand = 0
        for doc in self.records:
            if doc.token_count is None:
                raise DataError(f"shard record {doc.id} lacks token_count")
            key = (doc.language.value, doc.source.value, doc.topic or "")
            entry = cells.setdefault(key, [0, 0])
            entry[0] += 1
            entry[1] += doc.token_count
            grand += doc.token_count
        return {
            "stage": self.stage.value,
            "round": self.round,
            "index": self.index,
            "record_count": len(self.records),
            "grand_tokens": grand,
            "cells": [
                {"language": k[0], "source": k[1], "topic": k[2],
                 "docs": v[0], "tokens": v[1]}
                for k, v in sorted(cells.items())
            ],
        }


def _cell_documents(pool_docs: Sequence[Document], by_topic: bool) -> dict[tuple[str, str], list[Document]]:
    grouped: dict[tuple[str, str], list[Document]] = {}
    for doc in pool_docs:
        key = (doc.source.value, (doc.topic or "") if by_topic else "")
        grouped.setdefault(key, []).append(doc)
    return grouped


class _CellQueue:
    """Seeded shuffled queue over a cell's documents with resumable cursor."""

    def __init__(self, cell: Cell, docs: list[Document], seed: int, stage: Stage,
                 curriculum_sequence: Sequence[Document] | None):
        self.cell = cell
        self.stage = stage
        for doc in docs:
            if not doc.token_count:
                raise DataError(
                    f"document {doc.id} has no positive token_count; "
                    "count the corpus before sampling"
                )
        if curriculum_sequence is not None:
            members = {d.id for d in docs}
            self.queue = [d for d in curriculum_sequence if d.id in members]
            in_plan = {d.id for d in self.queue}
            self.queue.extend(sorted((d for d in docs if d.id not in in_plan),
                                     key=lambda d: d.id))
        else:
            self.queue = sorted(docs, key=lambda d: d.id)
            derive_rng(seed, "cell-queue", stage.value, *cell).shuffle(self.queue)
        self._fallback_rng = derive_rng(seed, "cell-fallback", stage.value, *cell)
        self._pool = sorted(docs, key=lambda d: d.id)

    def draw(self, state: SamplerState, target_tokens: int) -> list[Document]:
        key = SamplerState._key(self.stage, self.cell)
        cursor = state.drawn.get(key, 0)
        fallback_done = state.fallback.get(key, 0)
        # Replay fallback draws already consumed by earlier rounds so the
        # with-replacement stream continues instead of repeating.
        for _ in range(fallback_done):
            self._fallback_rng.choice(self._pool)
        taken: list[Document] = []
        got = 0
        while got < target_tokens:
            if cursor < len(self.queue):
                doc = self.queue[cursor]
                cursor += 1
            else:
                if fallback_done == 0:
                    logger.warning(
                        "cell %s exhausted after %d documents; sampling with replacement",
                        key, len(self.queue),
                    )
                doc = self._fallback_rng.choice(self._pool)
                fallback_done += 1
            taken.append(doc)
            got += doc.token_count
        state.drawn[key] = cursor
        state.fallback[key] = fallback_done
        return taken


def sample_round(
    pools: Mapping[str, Sequence[Document]],
    plan: StagePlan,
    mixtures: Mapping[str, MixtureState] | None = None,
    curriculum: CurriculumPlan | None = None,
    round_index: int = 0,
    topic_orders: Mapping[str, Sequence[str]] | None = None,
    state: SamplerState | None = None,
    shard_index: int | None = None,
) -> Shard:
    """Draw one round's shard according to the plan.

    Within the Chinese pool, when the plan uses the PPL curriculum, cells
    consume documents in curriculum-plan order (easy bins first, advancing
    across rounds via the sampler state); every other cell consumes a seeded
    shuffle. Passing the same SamplerState across rounds makes consecutive
    calls equivalent to one long run.
    """
    state = state if state is not None else SamplerState()
    targets = cell_targets(plan, mixtures, topic_orders)

    curriculum_sequence: list[Document] | None = None
    if plan.use_ppl_curriculum and curriculum is not None:
        zh_docs = {d.id: d for d in pools.get(POOL_ZH, ())}
        curriculum_sequence = curriculum.replay(zh_docs)

    grouped_cache: dict[str, dict[tuple[str, str], list[Document]]] = {}
    records: list[Document] = []
    for cell in sorted(targets):
        target = targets[cell]
        if target == 0:
            continue
        pool_name, source, topic = cell
        pool_docs = pools.get(pool_name, ())
        by_topic = topic != ""
        if pool_name not in grouped_cache:
            grouped_cache[pool_name] = _cell_documents(pool_docs, by_topic)
        members = grouped_cache[pool_name].get((source, topic), [])
        if not members:
            raise DataError(
                f"empty mandatory pool for cell (pool={pool_name}, source={source}, "
                f"topic={topic or '-'}) with target {target} tokens"
            )
        sequence = curriculum_sequence if (pool_name == POOL_ZH and curriculum_sequence) else None
        queue = _CellQueue(cell, members, plan.seed, plan.stage, sequence)
        records.extend(queue.draw(state, target))

    return Shard(
        stage=plan.stage,
        round=round_index,
        index=shard_index if shard_index is not None else round_index,
        records=tuple(records),
    )


# --- shard I/O ---------------------------------------------------------------

def _manifest_path(path: str) -> str:
    return path + ".manifest.json"


def write_shard(shard: Shard, path: str, counter_name: str = "whitespace",
                vocab_path: str | None = None) -> dict:
    """Write shard records as JSONL plus a manifest sidecar; returns the manifest."""
    manifest = shard.manifest()
    manifest["counter"] = counter_name
    if vocab_path:
        manifest["vocab_path"] = vocab_path
    with open(path, "w", encoding="utf-8") as fh:
        for position, doc in enumerate(shard.records):
            fh.write(json.dumps(
                {
                    "id": doc.id,
                    "text": doc.text,
                    "language": doc.language.value,
                    "source": doc.source.value,
                    "topic": doc.topic,
                    "stage": shard.stage.value,
                    "round": shard.round,
                    "position": position,
                },
                ensure_ascii=False,
            ) + "\n")
    with open(_manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest


def read_shard(path: str, counter: TokenCounter | None = None) -> Shard:
    """Load a shard and verify its records against the manifest sidecar."""
    try:
        with open(_manifest_path(path), encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise ShardIntegrityError(f"missing manifest for {path}: {exc}") from exc
    if counter is None:
        counter = make_counter(manifest.get("counter", "whitespace"),
                               manifest.get("vocab_path"))
    records: list[Document] = []
    stage = Stage.parse(manifest["stage"])
    with open(path, encoding="utf-8") as fh:
        for expected_position, line in enumerate(fh):
            obj = json.loads(line)
            if obj["position"] != expected_position:
                raise ShardIntegrityError(
                    f"{path}: position {obj['position']} at line {expected_position + 1}"
                )
            records.append(Document(
                id=obj["id"],
                text=obj["text"],
                language=Language.parse(obj["language"]),
                source=Source.parse(obj["source"]),
                topic=obj.get("topic"),
                token_count=counter(obj["text"]),
            ))
    shard = Shard(stage=stage, round=int(manifest["round"]),
                  index=int(manifest["index"]), records=tuple(records))
    recomputed = shard.manifest()
    for key in ("record_count", "grand_tokens", "cells"):
        if recomputed[key] != manifest[key]:
            raise ShardIntegrityError(
                f"{path}: manifest mismatch on {key} "
                f"(stored {manifest[key]!r}, recomputed {recomputed[key]!r})"
            )
    return shard


def shard_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def shard_paths(out_dir: str, stage: Stage, round_index: int) -> str:
    return os.path.join(out_dir, f"shard_{stage.value}_{round_index:04d}.jsonl")
