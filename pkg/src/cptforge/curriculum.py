"""Difficulty- and discipline-based ordering of training data.

Difficulty is the scoring model's perplexity of each document. Documents are
sorted by (ppl, id) and cut into k equal-count bins (remainders land in the
easier bins); LH emits bins easy-to-hard, HL the exact reverse, RM one global
shuffle. Discipline schedules (PB, BP, PBP) order by tag instead, splitting a
repeated discipline's documents evenly across its occurrences.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

from .corpus import Document
from .errors import DataError, RemoteError
from .seeding import derive_rng

logger = logging.getLogger(__name__)

PPL_STRATEGIES = ("RM", "LH", "HL")
DISCIPLINE_STRATEGIES = ("PB", "BP", "PBP")
DEFAULT_BIN_COUNT = 10

# Discipline groupings behind the named two-subject schedules; "biochemistry"
# covers the biology and chemistry tags.
DISCIPLINE_SEQUENCES: dict[str, tuple[frozenset[str], ...]] = {
    "PB": (frozenset({"physics"}), frozenset({"biology", "chemistry"})),
    "BP": (frozenset({"biology", "chemistry"}), frozenset({"physics"})),
    "PBP": (
        frozenset({"physics"}),
        frozenset({"biology", "chemistry"}),
        frozenset({"physics"}),
    ),
}


@dataclass(frozen=True)
class BinStats:
    count: int
    mean_ppl: float | None

    def to_json(self) -> dict:
        return {"count": self.count, "mean_ppl": self.mean_ppl}


@dataclass(frozen=True)
class CurriculumPlan:
    strategy: str
    seed: int
    bins: tuple[tuple[str, ...], ...]
    bin_stats: tuple[BinStats, ...]

    def __post_init__(self):
        if self.strategy not in PPL_STRATEGIES + DISCIPLINE_STRATEGIES:
            raise DataError(f"unknown curriculum strategy {self.strategy!r}")
        flat = [doc_id for b in self.bins for doc_id in b]
        if len(flat) != len(set(flat)):
            raise DataError("plan bins contain duplicate document ids")
        if len(self.bins) != len(self.bin_stats):
            raise DataError("bin_stats length does not match bins")

    def document_sequence(self) -> list[str]:
        return [doc_id for b in self.bins for doc_id in b]

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "bins": [list(b) for b in self.bins],
            "bin_stats": [s.to_json() for s in self.bin_stats],
        }

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, ensure_ascii=False, indent=None,
                      separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_json(cls, obj: dict) -> "CurriculumPlan":
        return cls(
            strategy=obj["strategy"],
            seed=int(obj["seed"]),
            bins=tuple(tuple(b) for b in obj["bins"]),
            bin_stats=tuple(
                BinStats(count=int(s["count"]),
                         mean_ppl=None if s["mean_ppl"] is None else float(s["mean_ppl"]))
                for s in obj["bin_stats"]
            ),
        )

    @classmethod
    def load(cls, path: str) -> "CurriculumPlan":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def replay(self, docs_by_id: dict[str, Document]) -> list[Document]:
        """Materialize the exact document sequence the plan encodes."""
        missing = [i for i in self.document_sequence() if i not in docs_by_id]
        if missing:
            raise DataError(f"plan references unknown documents: {missing[:5]}")
        return [docs_by_id[i] for i in self.document_sequence()]


# --- scoring ---------------------------------------------------------------

@dataclass
class PplCache:
    """Sidecar JSONL cache ({id, ppl} records) keyed by document id."""

    path: str | None
    entries: dict[str, float] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | None) -> "PplCache":
        cache = cls(path=path)
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    for line in fh:
                        if line.strip():
                            entry = json.loads(line)
                            cache.entries[entry["id"]] = float(entry["ppl"])
            except FileNotFoundError:
                pass
        return cache

    def append(self, new_entries: dict[str, float]):
        self.entries.update(new_entries)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                for doc_id in sorted(new_entries):
                    fh.write(json.dumps({"id": doc_id, "ppl": new_entries[doc_id]}) + "\n")


def assign_ppl(
    docs: Sequence[Document],
    scorer: Callable[[list[str]], list[float]] | None,
    cache_path: str | None = None,
    batch_size: int = 64,
) -> list[Document]:
    """Ensure every document carries a finite positive ppl.

    Pre-scored documents pass through untouched; cache hits skip the scorer;
    only the remainder is scored (in id order, batched). Scorer failures
    abort with the ids that remain unscored.
    """
    cache = PplCache.load(cache_path)
    out: dict[str, Document] = {}
    pending: list[Document] = []
    for doc in docs:
        if doc.ppl is not None:
            out[doc.id] = doc
        elif doc.id in cache.entries:
            out[doc.id] = replace(doc, ppl=cache.entries[doc.id])
        else:
            pending.append(doc)

    if pending:
        if scorer is None:
            raise DataError(
                f"{len(pending)} documents lack ppl and no scorer is configured "
                f"(first: {pending[0].id})"
            )
        pending.sort(key=lambda d: d.id)
        scored: dict[str, float] = {}
        for start in range(0, len(pending), batch_size):
            batch = pending[start : start + batch_size]
            try:
                values = scorer([d.text for d in batch])
            except RemoteError as exc:
                unscored = [d.id for d in pending[start:]]
                raise RemoteError(
                    f"scoring aborted; unscored ids: {unscored[:10]}"
                    + (f" (+{len(unscored) - 10} more)" if len(unscored) > 10 else "")
                ) from exc
            if len(values) != len(batch):
                raise RemoteError(f"scorer returned {len(values)} values for {len(batch)} texts")
            for doc, value in zip(batch, values):
                scored[doc.id] = float(value)
        cache.append(scored)
        for doc in pending:
            out[doc.id] = replace(doc, ppl=scored[doc.id])

    return [out[doc.id] for doc in docs]


# --- binning and ordering --------------------------------------------------

def bin_by_ppl(docs: Sequence[Document], k: int = DEFAULT_BIN_COUNT) -> list[list[Document]]:
    """Sort ascending by (ppl, id) and split into k contiguous quantile bins.

    Sizes differ by at most 1; the remainder goes to the earlier (easier)
    bins.
    """
    if k <= 0:
        raise DataError("k must be positive")
    if k > len(docs):
        raise DataError(f"k={k} exceeds document count {len(docs)}")
    unscored = [d.id for d in docs if d.ppl is None]
    if unscored:
        raise DataError(f"unscored documents: {unscored[:5]}")
    ordered = sorted(docs, key=lambda d: (d.ppl, d.id))
    base, extra = divmod(len(ordered), k)
    bins: list[list[Document]] = []
    cursor = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        bins.append(ordered[cursor : cursor + size])
        cursor += size
    return bins


def _mean_ppl(docs: Sequence[Document]) -> float | None:
    if not docs or any(d.ppl is None for d in docs):
        return None
    return sum(d.ppl for d in docs) / len(docs)


def order(bins: Sequence[Sequence[Document]], strategy: str, seed: int) -> CurriculumPlan:
    """Arrange PPL bins into a plan.

    LH keeps bins ascending, HL reverses them (within-bin order identical to
    LH), RM flattens everything into one seeded global shuffle. Within-bin
    shuffles derive from (seed, original bin index) so LH and HL are exact
    bin-sequence reverses of each other.
    """
    if strategy not in PPL_STRATEGIES:
        raise DataError(f"strategy must be one of {PPL_STRATEGIES}, got {strategy!r}")
    shuffled: list[list[Document]] = []
    for idx, bin_docs in enumerate(bins):
        docs = sorted(bin_docs, key=lambda d: d.id)
        derive_rng(seed, "curriculum-bin", idx).shuffle(docs)
        shuffled.append(docs)

    if strategy == "RM":
        flat = [d for b in shuffled for d in b]
        flat.sort(key=lambda d: d.id)
        derive_rng(seed, "curriculum-global").shuffle(flat)
        plan_bins = [flat]
    elif strategy == "LH":
        plan_bins = shuffled
    else:  # HL
        plan_bins = list(reversed(shuffled))

    return CurriculumPlan(
        strategy=strategy,
        seed=seed,
        bins=tuple(tuple(d.id for d in b) for b in plan_bins),
        bin_stats=tuple(BinStats(count=len(b), mean_ppl=_mean_ppl(b)) for b in plan_bins),
    )


def order_by_discipline(
    docs: Sequence[Document],
    sequence: Sequence[Iterable[str]],
    seed: int,
    strategy: str,
) -> CurriculumPlan:
    """One bin per sequence element; a repeated discipline's documents are
    split evenly (seeded) across its occurrences, earlier occurrences taking
    the remainder."""
    if strategy not in DISCIPLINE_STRATEGIES:
        raise DataError(f"strategy must be one of {DISCIPLINE_STRATEGIES}, got {strategy!r}")
    elements = [frozenset(e) for e in sequence]
    covered = set().union(*elements) if elements else set()
    present = {d.topic for d in docs}
    stray = present - covered
    if stray or None in present:
        raise DataError(f"documents carry disciplines absent from the sequence: {sorted(x or '<none>' for x in stray | ({None} & present))}")

    bins: list[list[Document]] = [[] for _ in elements]
    for discipline in sorted(present):
        slots = [i for i, e in enumerate(elements) if discipline in e]
        members = sorted((d for d in docs if d.topic == discipline), key=lambda d: d.id)
        derive_rng(seed, "curriculum-discipline", discipline).shuffle(members)
        base, extra = divmod(len(members), len(slots))
        cursor = 0
        for j, slot in enumerate(slots):
            size = base + (1 if j < extra else 0)
            bins[slot].extend(members[cursor : cursor + size])
            cursor += size

    return CurriculumPlan(
        strategy=strategy,
        seed=seed,
        bins=tuple(tuple(d.id for d in b) for b in bins),
        bin_stats=tuple(BinStats(count=len(b), mean_ppl=None) for b in bins),
    )


def build_ppl_plan(
    docs: Sequence[Document],
    strategy: str,
    seed: int,
    k: int = DEFAULT_BIN_COUNT,
    scorer: Callable[[list[str]], list[float]] | None = None,
    cache_path: str | None = None,
) -> tuple[CurriculumPlan, list[Document]]:
    """Score (if needed), bin, and order in one call; returns (plan, scored docs)."""
    scored = assign_ppl(docs, scorer, cache_path=cache_path)
    bins = bin_by_ppl(scored, k=min(k, len(scored)))
    return order(bins, strategy, seed), scored
