"""Corpus ingestion, token counting, per-source statistics, validation splits.

Documents arrive as newline-delimited JSON with a required ``text`` key;
language and source come from the caller (per-file) and may be overridden
per-record. Everything downstream sorts by document id before sampling, so
ingestion order and worker count never leak into results.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Sequence

from .errors import DataError, IngestError
from .seeding import derive_rng

logger = logging.getLogger(__name__)


class Language(str, enum.Enum):
    EN = "en"
    ZH = "zh"

    @classmethod
    def parse(cls, value: str) -> "Language":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise DataError(f"unknown language {value!r}; expected one of: en, zh")


class Source(str, enum.Enum):
    WEB_PAGES = "web_pages"
    ENCYCLOPEDIA = "encyclopedia"
    BOOKS = "books"
    QA_FORUMS = "qa_forums"
    ACADEMIC_PAPERS = "academic_papers"
    MATH_CORPORA = "math_corpora"
    CODE = "code"
    SYNTHETIC = "synthetic"

    @classmethod
    def parse(cls, value: str) -> "Source":
        normalized = value.strip().lower().replace(" ", "_").replace("-", "_")
        try:
            return cls(normalized)
        except ValueError:
            options = ", ".join(s.value for s in cls)
            raise DataError(f"unknown source {value!r}; expected one of: {options}")


SOURCE_DISPLAY_NAMES = {
    Source.WEB_PAGES: "Web Pages",
    Source.ENCYCLOPEDIA: "Encyclopedia",
    Source.BOOKS: "Books",
    Source.QA_FORUMS: "QA Forums",
    Source.ACADEMIC_PAPERS: "Academic Papers",
    Source.MATH_CORPORA: "Mathematical Corpora",
    Source.CODE: "Code",
    Source.SYNTHETIC: "Synthetic Data",
}


@dataclass(frozen=True)
class Document:
    """One corpus record.

    ``ppl`` holds the scoring model's perplexity of the text (the curriculum's
    difficulty signal); ``token_count`` is filled by :func:`count_tokens`.
    """

    id: str
    text: str
    language: Language
    source: Source
    url: str | None = None
    topic: str | None = None
    ppl: float | None = None
    token_count: int | None = None

    def __post_init__(self):
        if not self.id:
            raise DataError("document id must be non-empty")
        if not self.text:
            raise DataError(f"document {self.id}: text must be non-empty")
        if self.ppl is not None:
            if not math.isfinite(self.ppl) or self.ppl <= 0:
                raise DataError(f"document {self.id}: ppl must be finite and > 0, got {self.ppl}")
        if self.token_count is not None and self.token_count < 0:
            raise DataError(f"document {self.id}: token_count must be >= 0")

    def to_json_line(self) -> str:
        """Canonical single-line JSON; None fields are omitted."""
        record: dict = {
            "id": self.id,
            "text": self.text,
            "language": self.language.value,
            "source": self.source.value,
        }
        if self.url is not None:
            record["url"] = self.url
        if self.topic is not None:
            record["topic"] = self.topic
        if self.ppl is not None:
            record["ppl"] = self.ppl
        if self.token_count is not None:
            record["token_count"] = self.token_count
        return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


@dataclass
class IngestReport:
    """Per-file ingestion outcome in lenient mode."""

    path: str
    accepted: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)

    def log_summary(self):
        if self.rejected:
            lines = ", ".join(str(n) for n, _ in self.rejected[:20])
            more = "" if len(self.rejected) <= 20 else f" (+{len(self.rejected) - 20} more)"
            logger.warning(
                "%s: accepted %d records, rejected %d (lines %s%s)",
                self.path, self.accepted, len(self.rejected), lines, more,
            )


def _parse_record(
    obj: dict, default_language: Language, default_source: Source, fallback_id: str
) -> Document:
    text = obj.get("text")
    if not isinstance(text, str) or not text:
        raise ValueError("missing or empty 'text'")
    language = Language.parse(obj["language"]) if "language" in obj else default_language
    source = Source.parse(obj["source"]) if "source" in obj else default_source
    doc_id = obj.get("id")
    if doc_id is not None and not isinstance(doc_id, str):
        doc_id = str(doc_id)
    ppl = obj.get("ppl")
    if ppl is not None:
        ppl = float(ppl)
    token_count = obj.get("token_count")
    if token_count is not None:
        token_count = int(token_count)
    return Document(
        id=doc_id or fallback_id,
        text=text,
        language=language,
        source=source,
        url=obj.get("url"),
        topic=obj.get("topic"),
        ppl=ppl,
        token_count=token_count,
    )


def ingest(
    path: str | os.PathLike,
    language: Language,
    source: Source,
    strict: bool = True,
    report: IngestReport | None = None,
) -> Iterator[Document]:
    """Stream Documents from a JSONL file in file order.

    Strict mode aborts on the first malformed line with its 1-based line
    number; lenient mode skips bad lines and records them on ``report``.
    Missing ids become ``<filename>:<line>``.
    """
    path = os.fspath(path)
    filename = os.path.basename(path)
    if report is None:
        report = IngestReport(path=path)
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("record is not a JSON object")
                doc = _parse_record(obj, language, source, f"{filename}:{line_no}")
                if doc.id in seen_ids:
                    raise ValueError(f"duplicate document id {doc.id!r}")
                seen_ids.add(doc.id)
            except (ValueError, DataError) as exc:
                if strict:
                    raise IngestError(path, line_no, str(exc)) from exc
                report.rejected.append((line_no, str(exc)))
                continue
            report.accepted += 1
            yield doc


def write_jsonl(docs: Iterable[Document], path: str | os.PathLike):
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(doc.to_json_line())
            fh.write("\n")


# --- token counters -------------------------------------------------------

TokenCounter = Callable[[str], int]


def whitespace_counter(text: str) -> int:
    return len(text.split())


def bytes_counter(text: str) -> int:
    """Estimate tokens as utf-8 bytes / 4, rounded up (never 0 for non-empty text)."""
    n = len(text.encode("utf-8"))
    return (n + 3) // 4


class VocabCounter:
    """Greedy longest-match tokenizer over an external vocabulary file.

    The file holds one token per line; characters not covered by any
    vocabulary entry count as one token each.
    """

    def __init__(self, vocab_path: str | os.PathLike):
        try:
            with open(vocab_path, encoding="utf-8") as fh:
                tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        except OSError as exc:
            raise DataError(f"unreadable vocabulary file {vocab_path}: {exc}") from exc
        if not tokens:
            raise DataError(f"vocabulary file {vocab_path} is empty")
        self.vocab = set(tokens)
        self.max_len = max(len(t) for t in tokens)

    def __call__(self, text: str) -> int:
        count = 0
        i = 0
        n = len(text)
        while i < n:
            match_len = 0
            limit = min(self.max_len, n - i)
            for length in range(limit, 0, -1):
                if text[i : i + length] in self.vocab:
                    match_len = length
                    break
            count += 1
            i += match_len if match_len else 1
        return count


def make_counter(kind: str, vocab_path: str | None = None) -> TokenCounter:
    if kind == "whitespace":
        return whitespace_counter
    if kind == "bytes":
        return bytes_counter
    if kind == "vocab":
        if not vocab_path:
            raise DataError("vocab counter requires a vocabulary file path")
        return VocabCounter(vocab_path)
    raise DataError(f"unknown token counter {kind!r}; expected whitespace, bytes, or vocab")


def count_tokens(doc: Document, counter: TokenCounter) -> Document:
    """Return the document with token_count filled in (deterministic per counter)."""
    return replace(doc, token_count=counter(doc.text))


def count_corpus(docs: Iterable[Document], counter: TokenCounter) -> list[Document]:
    return [doc if doc.token_count is not None else count_tokens(doc, counter) for doc in docs]


# --- validation splits ----------------------------------------------------

def split_validation(
    corpus: Sequence[Document], per_topic: int = 200, seed: int = 0
) -> tuple[list[Document], list[Document]]:
    """Carve a per-topic validation set by seeded sampling without replacement.

    Each topic contributes min(per_topic, available) documents; the pair
    (train, validation) partitions the input and is deterministic in seed.
    """
    if per_topic <= 0:
        raise DataError("per_topic must be positive")
    by_topic: dict[tuple[str, str], list[Document]] = {}
    for doc in corpus:
        if doc.topic is None:
            raise DataError(f"document {doc.id} has no topic label; classify the corpus first")
        by_topic.setdefault((doc.language.value, doc.topic), []).append(doc)

    val_ids: set[str] = set()
    for key in sorted(by_topic):
        docs = sorted(by_topic[key], key=lambda d: d.id)
        take = min(per_topic, len(docs))
        if take < per_topic:
            logger.warning(
                "topic %s/%s has only %d documents; validation takes all of them "
                "(requested %d)", key[0], key[1], len(docs), per_topic,
            )
        rng = derive_rng(seed, "split_validation", key[0], key[1])
        val_ids.update(d.id for d in rng.sample(docs, take))

    train = [d for d in corpus if d.id not in val_ids]
    val = [d for d in corpus if d.id in val_ids]
    return train, val


# --- aggregation ----------------------------------------------------------

@dataclass
class CorpusStats:
    """Document and token totals per (language, source) cell."""

    cells: dict[tuple[Language, Source], tuple[int, int]]
    grand_docs: int
    grand_tokens: int

    def to_json(self) -> dict:
        return {
            "cells": [
                {
                    "language": lang.value,
                    "source": src.value,
                    "docs": docs,
                    "tokens": tokens,
                }
                for (lang, src), (docs, tokens) in sorted(
                    self.cells.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)
                )
            ],
            "grand_docs": self.grand_docs,
            "grand_tokens": self.grand_tokens,
        }


def source_stats(corpus: Iterable[Document]) -> CorpusStats:
    """Exact per-(language, source) aggregation; cells sum to the grand totals."""
    cells: dict[tuple[Language, Source], tuple[int, int]] = {}
    grand_docs = 0
    grand_tokens = 0
    for doc in corpus:
        if doc.token_count is None:
            raise DataError(f"document {doc.id} has no token_count; run count_tokens first")
        docs, tokens = cells.get((doc.language, doc.source), (0, 0))
        cells[(doc.language, doc.source)] = (docs + 1, tokens + doc.token_count)
        grand_docs += 1
        grand_tokens += doc.token_count
    return CorpusStats(cells=cells, grand_docs=grand_docs, grand_tokens=grand_tokens)
