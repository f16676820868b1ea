"""Accuracy-degradation transforms for data-quality ablations.

Three candidate classes: number tokens (each occurrence replaced
independently with a same-digit-count value), frequent nouns (swapped for a
random sibling hyponym under the same hypernym), and frequent adjectives
(swapped for an antonym). Word swaps are decided once per distinct word per
document and applied to every occurrence, so a document never mixes replaced
and unreplaced occurrences of a chosen word. Every candidate's marginal
replacement probability equals the configured ratio.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import Document
from .errors import DataError
from .seeding import derive_rng

NUMBER_RE = re.compile(r"\d+(?:\.\d+)?")
WORD_RE = re.compile(r"[A-Za-z][A-Za-z'-]*")
DEFAULT_TOP_K = 500
PAPER_RATIO_LEVELS = (0.0, 0.3, 0.4, 0.5, 0.6, 0.7)


@dataclass(frozen=True)
class Lexicon:
    """Noun hyponym-sibling table and adjective antonym table.

    nouns: word -> (hypernym, sibling hyponyms); every sibling list must
    offer at least one replacement different from the word itself.
    """

    nouns: dict[str, tuple[str, tuple[str, ...]]]
    adjectives: dict[str, tuple[str, ...]]

    def __post_init__(self):
        for word, (hypernym, siblings) in self.nouns.items():
            if len(siblings) < 2 or all(s.lower() == word.lower() for s in siblings):
                raise DataError(
                    f"noun {word!r} (hypernym {hypernym!r}) needs >= 2 siblings with "
                    "at least one differing from the word"
                )
        for word, antonyms in self.adjectives.items():
            if not antonyms:
                raise DataError(f"adjective {word!r} has an empty antonym list")

    @classmethod
    def from_json(cls, obj: dict) -> "Lexicon":
        nouns = {
            w.lower(): (entry["hypernym"], tuple(entry["siblings"]))
            for w, entry in obj.get("nouns", {}).items()
        }
        adjectives = {
            w.lower(): tuple(ants) for w, ants in obj.get("adjectives", {}).items()
        }
        return cls(nouns=nouns, adjectives=adjectives)

    @classmethod
    def from_json_file(cls, path: str) -> "Lexicon":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_json(json.load(fh))
        except OSError as exc:
            raise DataError(f"unreadable lexicon file {path}: {exc}") from exc


@dataclass(frozen=True)
class CorruptionSpec:
    ratio: float
    seed: int
    lexicon: Lexicon
    enable_numbers: bool = True
    enable_noun_hyponyms: bool = True
    enable_adjective_antonyms: bool = True
    top_k_frequent: int = DEFAULT_TOP_K

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise DataError(f"corruption ratio must be in [0,1], got {self.ratio}")
        if self.top_k_frequent < 1:
            raise DataError("top_k_frequent must be >= 1")


@dataclass(frozen=True)
class Candidate:
    offset: int
    token: str
    kind: str  # "number" | "noun" | "adjective"


@dataclass
class ChangeReport:
    doc_id: str | None
    candidates: int
    changes: list[dict] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)

    @property
    def replaced(self) -> int:
        return len(self.changes)

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "candidates": self.candidates,
            "replaced": self.replaced,
            "changes": self.changes,
            "skipped": self.skipped,
        }


def build_doc_freq(docs: Iterable[Document]) -> dict[str, int]:
    """Document frequency of lowercased word tokens over a corpus."""
    freq: dict[str, int] = {}
    for doc in docs:
        seen = {m.group(0).lower() for m in WORD_RE.finditer(doc.text)}
        for word in seen:
            freq[word] = freq.get(word, 0) + 1
    return freq


def _frequent_words(words: Iterable[str], corpus_freq: dict[str, int], top_k: int) -> set[str]:
    """The top_k lexicon words by corpus document frequency (ties by word)."""
    ranked = sorted(
        (w for w in words if corpus_freq.get(w, 0) > 0),
        key=lambda w: (-corpus_freq[w], w),
    )
    return set(ranked[:top_k])


def find_candidates(
    text: str, spec: CorruptionSpec, corpus_freq: dict[str, int]
) -> list[Candidate]:
    """All replaceable occurrences, listed left-to-right with character offsets."""
    noun_set: set[str] = set()
    adj_set: set[str] = set()
    if spec.enable_noun_hyponyms:
        noun_set = _frequent_words(spec.lexicon.nouns, corpus_freq, spec.top_k_frequent)
    if spec.enable_adjective_antonyms:
        adj_set = _frequent_words(spec.lexicon.adjectives, corpus_freq, spec.top_k_frequent)

    candidates: list[Candidate] = []
    if spec.enable_numbers:
        for m in NUMBER_RE.finditer(text):
            candidates.append(Candidate(m.start(), m.group(0), "number"))
    for m in WORD_RE.finditer(text):
        word = m.group(0).lower()
        if word in noun_set:
            candidates.append(Candidate(m.start(), m.group(0), "noun"))
        elif word in adj_set:
            candidates.append(Candidate(m.start(), m.group(0), "adjective"))
    candidates.sort(key=lambda c: c.offset)
    return candidates


def _match_case(replacement: str, original: str) -> str:
    if original.isupper():
        return replacement.upper()
    if original[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


def _replace_number(token: str, rng) -> str:
    """Same digit count (decimal point preserved in place), never the original."""
    digits = [i for i, ch in enumerate(token) if ch.isdigit()]
    n = len(digits)
    lo = 0 if n == 1 else 10 ** (n - 1)
    hi = 10 ** n - 1
    while True:
        drawn = str(rng.randint(lo, hi)).rjust(n, "0")
        out = list(token)
        for pos, ch in zip(digits, drawn):
            out[pos] = ch
        candidate = "".join(out)
        if candidate != token:
            return candidate


def corrupt(
    text: str,
    spec: CorruptionSpec,
    corpus_freq: dict[str, int],
    doc_id: str | None = None,
) -> tuple[str, ChangeReport]:
    """Independently replace each candidate with probability spec.ratio.

    The RNG stream derives from (spec.seed, doc_id), so per-document
    corruption is deterministic and order-independent across a corpus.
    Ratio 0.0 returns the text unchanged with an empty report.
    """
    candidates = find_candidates(text, spec, corpus_freq)
    report = ChangeReport(doc_id=doc_id, candidates=len(candidates))
    if spec.ratio == 0.0 or not candidates:
        return text, report

    rng = derive_rng(spec.seed, "corrupt", doc_id if doc_id is not None else "")
    word_decisions: dict[str, str | None] = {}
    pieces: list[str] = []
    cursor = 0

    for cand in candidates:
        replacement: str | None = None
        if cand.kind == "number":
            if rng.random() < spec.ratio:
                replacement = _replace_number(cand.token, rng)
        else:
            word = cand.token.lower()
            if word not in word_decisions:
                if rng.random() < spec.ratio:
                    if cand.kind == "noun":
                        _, siblings = spec.lexicon.nouns[word]
                        options = sorted({s for s in siblings if s.lower() != word})
                    else:
                        options = sorted(set(spec.lexicon.adjectives[word]))
                    if options:
                        word_decisions[word] = rng.choice(options)
                    else:
                        word_decisions[word] = None
                        report.skipped.append(
                            {"offset": cand.offset, "token": cand.token,
                             "reason": "no distinct replacement in lexicon"}
                        )
                else:
                    word_decisions[word] = None
            chosen = word_decisions[word]
            if chosen is not None:
                replacement = _match_case(chosen, cand.token)

        if replacement is not None:
            pieces.append(text[cursor : cand.offset])
            pieces.append(replacement)
            cursor = cand.offset + len(cand.token)
            report.changes.append(
                {"offset": cand.offset, "before": cand.token,
                 "after": replacement, "class": cand.kind}
            )

    pieces.append(text[cursor:])
    return "".join(pieces), report


def corrupt_document(
    doc: Document, spec: CorruptionSpec, corpus_freq: dict[str, int]
) -> tuple[Document, ChangeReport]:
    corrupted, report = corrupt(doc.text, spec, corpus_freq, doc_id=doc.id)
    from dataclasses import replace as dc_replace

    return dc_replace(doc, text=corrupted, token_count=None), report


def corrupt_corpus(
    docs: Sequence[Document], spec: CorruptionSpec,
    corpus_freq: dict[str, int] | None = None,
) -> tuple[list[Document], list[ChangeReport]]:
    """Corrupt a whole corpus; the frequency map defaults to the corpus itself."""
    if corpus_freq is None:
        corpus_freq = build_doc_freq(docs)
    out_docs: list[Document] = []
    reports: list[ChangeReport] = []
    for doc in docs:
        new_doc, report = corrupt_document(doc, spec, corpus_freq)
        out_docs.append(new_doc)
        reports.append(report)
    return out_docs, reports
