"""Bilingual topic taxonomy, annotation prompt, and document classifiers.

Two classifier paths exist: a built-in lexicon classifier driven by a
keyword-weights file (deterministic, dependency-free) and a client for an
external HTTP classifier service. Both return labels drawn from the
document's language taxonomy.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

from .corpus import Document, Language
from .errors import DataError

logger = logging.getLogger(__name__)

EN_TOPICS = (
    "Mathematics and Physics",
    "Computer Science and Engineering",
    "Biology and Chemistry",
    "History and Geography",
    "Law and Policy",
    "Philosophy and Logic",
    "Economics and Business",
    "Psychology and Sociology",
    "Security and International Relations",
    "Medicine and Health",
    "Others",
)

ZH_TOPICS = (
    "Biology and Chemistry",
    "Computer Science and Engineering",
    "Economics and Business",
    "History and Geography",
    "Law and Policy",
    "Mathematics and Physics",
    "Medicine and Health",
    "Philosophy Arts and Culture",
    "Project and Practical Management",
    "Psychology Sociology and Education",
    "Others",
)

FALLBACK_TOPIC = "Others"

ANNOTATION_PROMPT_TEMPLATE = (
    "I am categorizing a series of articles according to the following 11 topics. "
    "Next, I will give you an article, please select only one topic that the article "
    "is the most related to:\n"
    "\n"
    "[Topics]: {topics}\n"
    "\n"
    "[Article]: {article}\n"
    "\n"
    "Please only return the most related topic:"
)

DEFAULT_ARTICLE_CHAR_CAP = 6000


@dataclass(frozen=True)
class TopicTaxonomy:
    """Ordered per-language label lists; 'Others' is always present and last."""

    labels: dict[Language, tuple[str, ...]]

    def __post_init__(self):
        for language, labels in self.labels.items():
            if len(set(labels)) != len(labels):
                raise DataError(f"{language.value} taxonomy has duplicate labels")
            if FALLBACK_TOPIC not in labels:
                raise DataError(f"{language.value} taxonomy must contain {FALLBACK_TOPIC!r}")
            if labels[-1] != FALLBACK_TOPIC:
                raise DataError(f"{language.value} taxonomy must end with {FALLBACK_TOPIC!r}")

    def for_language(self, language: Language) -> tuple[str, ...]:
        try:
            return self.labels[language]
        except KeyError:
            raise DataError(f"taxonomy has no labels for language {language.value}")

    def index(self, language: Language, label: str) -> int:
        return self.for_language(language).index(label)

    @classmethod
    def default(cls) -> "TopicTaxonomy":
        return cls(labels={Language.EN: EN_TOPICS, Language.ZH: ZH_TOPICS})

    @classmethod
    def from_json_file(cls, path: str) -> "TopicTaxonomy":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(labels={Language.parse(k): tuple(v) for k, v in raw.items()})


@dataclass(frozen=True)
class TopicLabel:
    language: Language
    label: str
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence must be in [0,1], got {self.confidence}")


def render_topic_prompt(
    taxonomy: TopicTaxonomy,
    language: Language,
    article: str,
    char_cap: int = DEFAULT_ARTICLE_CHAR_CAP,
) -> str:
    """Fill the annotation template with the language's 11 labels and the article.

    The article is truncated to ``char_cap`` characters; rendering is pure.
    """
    if not article:
        raise DataError("article must be non-empty")
    labels = taxonomy.for_language(language)
    return ANNOTATION_PROMPT_TEMPLATE.format(
        topics=", ".join(labels), article=article[:char_cap]
    )


def _normalize_label(text: str) -> str:
    return text.strip().strip(".!:;,，。").strip().lower()


def match_response_to_label(
    response: str, taxonomy: TopicTaxonomy, language: Language
) -> str | None:
    """Exact match first, then normalized (trim/lowercase/strip punctuation)."""
    labels = taxonomy.for_language(language)
    stripped = response.strip()
    if stripped in labels:
        return stripped
    normalized = _normalize_label(response)
    for label in labels:
        if _normalize_label(label) == normalized:
            return label
    return None


@dataclass
class AnnotationResult:
    doc_id: str
    label: str | None
    confidence: float
    warning: str | None = None


def annotate_batch(
    docs: Sequence[Document],
    llm: Callable[[str], str],
    taxonomy: TopicTaxonomy,
    out_path: str | None = None,
    concurrency: int = 4,
    char_cap: int = DEFAULT_ARTICLE_CHAR_CAP,
) -> list[AnnotationResult]:
    """Label documents through a chat-completion callable.

    Responses that match no taxonomy label fall back to 'Others' with a
    warning; transport failures (raised by ``llm`` after its own retries)
    leave the document unlabeled. Results are keyed and ordered by document
    id regardless of request concurrency.
    """
    ordered = sorted(docs, key=lambda d: d.id)

    def annotate_one(doc: Document) -> AnnotationResult:
        prompt = render_topic_prompt(taxonomy, doc.language, doc.text, char_cap=char_cap)
        try:
            response = llm(prompt)
        except Exception as exc:
            logger.warning("annotation failed for %s: %s", doc.id, exc)
            return AnnotationResult(doc.id, None, 0.0, warning=f"transport failure: {exc}")
        label = match_response_to_label(response, taxonomy, doc.language)
        if label is None:
            logger.warning("unmatched annotation response for %s: %r", doc.id, response[:80])
            return AnnotationResult(
                doc.id, FALLBACK_TOPIC, 1.0, warning=f"unmatched response: {response[:200]}"
            )
        return AnnotationResult(doc.id, label, 1.0)

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        results = list(pool.map(annotate_one, ordered))

    if out_path:
        by_id = {doc.id: doc for doc in ordered}
        with open(out_path, "w", encoding="utf-8") as fh:
            for res in results:
                if res.label is None:
                    continue
                doc = by_id[res.doc_id]
                fh.write(json.dumps(
                    {
                        "id": doc.id,
                        "text": doc.text,
                        "language": doc.language.value,
                        "topic": res.label,
                        "confidence": res.confidence,
                    },
                    ensure_ascii=False,
                ) + "\n")
    return results


# --- classifiers ----------------------------------------------------------

class LexiconClassifier:
    """Keyword-weight classifier: score(topic) = sum weight(kw) * tf(kw, text).

    Argmax wins, ties break in taxonomy order, zero max score falls back to
    'Others'. ASCII keywords match on word boundaries; anything else (e.g.
    Chinese) matches as a substring.
    """

    def __init__(self, weights: dict[Language, dict[str, dict[str, float]]],
                 taxonomy: TopicTaxonomy | None = None):
        self.taxonomy = taxonomy or TopicTaxonomy.default()
        self.weights = weights
        self._patterns: dict[tuple[Language, str], re.Pattern | None] = {}
        for language, topics in weights.items():
            labels = self.taxonomy.for_language(language)
            for topic in topics:
                if topic not in labels:
                    raise DataError(
                        f"keyword file topic {topic!r} is not in the {language.value} taxonomy"
                    )

    @classmethod
    def from_json_file(cls, path: str, taxonomy: TopicTaxonomy | None = None) -> "LexiconClassifier":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise DataError(f"unreadable keyword file {path}: {exc}") from exc
        weights = {
            Language.parse(lang): {
                topic: {kw: float(w) for kw, w in kws.items()}
                for topic, kws in topics.items()
            }
            for lang, topics in raw.items()
        }
        return cls(weights, taxonomy)

    def _term_frequency(self, language: Language, keyword: str, text: str) -> int:
        key = (language, keyword)
        pattern = self._patterns.get(key, False)
        if pattern is False:
            if re.fullmatch(r"[0-9A-Za-z_']+", keyword):
                pattern = re.compile(r"\b" + re.escape(keyword.lower()) + r"\b")
            else:
                pattern = None
            self._patterns[key] = pattern
        if pattern is None:
            return text.count(keyword)
        return len(pattern.findall(text))

    def __call__(self, doc: Document) -> TopicLabel:
        labels = self.taxonomy.for_language(doc.language)
        topics = self.weights.get(doc.language, {})
        text = doc.text.lower()
        scores: dict[str, float] = {}
        for topic, keywords in topics.items():
            score = 0.0
            for keyword, weight in keywords.items():
                tf = self._term_frequency(doc.language, keyword, text)
                if tf:
                    score += weight * tf
            scores[topic] = score
        best_label = FALLBACK_TOPIC
        best_score = 0.0
        for label in labels:  # taxonomy order breaks ties
            score = scores.get(label, 0.0)
            if score > best_score:
                best_label = label
                best_score = score
        if best_score == 0.0:
            return TopicLabel(doc.language, FALLBACK_TOPIC, 0.0)
        total = sum(s for s in scores.values() if s > 0)
        return TopicLabel(doc.language, best_label, best_score / total)


class RemoteClassifier:
    """Client for an external classifier service.

    Wire shape: POST {"texts": [...], "language": "en"|"zh"} ->
    {"labels": [...], "confidences": [...]}. Errors propagate to the caller.
    """

    def __init__(self, post: Callable[[dict], dict], taxonomy: TopicTaxonomy | None = None):
        self.post = post
        self.taxonomy = taxonomy or TopicTaxonomy.default()

    def __call__(self, doc: Document) -> TopicLabel:
        body = {"texts": [doc.text], "language": doc.language.value}
        response = self.post(body)
        labels = response.get("labels")
        confidences = response.get("confidences")
        if not labels or confidences is None or len(labels) != 1 or len(confidences) != 1:
            raise DataError(f"classifier response malformed: {response}")
        label = labels[0]
        if label not in self.taxonomy.for_language(doc.language):
            raise DataError(
                f"classifier returned {label!r}, not in the {doc.language.value} taxonomy"
            )
        return TopicLabel(doc.language, label, float(confidences[0]))


def classify(doc: Document, classifier: Callable[[Document], TopicLabel]) -> TopicLabel:
    """Route a document through a classifier handle; label stays in-taxonomy."""
    return classifier(doc)
