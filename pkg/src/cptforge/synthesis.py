"""Scientific and code QA synthesis orchestration.

Scientific pairs are grounded in seed web snippets selected by discipline
domain lists; code pairs are grown from demonstration problems via two chat
calls (new problem, then its solution). Generation is seeded and committed in
attempt order, so a deterministic endpoint makes whole runs byte-reproducible
regardless of request concurrency.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence
from urllib.parse import urlsplit

from .corpus import Document, Language, Source
from .errors import DataError, QAParseError, RemoteError
from .seeding import derive_rng

logger = logging.getLogger(__name__)

SCIENTIFIC_DISCIPLINES = (
    "mathematics",
    "physics",
    "chemistry",
    "biology",
    "astronomy",
    "earth_science",
    "medical_science",
    "computer_science",
    "general_education",
)
CODE_DISCIPLINE = "code"
ALL_DISCIPLINES = SCIENTIFIC_DISCIPLINES + (CODE_DISCIPLINE,)

# Default per-discipline pair quotas for a full-scale run.
DEFAULT_QA_QUOTAS = {
    "mathematics": 207_448,
    "physics": 241_516,
    "chemistry": 30_838,
    "biology": 25_103,
    "astronomy": 24_060,
    "earth_science": 7_936,
    "medical_science": 8_199,
    "computer_science": 475_566,
    "general_education": 572_478,
    "code": 1_385_696,
}

DEFAULT_SNIPPET_MAX_CHARS = 2000
DEFAULT_SNIPPET_MIN_CHARS = 200
SOLUTION_WORD_RANGE = (250, 350)
DEFAULT_TEMPERATURE = 0.7
DEFAULT_MAX_TOKENS = 1024
DEFAULT_CONCURRENCY = 4
DEFAULT_ATTEMPT_FACTOR = 4

SCI_PROMPT_TEMPLATE = (
    "Instruction\n"
    "\n"
    "Please gain inspiration from the following {discipline} content to create a "
    "high-quality {discipline} problem and solution. Present your output in two "
    "distinct sections: [Problem] and [Solution].\n"
    "\n"
    "{discipline} Content\n"
    "\n"
    "{snippet}\n"
    "\n"
    "Guidelines\n"
    "\n"
    "[Problem]: This should be **completely self-contained**, providing all the "
    "contextual information one needs to understand and solve the problem.\n"
    "\n"
    "[Solution]: Present a comprehensive, step-by-step solution that solves the "
    "problem **correctly** and educates the student, around 250-350 words long. "
    "Clearly articulate the reasoning and methods used at each step, providing "
    "insight into the problem-solving process. Take care to format any equations "
    "properly using LaTeX or appropriate notation."
)

# The code-path templates are project defaults (configurable), not drawn from
# any published prompt.
CODE_PROBLEM_PROMPT_TEMPLATE = (
    "You are writing a brand-new coding problem.\n"
    "\n"
    "Here are example problems for inspiration:\n"
    "\n"
    "{demos}\n"
    "Write one new, completely self-contained coding problem of similar style and "
    "difficulty. Do not copy any example. Return only the problem statement."
)

CODE_SOLUTION_PROMPT_TEMPLATE = (
    "Solve the following coding problem. Explain the approach briefly, then give "
    "a complete, correct implementation.\n"
    "\n"
    "{problem}"
)


def discipline_display(name: str) -> str:
    return name.replace("_", " ")


@dataclass(frozen=True)
class QAPair:
    id: str
    discipline: str
    problem: str
    solution: str
    seed_doc_id: str | None = None
    demo_ids: tuple[str, ...] | None = None
    model_id: str = ""
    created_at: str = ""

    def __post_init__(self):
        if not self.problem or not self.solution:
            raise DataError("QA pair requires non-empty problem and solution")
        if self.discipline not in ALL_DISCIPLINES:
            raise DataError(f"unknown discipline {self.discipline!r}")

    def validate_provenance(self):
        has_seed = self.seed_doc_id is not None
        has_demos = bool(self.demo_ids)
        if has_seed == has_demos:
            raise DataError(
                f"pair {self.id}: exactly one of seed_doc_id / demo_ids must be set"
            )

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "discipline": self.discipline,
            "problem": self.problem,
            "solution": self.solution,
            "seed_doc_id": self.seed_doc_id,
            "demo_ids": list(self.demo_ids) if self.demo_ids else None,
            "model_id": self.model_id,
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "QAPair":
        demo_ids = obj.get("demo_ids")
        return cls(
            id=obj["id"],
            discipline=obj["discipline"],
            problem=obj["problem"],
            solution=obj["solution"],
            seed_doc_id=obj.get("seed_doc_id"),
            demo_ids=tuple(demo_ids) if demo_ids else None,
            model_id=obj.get("model_id", ""),
            created_at=obj.get("created_at", ""),
        )


def _pair_id(discipline: str, problem: str, solution: str, provenance: str) -> str:
    digest = hashlib.sha256(
        "\x1f".join((discipline, problem, solution, provenance)).encode("utf-8")
    ).hexdigest()
    return f"qa-{digest[:16]}"


# --- seed corpus selection --------------------------------------------------

@dataclass(frozen=True)
class Discipline:
    name: str
    domains: tuple[str, ...]

    def __post_init__(self):
        if self.name not in ALL_DISCIPLINES:
            raise DataError(f"unknown discipline {self.name!r}")


class DomainRegistry:
    """Per-discipline registrable-domain lists for seed filtering."""

    def __init__(self, domains: dict[str, Sequence[str]]):
        unknown = set(domains) - set(ALL_DISCIPLINES)
        if unknown:
            raise DataError(f"unknown disciplines in domain lists: {sorted(unknown)}")
        self.domains = {name: tuple(d.lower() for d in entries)
                        for name, entries in domains.items()}

    @classmethod
    def from_json_file(cls, path: str) -> "DomainRegistry":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def disciplines(self) -> list[Discipline]:
        return [Discipline(name, entries) for name, entries in sorted(self.domains.items())]


def _host_matches(host: str, domain: str) -> bool:
    return host == domain or host.endswith("." + domain)


def filter_seed_corpus(
    corpus: Sequence[Document], registry: DomainRegistry,
    disciplines: Sequence[str] | None = None,
) -> dict[str, list[Document]]:
    """Assign documents to disciplines by the registrable domain of their url.

    A document joins every discipline whose list contains its domain;
    unmatched documents are excluded, unparsable urls skipped with a warning.
    """
    wanted = list(disciplines) if disciplines else sorted(registry.domains)
    for name in wanted:
        if not registry.domains.get(name):
            raise DataError(f"discipline {name!r} has an empty domain list")
    out: dict[str, list[Document]] = {name: [] for name in wanted}
    for doc in corpus:
        if not doc.url:
            continue
        try:
            host = (urlsplit(doc.url).hostname or "").lower()
        except ValueError:
            logger.warning("unparsable url on %s: %r", doc.id, doc.url)
            continue
        if not host:
            logger.warning("unparsable url on %s: %r", doc.id, doc.url)
            continue
        for name in wanted:
            if any(_host_matches(host, d) for d in registry.domains[name]):
                out[name].append(doc)
    return out


def extract_snippet(
    doc: Document,
    max_chars: int = DEFAULT_SNIPPET_MAX_CHARS,
    min_chars: int = DEFAULT_SNIPPET_MIN_CHARS,
) -> str:
    """Longest prefix <= max_chars, preferring a paragraph boundary past
    max_chars/2; documents shorter than min_chars are rejected."""
    text = doc.text
    if len(text) < min_chars:
        raise DataError(f"document {doc.id} is shorter than {min_chars} chars")
    if len(text) <= max_chars:
        return text
    half = max_chars // 2
    boundary = text.rfind("\n\n", half, max_chars + 1)
    if boundary > half:
        return text[:boundary]
    return text[:max_chars]


def render_sci_prompt(discipline: str, snippet: str) -> str:
    """Fill the QA-synthesis template; the discipline name appears three times."""
    if not snippet:
        raise DataError("snippet must be non-empty")
    if discipline not in SCIENTIFIC_DISCIPLINES:
        raise DataError(f"not a scientific discipline: {discipline!r}")
    return SCI_PROMPT_TEMPLATE.format(
        discipline=discipline_display(discipline), snippet=snippet
    )


# --- completion parsing ------------------------------------------------------

def _marker_spans(name: str, text: str) -> list[tuple[int, int]]:
    line_form = re.compile(
        rf"(?im)^[ \t]*[#>*_~`]*[ \t]*\[?[ \t]*{name}[ \t]*\]?[ \t]*[*_~`]*[ \t]*:?[ \t]*$"
    )
    inline_form = re.compile(rf"(?i)(?:\*\*|__)?\[[ \t]*{name}[ \t]*\](?:\*\*|__)?:?")
    spans = [(m.start(), m.end()) for m in line_form.finditer(text)]
    spans += [(m.start(), m.end()) for m in inline_form.finditer(text)]
    spans.sort(key=lambda s: (s[0], -s[1]))
    return spans


def _first_marker(name: str, text: str, after: int = 0) -> tuple[int, int] | None:
    for start, end in _marker_spans(name, text):
        if start >= after:
            return start, end
    return None


def solution_word_count_ok(solution: str) -> bool:
    lo, hi = SOLUTION_WORD_RANGE
    return lo <= len(solution.split()) <= hi


def parse_qa(
    completion: str,
    discipline: str,
    seed_doc_id: str | None = None,
    demo_ids: Sequence[str] | None = None,
    model_id: str = "",
    created_at: str = "",
    strict: bool = False,
) -> QAPair:
    """Split a completion at its first [Problem] and subsequent [Solution]
    markers (case-insensitive, brackets/markdown optional).

    A solution whose word count falls outside 250-350 logs a warning; strict
    mode rejects it. Missing markers raise QAParseError with the raw
    completion retained.
    """
    problem_marker = _first_marker("problem", completion)
    if problem_marker is None:
        raise QAParseError("no [Problem] marker found", raw=completion)
    solution_marker = _first_marker("solution", completion, after=problem_marker[1])
    if solution_marker is None:
        raise QAParseError("no [Solution] marker after [Problem]", raw=completion)
    problem = completion[problem_marker[1] : solution_marker[0]].strip()
    solution = completion[solution_marker[1] :].strip()
    if not problem or not solution:
        raise QAParseError("empty problem or solution section", raw=completion)
    if not solution_word_count_ok(solution):
        message = (
            f"solution word count {len(solution.split())} outside "
            f"{SOLUTION_WORD_RANGE[0]}-{SOLUTION_WORD_RANGE[1]}"
        )
        if strict:
            raise QAParseError(message, raw=completion)
        logger.debug("%s (%s)", message, discipline)
    provenance = seed_doc_id or ",".join(demo_ids or ())
    return QAPair(
        id=_pair_id(discipline, problem, solution, provenance),
        discipline=discipline,
        problem=problem,
        solution=solution,
        seed_doc_id=seed_doc_id,
        demo_ids=tuple(demo_ids) if demo_ids else None,
        model_id=model_id,
        created_at=created_at,
    )


def frame_with_markers(problem: str, solution: str) -> str:
    return f"[Problem]\n{problem}\n[Solution]\n{solution}"


def qa_to_training_text(qa: QAPair, separator: str = "\n\n", framed: bool = False) -> Document:
    """Render a pair as a Synthetic-source training document.

    The default rendering is problem + separator + solution; framed=True
    keeps the [Problem]/[Solution] markers so the text parses back into the
    pair.
    """
    text = frame_with_markers(qa.problem, qa.solution) if framed \
        else f"{qa.problem}{separator}{qa.solution}"
    return Document(
        id=f"syn-{qa.id}",
        text=text,
        language=Language.EN,
        source=Source.SYNTHETIC,
        topic=qa.discipline,
    )


# --- generation loops --------------------------------------------------------

ChatFn = Callable[[dict, str], str]  # (request body, orchestration tag) -> content


@dataclass(frozen=True)
class GenerationSettings:
    model_id: str = "mock"
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    created_at: str = ""
    # Wave width: how many attempts are planned and dispatched together.
    # Part of the generation plan, so recorded cassettes replay at any
    # worker count.
    concurrency: int = DEFAULT_CONCURRENCY
    # Thread cap only; never changes which requests are made.
    workers: int | None = None
    attempt_factor: int = DEFAULT_ATTEMPT_FACTOR

    @property
    def pool_size(self) -> int:
        cap = self.workers if self.workers is not None else self.concurrency
        return max(1, min(cap, self.concurrency))

    def request(self, prompt: str) -> dict:
        return {
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass
class SynthesisReport:
    discipline: str
    requested: int
    emitted: int = 0
    attempts: int = 0
    parse_failures: int = 0
    duplicates: int = 0
    dropped_second_call: int = 0
    length_warnings: int = 0

    def to_json(self) -> dict:
        return self.__dict__.copy()

    @property
    def failure_rate(self) -> float:
        return 0.0 if self.attempts == 0 else 1.0 - self.emitted / self.attempts


def _normalized_problem(problem: str) -> str:
    return " ".join(problem.lower().split())


class _SeedSampler:
    """Without replacement until the pool is exhausted, then with replacement."""

    def __init__(self, pool: Sequence[Document], rng):
        self.pool = sorted(pool, key=lambda d: d.id)
        self.rng = rng
        self.queue = list(self.pool)
        rng.shuffle(self.queue)
        self.cursor = 0

    def next(self) -> Document:
        if self.cursor < len(self.queue):
            doc = self.queue[self.cursor]
            self.cursor += 1
            return doc
        return self.rng.choice(self.pool)


def synth_sci(
    seeds: Sequence[Document],
    discipline: str,
    llm: ChatFn,
    budget: int,
    seed: int,
    settings: GenerationSettings | None = None,
    snippet_max_chars: int = DEFAULT_SNIPPET_MAX_CHARS,
    snippet_min_chars: int = DEFAULT_SNIPPET_MIN_CHARS,
) -> tuple[list[QAPair], SynthesisReport]:
    """Generate up to ``budget`` scientific pairs for one discipline.

    Seeds are drawn by seeded sampling; attempts are dispatched in bounded
    concurrent waves and committed in attempt order, with exact-match dedup
    on normalized problem text.
    """
    settings = settings or GenerationSettings()
    report = SynthesisReport(discipline=discipline, requested=budget)
    if budget <= 0:
        return [], report
    eligible = [d for d in seeds if len(d.text) >= snippet_min_chars]
    if not eligible:
        raise DataError(f"no usable seed documents for {discipline} "
                        f"(need >= {snippet_min_chars} chars)")
    sampler = _SeedSampler(eligible, derive_rng(seed, "synth-sci", discipline))
    pairs: list[QAPair] = []
    seen_problems: set[str] = set()
    max_attempts = max(8, settings.attempt_factor * budget)
    attempt = 0

    with ThreadPoolExecutor(max_workers=settings.pool_size) as pool:
        while len(pairs) < budget and attempt < max_attempts:
            wave = min(max(1, settings.concurrency), budget - len(pairs),
                       max_attempts - attempt)
            wave_seeds = [sampler.next() for _ in range(wave)]
            tags = [f"synth-sci:{discipline}:{attempt + i}" for i in range(wave)]
            attempt += wave

            def call(args):
                seed_doc, tag = args
                snippet = extract_snippet(seed_doc, snippet_max_chars, snippet_min_chars)
                prompt = render_sci_prompt(discipline, snippet)
                return llm(settings.request(prompt), tag)

            completions = list(pool.map(call, zip(wave_seeds, tags)))
            for seed_doc, completion in zip(wave_seeds, completions):
                report.attempts += 1
                try:
                    pair = parse_qa(
                        completion, discipline,
                        seed_doc_id=seed_doc.id,
                        model_id=settings.model_id,
                        created_at=settings.created_at,
                    )
                except QAParseError as exc:
                    report.parse_failures += 1
                    logger.warning("parse failure on seed %s: %s", seed_doc.id, exc)
                    continue
                key = _normalized_problem(pair.problem)
                if key in seen_problems:
                    report.duplicates += 1
                    continue
                if not solution_word_count_ok(pair.solution):
                    report.length_warnings += 1
                seen_problems.add(key)
                pairs.append(pair)
                if len(pairs) >= budget:
                    break

    report.emitted = len(pairs)
    if report.emitted < budget:
        logger.warning(
            "%s: emitted %d/%d pairs after %d attempts",
            discipline, report.emitted, budget, report.attempts,
        )
    return pairs, report


@dataclass(frozen=True)
class CodeSeed:
    id: str
    problem: str
    solution: str = ""

    @classmethod
    def load_jsonl(cls, path: str) -> list["CodeSeed"]:
        out = []
        with open(path, encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                if not line.strip():
                    continue
                obj = json.loads(line)
                out.append(cls(
                    id=str(obj.get("id", i)),
                    problem=obj["problem"],
                    solution=obj.get("solution", ""),
                ))
        if not out:
            raise DataError(f"no code seed problems in {path}")
        return out


def _render_demos(demos: Sequence[CodeSeed]) -> str:
    parts = []
    for i, demo in enumerate(demos, start=1):
        block = f"Example {i}:\n{demo.problem}\n"
        if demo.solution:
            block += f"Solution {i}:\n{demo.solution}\n"
        parts.append(block)
    return "\n".join(parts)


def synth_code(
    seed_problems: Sequence[CodeSeed],
    llm: ChatFn,
    budget: int,
    seed: int,
    k_demos: int = 3,
    settings: GenerationSettings | None = None,
) -> tuple[list[QAPair], SynthesisReport]:
    """Expand a code-problem set by in-context demonstration.

    Each attempt makes two calls: generate a new problem from k seeded-random
    demonstrations, then generate its solution. Pairs whose second call fails
    are dropped.
    """
    settings = settings or GenerationSettings()
    report = SynthesisReport(discipline=CODE_DISCIPLINE, requested=budget)
    if budget <= 0:
        return [], report
    if not seed_problems:
        raise DataError("seed_problems must be non-empty")
    if k_demos > len(seed_problems):
        raise DataError(f"k_demos={k_demos} exceeds seed problem count {len(seed_problems)}")
    rng = derive_rng(seed, "synth-code")
    ordered_seeds = sorted(seed_problems, key=lambda s: s.id)
    pairs: list[QAPair] = []
    seen_problems: set[str] = set()
    max_attempts = max(8, settings.attempt_factor * budget)
    attempt = 0

    def run_attempt(args) -> tuple[tuple[str, ...], str | None, str | None]:
        demos, tag = args
        problem_prompt = CODE_PROBLEM_PROMPT_TEMPLATE.format(demos=_render_demos(demos))
        problem = llm(settings.request(problem_prompt), f"{tag}:problem").strip()
        if not problem:
            return tuple(d.id for d in demos), None, None
        solution_prompt = CODE_SOLUTION_PROMPT_TEMPLATE.format(problem=problem)
        try:
            solution = llm(settings.request(solution_prompt), f"{tag}:solution").strip()
        except RemoteError as exc:
            logger.warning("solution call failed, dropping pair: %s", exc)
            return tuple(d.id for d in demos), problem, None
        return tuple(d.id for d in demos), problem, solution

    with ThreadPoolExecutor(max_workers=settings.pool_size) as pool:
        while len(pairs) < budget and attempt < max_attempts:
            wave = min(max(1, settings.concurrency), budget - len(pairs),
                       max_attempts - attempt)
            jobs = []
            for i in range(wave):
                demos = rng.sample(ordered_seeds, k_demos)
                jobs.append((demos, f"synth-code:{attempt + i}"))
            attempt += wave
            for demo_ids, problem, solution in pool.map(run_attempt, jobs):
                report.attempts += 1
                if problem is None:
                    report.parse_failures += 1
                    continue
                if solution is None or not solution:
                    report.dropped_second_call += 1
                    continue
                key = _normalized_problem(problem)
                if key in seen_problems:
                    report.duplicates += 1
                    continue
                seen_problems.add(key)
                pairs.append(QAPair(
                    id=_pair_id(CODE_DISCIPLINE, problem, solution, ",".join(demo_ids)),
                    discipline=CODE_DISCIPLINE,
                    problem=problem,
                    solution=solution,
                    demo_ids=demo_ids,
                    model_id=settings.model_id,
                    created_at=settings.created_at,
                ))
                if len(pairs) >= budget:
                    break

    report.emitted = len(pairs)
    if report.emitted < budget:
        logger.warning("code: emitted %d/%d pairs after %d attempts",
                       report.emitted, budget, report.attempts)
    return pairs, report


def scaled_quotas(quotas: dict[str, int] | None = None, factor: float = 1.0) -> dict[str, int]:
    """Scale per-discipline quotas, rounding to the nearest pair."""
    quotas = quotas or DEFAULT_QA_QUOTAS
    return {name: round(count * factor) for name, count in quotas.items()}


def write_qa_store(pairs: Sequence[QAPair], path: str):
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_json(), ensure_ascii=False) + "\n")


def read_qa_store(path: str) -> list[QAPair]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(QAPair.from_json(json.loads(line)))
    return out
