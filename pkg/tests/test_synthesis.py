import json
import threading

import pytest

from cptforge.corpus import Language, Source, count_corpus, whitespace_counter
from cptforge.errors import DataError, QAParseError, RemoteError
from cptforge.synthesis import (
    CODE_DISCIPLINE,
    DEFAULT_QA_QUOTAS,
    SCIENTIFIC_DISCIPLINES,
    CodeSeed,
    DomainRegistry,
    GenerationSettings,
    QAPair,
    extract_snippet,
    filter_seed_corpus,
    frame_with_markers,
    parse_qa,
    qa_to_training_text,
    read_qa_store,
    render_sci_prompt,
    scaled_quotas,
    synth_code,
    synth_sci,
    write_qa_store,
)

from conftest import make_doc, mock_chat_content

# Recorded completion fixture: a real generated electrolyte double-layer QA.
ELECTROLYTE_CASE = """[Problem]
Given a system of oppositely charged layers, such as a double layer of ions in an electrolyte solution, explain why these layers do not combine (neutralize) with each other.

[Solution]
In a system of oppositely charged layers, such as a double layer of ions in an electrolyte solution, the layers do not combine (neutralize) due to the electrostatic repulsion between the ions. This repulsion arises from the Coulombic force, which is a fundamental force in nature that acts between charged particles.

To understand this, let's consider a simple example of a positively charged cation (e.g., Na+) and a negatively charged anion (e.g., Cl-). When these ions are brought close together, they experience an electrostatic force that pushes them apart. This force can be calculated using Coulomb's law, which states that the electrostatic force (F) between two point charges (q1 and q2) separated by a distance (r) is given by: F = k * (q1 * q2) / r^2, where k is the Coulomb constant (approximately 8.99 x 10^9 N m^2 C^-2).

In the case of an electrolyte solution, the ions are surrounded by a cloud of counter-ions (ions of opposite charge) that neutralize their charge locally. This cloud of counter-ions creates an electric double layer around each ion, which prevents the oppositely charged ions from coming too close to each other and neutralizing. The repulsion between these double layers is known as the electrostatic double layer repulsion.

The thickness of the double layer is typically on the order of a few angstroms, and the strength of the repulsion decreases rapidly as the distance between the layers increases. This repulsion is responsible for the stability of colloidal suspensions, the behavior of charged surfaces in contact with electrolyte solutions, and many other phenomena in surface chemistry and electrochemistry.

In summary, the electrostatic repulsion between oppositely charged layers in a system, such as the double layer of ions in an electrolyte solution, prevents the layers from combining (neutralizing) with each other due to the Coulombic force. This repulsion arises from the electric double layer around each ion, which is created by the counter-ions that neutralize the charge locally. The thickness of the double layer and the strength of the repulsion depend on factors such as the ionic strength of the solution, the surface charge density, and the dielectric constant of the medium."""


def mock_llm(request, tag):
    return mock_chat_content(request["messages"][-1]["content"], tag)


def seed_docs(n, min_len=250):
    return [make_doc(i, text=f"seed document {i} " + "content word " * (min_len // 13))
            for i in range(n)]


class TestPromptRendering:
    def test_discipline_appears_three_times_snippet_once(self):
        prompt = render_sci_prompt("chemistry", "SNIPPET-BODY")
        assert prompt.count("chemistry") == 3
        assert prompt.count("SNIPPET-BODY") == 1
        assert "around 250-350 words long" in prompt
        assert "[Problem] and [Solution]" in prompt
        assert "**completely self-contained**" in prompt

    def test_pure(self):
        assert render_sci_prompt("physics", "s") == render_sci_prompt("physics", "s")

    def test_snippet_with_marker_literal_is_not_escaped(self):
        prompt = render_sci_prompt("biology", "contains [Problem] literally")
        assert "contains [Problem] literally" in prompt

    def test_underscored_disciplines_render_with_spaces(self):
        prompt = render_sci_prompt("earth_science", "s")
        assert prompt.count("earth science") == 3
        assert "earth_science" not in prompt

    def test_code_is_not_a_scientific_discipline(self):
        with pytest.raises(DataError):
            render_sci_prompt("code", "s")


class TestExtractSnippet:
    def test_short_doc_returned_whole(self):
        doc = make_doc(1, text="y" * 500)
        assert extract_snippet(doc, max_chars=2000) == doc.text

    def test_cut_at_paragraph_boundary(self):
        text = "a" * 1800 + "\n\n" + "b" * 1198
        doc = make_doc(1, text=text)
        assert extract_snippet(doc, max_chars=2000) == "a" * 1800

    def test_hard_cut_without_boundary(self):
        doc = make_doc(1, text="c" * 3000)
        assert extract_snippet(doc, max_chars=2000) == "c" * 2000

    def test_early_boundary_ignored(self):
        text = "d" * 500 + "\n\n" + "e" * 2500
        doc = make_doc(1, text=text)
        # only boundary is before max_chars/2, so hard cut applies
        assert len(extract_snippet(doc, max_chars=2000)) == 2000

    def test_too_short_rejected(self):
        with pytest.raises(DataError):
            extract_snippet(make_doc(1, text="x" * 150), min_chars=200)


class TestParseQA:
    def test_simple_split(self):
        qa = parse_qa("[Problem]\nP\n[Solution]\nS", "physics", seed_doc_id="s1")
        assert qa.problem == "P"
        assert qa.solution == "S"
        assert qa.discipline == "physics"

    def test_missing_solution_marker_fails_with_raw_retained(self):
        with pytest.raises(QAParseError) as err:
            parse_qa("[Problem]\nonly a problem here", "physics")
        assert err.value.raw == "[Problem]\nonly a problem here"

    def test_missing_problem_marker_fails(self):
        with pytest.raises(QAParseError):
            parse_qa("[Solution]\nno problem", "physics")

    def test_electrolyte_case_splits_cleanly(self):
        qa = parse_qa(ELECTROLYTE_CASE, "physics", seed_doc_id="s")
        assert qa.problem.startswith("Given a system of oppositely charged layers")
        assert qa.problem.endswith("do not combine (neutralize) with each other.")
        assert qa.solution.startswith("In a system of oppositely charged layers")
        assert "Coulomb's law" in qa.solution
        assert qa.solution.endswith("dielectric constant of the medium.")
        assert "[Solution]" not in qa.problem

    def test_markdown_and_case_variants(self):
        for text in (
            "**[Problem]**\nP\n**[Solution]**\nS",
            "[problem]\nP\n[solution]\nS",
            "Problem:\nP\nSolution:\nS",
            "## Problem\nP\n## Solution\nS",
        ):
            qa = parse_qa(text, "biology", seed_doc_id="s")
            assert (qa.problem, qa.solution) == ("P", "S")

    def test_strict_rejects_out_of_range_solutions(self):
        text = "[Problem]\nP\n[Solution]\ntoo short"
        parse_qa(text, "physics", seed_doc_id="s")  # lenient: warning only
        with pytest.raises(QAParseError):
            parse_qa(text, "physics", seed_doc_id="s", strict=True)

    def test_word_count_in_range_passes_strict(self):
        solution = " ".join(["word"] * 300)
        qa = parse_qa(f"[Problem]\nP\n[Solution]\n{solution}", "physics",
                      seed_doc_id="s", strict=True)
        assert len(qa.solution.split()) == 300


class TestSeedFiltering:
    @pytest.fixture
    def registry(self):
        return DomainRegistry.from_json_file("src/cptforge/data/domains.json")

    def test_named_domains_route_to_disciplines(self, registry):
        docs = [
            make_doc(1, url="https://math.stackexchange.com/q/1"),
            make_doc(2, url="https://physicsforums.com/t/2"),
            make_doc(3, url="https://example.com/x"),
        ]
        sets = filter_seed_corpus(docs, registry,
                                  disciplines=["mathematics", "physics"])
        assert [d.id for d in sets["mathematics"]] == ["doc-00001"]
        assert [d.id for d in sets["physics"]] == ["doc-00002"]

    def test_subdomain_matches(self, registry):
        doc = make_doc(1, url="https://www.physicsforums.com/threads/x")
        sets = filter_seed_corpus([doc], registry, disciplines=["physics"])
        assert len(sets["physics"]) == 1

    def test_multi_discipline_membership(self):
        registry = DomainRegistry({"mathematics": ["shared.org"],
                                   "physics": ["shared.org"]})
        doc = make_doc(1, url="https://shared.org/a")
        sets = filter_seed_corpus([doc], registry)
        assert len(sets["mathematics"]) == 1
        assert len(sets["physics"]) == 1

    def test_unparsable_url_skipped(self, registry):
        docs = [make_doc(1, url="http://[bad"), make_doc(2)]
        sets = filter_seed_corpus(docs, registry, disciplines=["physics"])
        assert sets["physics"] == []

    def test_empty_domain_list_rejected_when_used(self, registry):
        with pytest.raises(DataError):
            filter_seed_corpus([], registry, disciplines=["general_education"])


class TestSynthSci:
    def test_zero_budget_empty_stream(self):
        pairs, report = synth_sci(seed_docs(3), "physics", mock_llm, budget=0, seed=1)
        assert pairs == []
        assert report.emitted == 0

    def test_budget_met_with_distinct_seed_provenance(self):
        pairs, report = synth_sci(seed_docs(10), "physics", mock_llm,
                                  budget=5, seed=1)
        assert len(pairs) == 5
        assert report.emitted == 5
        assert len({p.seed_doc_id for p in pairs}) == 5
        for pair in pairs:
            pair.validate_provenance()
            assert pair.discipline == "physics"

    def test_deterministic_across_runs(self):
        a, _ = synth_sci(seed_docs(8), "chemistry", mock_llm, budget=6, seed=42)
        b, _ = synth_sci(seed_docs(8), "chemistry", mock_llm, budget=6, seed=42)
        assert [p.to_json() for p in a] == [p.to_json() for p in b]

    def test_concurrency_does_not_change_output(self):
        base = None
        for workers in (1, 2, 8):
            settings = GenerationSettings(concurrency=workers)
            pairs, _ = synth_sci(seed_docs(9), "biology", mock_llm, budget=7,
                                 seed=3, settings=settings)
            snapshot = [p.to_json() for p in pairs]
            if base is None:
                base = snapshot
            else:
                assert snapshot == base

    def test_parse_failures_consume_attempts_without_emitting(self):
        responses = iter(["garbage", "garbage",
                          "[Problem]\nP1\n[Solution]\nS1"])
        lock = threading.Lock()

        def flaky(request, tag):
            with lock:
                return next(responses)

        settings = GenerationSettings(concurrency=1)
        pairs, report = synth_sci(seed_docs(5), "physics", flaky, budget=1,
                                  seed=1, settings=settings)
        assert len(pairs) == 1
        assert report.parse_failures == 2
        assert report.attempts == 3

    def test_duplicate_problems_deduplicated(self):
        def constant(request, tag):
            return "[Problem]\nsame problem\n[Solution]\nsame solution"

        pairs, report = synth_sci(seed_docs(6), "physics", constant, budget=3,
                                  seed=1, settings=GenerationSettings(concurrency=2))
        assert len(pairs) == 1
        assert report.duplicates > 0

    def test_no_usable_seeds_rejected(self):
        short = [make_doc(1, text="tiny")]
        with pytest.raises(DataError):
            synth_sci(short, "physics", mock_llm, budget=1, seed=1)


class TestSynthCode:
    def _seeds(self, n=6):
        return [CodeSeed(id=f"lc-{i}", problem=f"Given an array, solve task {i}.",
                         solution=f"def solve_{i}(): pass") for i in range(n)]

    def test_single_seed_always_that_demo(self):
        seeds = self._seeds(1)
        pairs, _ = synth_code(seeds, mock_llm, budget=3, seed=9, k_demos=1)
        for pair in pairs:
            assert pair.demo_ids == ("lc-0",)
            pair.validate_provenance()

    def test_demo_sequences_deterministic(self):
        seeds = self._seeds()
        a, _ = synth_code(seeds, mock_llm, budget=10, seed=5, k_demos=3)
        b, _ = synth_code(seeds, mock_llm, budget=10, seed=5, k_demos=3)
        assert [p.demo_ids for p in a] == [p.demo_ids for p in b]
        assert [p.to_json() for p in a] == [p.to_json() for p in b]

    def test_second_call_failure_drops_pair(self):
        calls = {"n": 0}
        lock = threading.Lock()

        def llm(request, tag):
            with lock:
                calls["n"] += 1
            if tag.endswith(":solution") and "8" in tag:
                raise RemoteError("solution endpoint down")
            return mock_chat_content(request["messages"][-1]["content"])

        pairs, report = synth_code(self._seeds(), llm, budget=12, seed=2,
                                   settings=GenerationSettings(concurrency=1))
        assert report.dropped_second_call >= 1
        for pair in pairs:
            assert pair.solution

    def test_k_demos_exceeding_seeds_rejected(self):
        with pytest.raises(DataError):
            synth_code(self._seeds(2), mock_llm, budget=1, seed=0, k_demos=3)

    def test_code_seed_jsonl_loader(self, tmp_path):
        path = tmp_path / "seeds.jsonl"
        path.write_text(json.dumps({"id": "x", "problem": "p", "solution": "s"})
                        + "\n" + json.dumps({"problem": "q"}) + "\n")
        seeds = CodeSeed.load_jsonl(str(path))
        assert seeds[0] == CodeSeed(id="x", problem="p", solution="s")
        assert seeds[1].id == "1"


class TestTrainingText:
    def test_default_rendering(self):
        qa = QAPair(id="q1", discipline="physics", problem="P", solution="S",
                    seed_doc_id="s")
        doc = qa_to_training_text(qa)
        assert doc.text == "P\n\nS"
        assert doc.language is Language.EN
        assert doc.source is Source.SYNTHETIC
        assert doc.id == "syn-q1"

    def test_custom_separator(self):
        qa = QAPair(id="q1", discipline="physics", problem="P", solution="S",
                    seed_doc_id="s")
        assert qa_to_training_text(qa, separator=" | ").text == "P | S"

    def test_marker_framed_round_trip(self):
        qa = QAPair(id="q2", discipline="chemistry",
                    problem="What is 2+2 when doubled?",
                    solution="First 2+2=4, doubled gives 8.", seed_doc_id="s")
        doc = qa_to_training_text(qa, framed=True)
        recovered = parse_qa(doc.text, qa.discipline, seed_doc_id=qa.seed_doc_id)
        assert recovered.problem == qa.problem
        assert recovered.solution == qa.solution

    def test_frame_equals_manual_concatenation(self):
        assert frame_with_markers("P", "S") == "[Problem]\nP\n[Solution]\nS"

    def test_batch_of_100_pairs_counted_by_corpus_module(self):
        pairs, _ = synth_sci(seed_docs(30), "mathematics", mock_llm,
                             budget=100, seed=7,
                             settings=GenerationSettings(concurrency=4))
        assert len(pairs) == 100
        docs = count_corpus([qa_to_training_text(p) for p in pairs],
                            whitespace_counter)
        assert len(docs) == 100
        for doc, pair in zip(docs, pairs):
            assert doc.token_count == len(f"{pair.problem}\n\n{pair.solution}".split())


class TestQuotas:
    def test_reference_totals(self):
        sci_total = sum(DEFAULT_QA_QUOTAS[d] for d in SCIENTIFIC_DISCIPLINES)
        assert sci_total == 1_593_144
        assert DEFAULT_QA_QUOTAS[CODE_DISCIPLINE] == 1_385_696
        assert DEFAULT_QA_QUOTAS["mathematics"] == 207_448
        assert DEFAULT_QA_QUOTAS["physics"] == 241_516

    def test_scaled_by_thousandth(self):
        scaled = scaled_quotas(factor=1e-3)
        assert scaled["mathematics"] == 207
        assert scaled["physics"] == 242
        assert scaled["code"] == 1386
        sci = sum(scaled[d] for d in SCIENTIFIC_DISCIPLINES)
        assert sci == 1_593
        assert sci + scaled["code"] == 2_979


class TestQAStore:
    def test_round_trip(self, tmp_path):
        pairs, _ = synth_sci(seed_docs(4), "astronomy", mock_llm, budget=3, seed=1)
        path = tmp_path / "qa.jsonl"
        write_qa_store(pairs, str(path))
        loaded = read_qa_store(str(path))
        assert loaded == pairs
