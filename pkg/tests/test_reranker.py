from __future__ import annotations

import pytest

from escomatch.candidates import Candidate, CandidateSet
from escomatch.providers import FixtureChatProvider
from escomatch.reranker import (
    NoCodeBlock,
    NoLiteralList,
    NoRankFunction,
    RerankParseFailure,
    build_rerank_prompt,
    parse_code_response,
    parse_natural_response,
    rerank,
)

from conftest import make_taxonomy


@pytest.fixture
def taxonomy():
    return make_taxonomy(12)


@pytest.fixture
def candidate_set(taxonomy):
    return CandidateSet(
        "span text",
        tuple(
            Candidate(skill.id, "label_sim", 0.9 - i * 0.01)
            for i, skill in enumerate(taxonomy.skills)
        ),
    )


def label(taxonomy, i: int) -> str:
    return taxonomy.skills[i].preferred_label


def sid(taxonomy, i: int) -> str:
    return taxonomy.skills[i].id


class TestBuildPrompt:
    def test_four_messages_in_role_order(self, taxonomy, candidate_set):
        request = build_rerank_prompt("the span", candidate_set, "natural", taxonomy)
        assert [m.role for m in request.messages] == ["system", "user", "assistant", "user"]

    def test_natural_contains_no_label_rule(self, taxonomy, candidate_set):
        request = build_rerank_prompt("the span", candidate_set, "natural", taxonomy)
        assert "You must either use one from the list or NO_LABEL" in request.messages[1].content

    def test_code_contains_function_name_clause(self, taxonomy, candidate_set):
        request = build_rerank_prompt("the span", candidate_set, "code", taxonomy)
        assert "The function must be named `rank_skills`" in request.messages[3].content

    def test_all_labels_one_per_line_in_merged_order(self, taxonomy, candidate_set):
        request = build_rerank_prompt("the span", candidate_set, "natural", taxonomy)
        query = request.messages[3].content
        block = query.split("Potential skills:\n", 1)[1].split("\n\nExtract:", 1)[0]
        assert block.splitlines() == [
            taxonomy.by_id[c.skill_id].preferred_label for c in candidate_set.candidates
        ]

    def test_extract_substituted_verbatim(self, taxonomy, candidate_set):
        request = build_rerank_prompt("needs  «odd»  spacing", candidate_set, "natural", taxonomy)
        assert "Extract: needs  «odd»  spacing" in request.messages[3].content

    def test_empty_candidate_set_rejected(self, taxonomy):
        with pytest.raises(ValueError):
            build_rerank_prompt("span", CandidateSet("span", ()), "natural", taxonomy)

    def test_rendering_is_deterministic(self, taxonomy, candidate_set):
        a = build_rerank_prompt("span", candidate_set, "code", taxonomy)
        b = build_rerank_prompt("span", candidate_set, "code", taxonomy)
        assert a == b


class TestParseNatural:
    def test_no_label_truncates(self, taxonomy, candidate_set):
        text = f"1. {label(taxonomy, 0)}\n2. NO_LABEL\n3. {label(taxonomy, 1)}"
        prediction = parse_natural_response(text, candidate_set, taxonomy)
        assert prediction.ranked == (sid(taxonomy, 0),)
        assert prediction.terminated_by_no_label

    def test_hallucinated_label_dropped_and_counted(self, taxonomy, candidate_set):
        text = f"1. {label(taxonomy, 0)}\n2. underwater basket weaving\n3. {label(taxonomy, 1)}"
        prediction = parse_natural_response(text, candidate_set, taxonomy)
        assert prediction.ranked == (sid(taxonomy, 0), sid(taxonomy, 1))
        assert prediction.hallucinated_count == 1

    def test_cap_at_ten(self, taxonomy, candidate_set):
        text = "\n".join(f"{i + 1}. {label(taxonomy, i)}" for i in range(12))
        prediction = parse_natural_response(text, candidate_set, taxonomy)
        assert len(prediction.ranked) == 10

    def test_case_insensitive_and_commentary_stripped(self, taxonomy, candidate_set):
        text = (
            f"1. {label(taxonomy, 0).upper()}\n"
            f"2. **{label(taxonomy, 1)}** - clearly mentioned in the extract\n"
        )
        prediction = parse_natural_response(text, candidate_set, taxonomy)
        assert prediction.ranked == (sid(taxonomy, 0), sid(taxonomy, 1))

    def test_duplicates_after_first_dropped(self, taxonomy, candidate_set):
        text = f"1. {label(taxonomy, 0)}\n2. {label(taxonomy, 0)}\n3. {label(taxonomy, 1)}"
        prediction = parse_natural_response(text, candidate_set, taxonomy)
        assert prediction.ranked == (sid(taxonomy, 0), sid(taxonomy, 1))

    def test_preamble_before_list_ok(self, taxonomy, candidate_set):
        text = f"Here is my ranking:\n\n1. {label(taxonomy, 2)}\n\nHope that helps."
        prediction = parse_natural_response(text, candidate_set, taxonomy)
        assert prediction.ranked == (sid(taxonomy, 2),)

    def test_no_list_is_parse_failure(self, taxonomy, candidate_set):
        with pytest.raises(RerankParseFailure):
            parse_natural_response("I cannot rank these skills.", candidate_set, taxonomy)


def code_block(body: str) -> str:
    return f"Sure, here is the function:\n\n```python\n{body}\n```\nDone."


class TestParseCode:
    def test_direct_return_list(self, taxonomy, candidate_set):
        text = code_block(
            f'def rank_skills():\n    return ["{label(taxonomy, 0)}", "{label(taxonomy, 1)}"]'
        )
        prediction = parse_code_response(text, candidate_set, taxonomy)
        assert prediction.ranked == (sid(taxonomy, 0), sid(taxonomy, 1))

    def test_single_assignment_resolved(self, taxonomy, candidate_set):
        text = code_block(
            "def rank_skills():\n"
            f'    ranked = ["{label(taxonomy, 2)}", "{label(taxonomy, 3)}"]\n'
            "    return ranked"
        )
        prediction = parse_code_response(text, candidate_set, taxonomy)
        assert prediction.ranked == (sid(taxonomy, 2), sid(taxonomy, 3))

    def test_no_fenced_block(self, taxonomy, candidate_set):
        with pytest.raises(NoCodeBlock):
            parse_code_response("def rank_skills(): return []", candidate_set, taxonomy)

    def test_no_rank_skills_function(self, taxonomy, candidate_set):
        with pytest.raises(NoRankFunction):
            parse_code_response(code_block("def other():\n    return []"), candidate_set, taxonomy)

    def test_non_literal_return(self, taxonomy, candidate_set):
        text = code_block("def rank_skills():\n    return sorted(skills)")
        with pytest.raises(NoLiteralList):
            parse_code_response(text, candidate_set, taxonomy)

    def test_no_label_inside_list(self, taxonomy, candidate_set):
        text = code_block('def rank_skills():\n    return ["NO_LABEL"]')
        prediction = parse_code_response(text, candidate_set, taxonomy)
        assert prediction.ranked == ()
        assert prediction.terminated_by_no_label


class TestCodeParserSafety:
    """Model code must never be executed, whatever it contains."""

    def fixtures(self, taxonomy, tripwire_path):
        good = [label(taxonomy, 0), label(taxonomy, 1)]
        literals = ", ".join(f'"{g}"' for g in good)
        return [
            # side-effecting statements before the return
            code_block(
                "import os\n"
                f'os.remove("{tripwire_path}")\n'
                f"def rank_skills():\n    return [{literals}]"
            ),
            code_block(
                "def rank_skills():\n"
                f'    open("{tripwire_path}", "w").write("pwned")\n'
                f"    return [{literals}]"
            ),
            code_block(
                "import subprocess\n"
                "def rank_skills():\n"
                f'    subprocess.run(["rm", "-rf", "{tripwire_path}"])\n'
                f"    return [{literals}]"
            ),
            code_block(
                "def rank_skills():\n"
                f'    __import__("shutil").rmtree("{tripwire_path}")\n'
                f"    return [{literals}]"
            ),
            code_block(
                f'exec("open(\'{tripwire_path}\', \'w\')")\n'
                f"def rank_skills():\n    return [{literals}]"
            ),
        ]

    def test_boobytrapped_fixtures_extract_without_side_effects(
        self, taxonomy, candidate_set, tmp_path
    ):
        tripwire = tmp_path / "tripwire.txt"
        expected = (sid(taxonomy, 0), sid(taxonomy, 1))
        for text in self.fixtures(taxonomy, tripwire):
            tripwire.write_text("intact")
            prediction = parse_code_response(text, candidate_set, taxonomy)
            assert prediction.ranked == expected
            assert tripwire.read_text() == "intact"  # no side effects observed


class TestRerank:
    def _echo_provider(self, taxonomy, n=10):
        def responder(request):
            from escomatch.providers import extract_candidate_labels

            labels = extract_candidate_labels(request.messages[-1].content)
            return "\n".join(f"{i + 1}. {l}" for i, l in enumerate(labels[:n]))

        return FixtureChatProvider(responder=responder)

    def test_mock_echo_ranks_first_ten(self, taxonomy, candidate_set):
        prediction = rerank(
            "span", candidate_set, self._echo_provider(taxonomy), "natural", taxonomy
        )
        assert prediction.ranked == tuple(candidate_set.skill_ids()[:10])

    def test_no_label_only(self, taxonomy, candidate_set):
        provider = FixtureChatProvider(responder=lambda _: "1. NO_LABEL")
        prediction = rerank("span", candidate_set, provider, "natural", taxonomy)
        assert prediction.ranked == ()
        assert prediction.terminated_by_no_label

    def test_hallucination_among_ten(self, taxonomy, candidate_set):
        def responder(request):
            from escomatch.providers import extract_candidate_labels

            labels = extract_candidate_labels(request.messages[-1].content)[:10]
            labels[4] = "entirely invented skill"
            return "\n".join(f"{i + 1}. {l}" for i, l in enumerate(labels))

        prediction = rerank(
            "span", candidate_set, FixtureChatProvider(responder=responder), "natural", taxonomy
        )
        assert len(prediction.ranked) == 9
        assert prediction.hallucinated_count == 1

    def test_retry_then_parse_failed_flag(self, taxonomy, candidate_set):
        calls = []

        def responder(request):
            calls.append(len(request.messages))
            return "no list here at all"

        prediction = rerank(
            "span", candidate_set, FixtureChatProvider(responder=responder), "natural", taxonomy
        )
        assert prediction.parse_failed
        assert prediction.ranked == ()
        # second call carries the corrective message appended to the transcript
        assert calls == [4, 6]

    def test_retry_recovers(self, taxonomy, candidate_set):
        responses = iter(["garbage", f"1. {label(taxonomy, 0)}"])

        def responder(request):
            return next(responses)

        prediction = rerank(
            "span", candidate_set, FixtureChatProvider(responder=responder), "natural", taxonomy
        )
        assert prediction.ranked == (sid(taxonomy, 0),)
        assert not prediction.parse_failed
