"""Eligibility filtering, normalization, and the synthetic-corpus oracle."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fixture_corpus
from radpipe.errors import ConfigError
from radpipe.ingest import RawReport, parse_report
from radpipe.preprocess import (
    ExclusionReason,
    ExclusionRecord,
    FilterPolicy,
    ReportPair,
    SubstitutionTable,
    filter_corpus,
    filter_report,
    normalize_text,
    read_pairs,
    word_count,
    write_pairs,
)


def _parsed(text: str, report_id: str = "r1"):
    return parse_report(RawReport(report_id, "src", text))


# --- word_count ---


@pytest.mark.parametrize(
    "text,count",
    [
        ("No acute cardiopulmonary process.", 4),
        ("  a\tb\nc  ", 3),
        ("", 0),
        ("   ", 0),
        ("one", 1),
        ("hyphen-stays one-token", 2),
    ],
)
def test_word_count(text, count):
    assert word_count(text) == count


# --- normalize_text ---


def test_normalize_collapses_spaces_and_tabs():
    assert normalize_text("a  b\t\tc \t d") == "a b c d"


def test_normalize_collapses_newline_runs_to_two():
    assert normalize_text("a\n\n\n\nb") == "a\n\nb"
    assert normalize_text("a\n\nb") == "a\n\nb"
    assert normalize_text("a\nb") == "a\nb"


def test_normalize_trims_outer_whitespace():
    assert normalize_text("  hello \n") == "hello"


def test_normalize_substitution_whole_token_case_insensitive():
    table = SubstitutionTable({"c/w": "consistent with"})
    assert normalize_text("opacity c/w edema", table) == "opacity consistent with edema"
    assert normalize_text("opacity C/W edema", table) == "opacity consistent with edema"
    # attached punctuation makes a different token; no replacement
    assert normalize_text("opacity c/w, edema", table) == "opacity c/w, edema"


def test_normalize_empty_table_is_identity_after_whitespace():
    assert normalize_text("a  b", SubstitutionTable()) == "a b"


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=200))
def test_normalize_idempotent(text):
    once = normalize_text(text)
    assert normalize_text(once) == once


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet="abc /\t\n.", max_size=80))
def test_normalize_idempotent_with_table(text):
    table = SubstitutionTable({"c/w": "consistent with", "w/o": "without"})
    once = normalize_text(text, table)
    assert normalize_text(once, table) == once


def test_substitution_table_rejects_multiword_keys():
    with pytest.raises(ConfigError, match="one non-empty token"):
        SubstitutionTable({"two words": "x"})
    with pytest.raises(ConfigError):
        SubstitutionTable({"": "x"})


def test_substitution_table_rejects_case_colliding_keys():
    with pytest.raises(ConfigError, match="case"):
        SubstitutionTable({"c/w": "a", "C/W": "b"})


# --- FilterPolicy ---


def test_policy_rejects_zero_minimums():
    with pytest.raises(ConfigError):
        FilterPolicy(min_findings_words=0)
    with pytest.raises(ConfigError):
        FilterPolicy(min_impression_words=0)


def test_policy_default_keeps_only_target_sections():
    policy = FilterPolicy()
    assert policy.keeps("findings") and policy.keeps("impression")
    assert not policy.keeps("comparison") and not policy.keeps("preamble")


def test_policy_explicit_removal_list():
    policy = FilterPolicy(sections_to_remove={"comparison"})
    assert policy.keeps("technique")
    assert not policy.keeps("comparison")


# --- filter_report ---

_F12 = fixture_corpus.F12  # 12 words
_F09 = fixture_corpus.F09  # 9 words


def test_filter_eligible_pair_is_normalized():
    verdict = filter_report(_parsed(f"FINDINGS:  {_F12}\nIMPRESSION: No  acute   disease."))
    assert isinstance(verdict, ReportPair)
    assert verdict.findings == _F12
    assert verdict.impression == "No acute disease."


def test_filter_missing_section_cases():
    for text in (f"FINDINGS: {_F12}", "IMPRESSION: No change.", "no headers at all"):
        verdict = filter_report(_parsed(text))
        assert verdict == ExclusionRecord("r1", ExclusionReason.MISSING_SECTION)


def test_filter_rule_order_missing_beats_short():
    # 9-word findings, no impression: MissingSection, not FindingsTooShort
    verdict = filter_report(_parsed(f"FINDINGS: {_F09}"))
    assert verdict.reason == ExclusionReason.MISSING_SECTION


def test_filter_rule_order_findings_beats_impression():
    verdict = filter_report(_parsed(f"FINDINGS: {_F09}\nIMPRESSION: Unremarkable."))
    assert verdict.reason == ExclusionReason.FINDINGS_TOO_SHORT


def test_filter_boundaries_are_strict_less_than():
    ten = "Heart size normal and lungs remain clear without acute abnormality."
    assert isinstance(filter_report(_parsed(f"FINDINGS: {ten}\nIMPRESSION: No change.")), ReportPair)
    nine = _F09
    assert (
        filter_report(_parsed(f"FINDINGS: {nine}\nIMPRESSION: No change.")).reason
        == ExclusionReason.FINDINGS_TOO_SHORT
    )
    assert (
        filter_report(_parsed(f"FINDINGS: {ten}\nIMPRESSION: Unremarkable.")).reason
        == ExclusionReason.IMPRESSION_TOO_SHORT
    )


def test_filter_custom_thresholds():
    policy = FilterPolicy(min_findings_words=2, min_impression_words=1)
    verdict = filter_report(_parsed("FINDINGS: two words\nIMPRESSION: one"), policy)
    assert isinstance(verdict, ReportPair)


def test_filter_removing_findings_by_policy_means_missing():
    policy = FilterPolicy(sections_to_remove={"findings"})
    verdict = filter_report(_parsed(f"FINDINGS: {_F12}\nIMPRESSION: No change."), policy)
    assert verdict.reason == ExclusionReason.MISSING_SECTION


def test_filter_counts_normalized_words():
    # substitution can push a findings over the threshold: 9 tokens become 10
    table = SubstitutionTable({"effusion.": "pleural effusion."})
    # "effusion." is one token in the raw text
    verdict = filter_report(
        _parsed(f"FINDINGS: {_F09}\nIMPRESSION: No change."), table=table
    )
    assert isinstance(verdict, ReportPair)
    assert verdict.findings.endswith("pleural effusion.")


# --- filter_corpus on the synthetic fixture (the hand-built oracle) ---


def _fixture_parsed():
    fixture_corpus.verify_integrity()
    return [
        parse_report(RawReport(r.report_id, fixture_corpus.SOURCE, r.text))
        for r in fixture_corpus.REPORTS
    ]


def test_fixture_partition_matches_oracle():
    outcome = filter_corpus(_fixture_parsed())
    expected = fixture_corpus.expected_by_id()
    got: dict[str, str] = {}
    for pair in outcome.pairs:
        got[pair.report_id] = "eligible"
    for record in outcome.exclusions:
        got[record.report_id] = record.reason.value
    assert got == expected


def test_fixture_summary_counts():
    outcome = filter_corpus(_fixture_parsed())
    counts = fixture_corpus.expected_counts()
    assert outcome.summary.total == 50
    assert outcome.summary.eligible == counts["eligible"]
    assert outcome.summary.as_dict()["excluded"] == {
        "MissingSection": counts["MissingSection"],
        "FindingsTooShort": counts["FindingsTooShort"],
        "ImpressionTooShort": counts["ImpressionTooShort"],
    }


def test_filter_corpus_partition_preserves_order_and_total():
    parsed = _fixture_parsed()
    outcome = filter_corpus(parsed)
    assert len(outcome.pairs) + len(outcome.exclusions) == len(parsed)
    pair_ids = [p.report_id for p in outcome.pairs]
    original_order = [r.report_id for r in parsed if r.report_id in set(pair_ids)]
    assert pair_ids == original_order


# --- pair JSONL round trip ---


def test_pairs_round_trip(tmp_path):
    pairs = [
        ReportPair("a", "src", "some findings text", "the impression"),
        ReportPair("b", "src", "unicode éü text", "ok then"),
    ]
    path = tmp_path / "pairs.jsonl"
    write_pairs(pairs, path)
    assert read_pairs(path) == pairs
