"""Fast/slow pair export: grading, labeling, and agreement with the core toolkit.

Gold answers are crafted from a first greedy run (deterministic), so the
second run exercises every grading outcome without hardcoding model output.
"""

import numpy as np
import pytest

from kvrep.difficulty import assign_label
from kvrep.kvpool import pool_classifier_features
from kvrep.traceio import cache_from_trace, read_trace

from kvtrace_export import (
    ExportError,
    ExportSpec,
    SHORT_FAST_LIMIT,
    difficulty_label,
    export_fastslow_pairs,
    read_trace_file,
)
from conftest import write_jsonl

QUESTIONS = [
    {"id": "q0", "text": "What is 3 plus 4 ?"},
    {"id": "q1", "text": "What is 12 minus 5 ?"},
    {"id": "q2", "text": "What is 6 times 2 ?"},
]


def run_pairs(checkpoint, tmp_path, golds, subdir, questions=QUESTIONS, **kw):
    prompts = write_jsonl(tmp_path / f"{subdir}-prompts.jsonl", questions)
    labels = write_jsonl(tmp_path / f"{subdir}-golds.jsonl", golds)
    spec = ExportSpec(
        model=checkpoint, prompts=prompts, labels=labels, max_new_tokens=kw.pop("max_new_tokens", 16), **kw
    )
    return export_fastslow_pairs(spec, tmp_path / subdir), tmp_path / subdir


@pytest.fixture(scope="module")
def first_run(checkpoint, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pairs-probe")
    manifest, out = run_pairs(checkpoint, tmp, [{"id": q["id"], "gold": "::none::"} for q in QUESTIONS], "probe")
    return {item["id"]: item for item in manifest["items"]}


def test_truth_table_matches_core_labeler():
    for fast_ok in (False, True):
        for slow_ok in (False, True):
            for fast_len in (0, 1, SHORT_FAST_LIMIT - 1, SHORT_FAST_LIMIT, SHORT_FAST_LIMIT + 1, 999):
                assert difficulty_label(fast_ok, slow_ok, fast_len) == assign_label(
                    fast_ok, slow_ok, fast_len
                ).d


def test_labels_cover_grading_outcomes(checkpoint, tmp_path, first_run):
    # gold = the model's own fast answer makes fast correct (label 0),
    # gold = its slow answer makes only slow correct (label 75),
    # an impossible gold makes both wrong (label 100).
    assert first_run["q0"]["fast_answer"] != first_run["q0"]["slow_answer"]
    assert first_run["q1"]["fast_answer"] != first_run["q1"]["slow_answer"]
    golds = [
        {"id": "q0", "gold": first_run["q0"]["fast_answer"]},
        {"id": "q1", "gold": first_run["q1"]["slow_answer"]},
        {"id": "q2", "gold": "::unreachable::"},
    ]
    manifest, out = run_pairs(checkpoint, tmp_path, golds, "labeled")
    by_id = {item["id"]: item for item in manifest["items"]}
    assert by_id["q0"]["label_d"] == 0 and by_id["q0"]["fast_correct"]
    assert by_id["q1"]["label_d"] == 75
    assert by_id["q1"]["slow_correct"] and not by_id["q1"]["fast_correct"]
    assert by_id["q2"]["label_d"] == 100
    lines = (out / "difficulty_labels.txt").read_text().splitlines()
    assert lines == ["q0 0", "q1 75", "q2 100"]


def test_long_fast_success_labels_25(checkpoint, tmp_path):
    probe, _ = run_pairs(
        checkpoint, tmp_path, [{"id": "q0", "gold": "x"}], "probe25",
        questions=QUESTIONS[:1], max_new_tokens=SHORT_FAST_LIMIT + 2, stop_on_eos=False,
    )
    fast_answer = probe["items"][0]["fast_answer"]
    assert probe["items"][0]["fast_len"] == SHORT_FAST_LIMIT + 2
    manifest, _ = run_pairs(
        checkpoint, tmp_path, [{"id": "q0", "gold": fast_answer}], "labeled25",
        questions=QUESTIONS[:1], max_new_tokens=SHORT_FAST_LIMIT + 2, stop_on_eos=False,
    )
    item = manifest["items"][0]
    assert item["fast_correct"] and item["label_d"] == 25


def test_recorded_tuples_rederive_to_the_same_label(checkpoint, tmp_path, first_run):
    golds = [{"id": "q0", "gold": first_run["q0"]["fast_answer"]},
             {"id": "q1", "gold": first_run["q1"]["slow_answer"]},
             {"id": "q2", "gold": "::unreachable::"}]
    manifest, out = run_pairs(checkpoint, tmp_path, golds, "rederive")
    for item in manifest["items"]:
        meta, _ = read_trace_file(out / item["file"])
        assert meta["label_d"] == item["label_d"]
        assert item["label_d"] == assign_label(
            item["fast_correct"], item["slow_correct"], item["fast_len"]
        ).d


def test_missing_gold_flags_item_instead_of_dropping(checkpoint, tmp_path):
    manifest, out = run_pairs(
        checkpoint, tmp_path, [{"id": "q0", "gold": "x"}], "flagged", questions=QUESTIONS[:2]
    )
    by_id = {item["id"]: item for item in manifest["items"]}
    assert by_id["q1"]["flagged"] == "no gold answer for this id"
    assert by_id["q1"]["label_d"] is None
    assert (out / "q1.pair.kvtrace").exists()
    assert (out / "difficulty_labels.txt").read_text().splitlines() == [f"q0 {by_id['q0']['label_d']}"]


def test_pair_features_match_core_pooling_bit_for_bit(checkpoint, tmp_path):
    manifest, out = run_pairs(checkpoint, tmp_path, [{"id": "q0", "gold": "x"}], "pool", questions=QUESTIONS[:1])
    trace = read_trace(out / manifest["items"][0]["file"])
    cache = cache_from_trace(trace)
    pooled = pool_classifier_features(cache)
    assert cache.current_len == len(trace.meta["token_ids"])
    assert trace.tensors["features"].dtype == np.float64
    assert np.array_equal(trace.tensors["features"], pooled)


def test_pairs_require_a_labels_file(checkpoint, tmp_path):
    prompts = write_jsonl(tmp_path / "p.jsonl", QUESTIONS[:1])
    spec = ExportSpec(model=checkpoint, prompts=prompts, max_new_tokens=4)
    with pytest.raises(ExportError, match="labels file"):
        export_fastslow_pairs(spec, tmp_path / "out")
