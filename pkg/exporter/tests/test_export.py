"""export_traces behavior on the tiny checkpoint: shapes, metadata, errors."""

import json
import os

import numpy as np
import pytest

from kvtrace_export import (
    ExportError,
    ExportSpec,
    export_traces,
    read_prompts,
    read_trace_file,
    shard_items,
)
from kvtrace_export import capture as capture_mod
from kvtrace_export.cli import main as cli_main
from conftest import write_jsonl


def spec_for(checkpoint, prompts_file, **kw):
    return ExportSpec(model=checkpoint, prompts=prompts_file, max_new_tokens=12, **kw)


def test_export_writes_one_valid_trace_per_prompt(checkpoint, prompts_file, tmp_path):
    out = tmp_path / "out"
    manifest = export_traces(spec_for(checkpoint, prompts_file), out)
    assert [item["id"] for item in manifest["items"]] == ["q0", "q1"]
    assert manifest["errors"] == []
    for item in manifest["items"]:
        meta, tensors = read_trace_file(out / item["file"])
        t = len(meta["token_ids"])
        dims = meta["model"]
        assert dims["num_heads"] == 4 and dims["num_kv_heads"] == 2
        for l in range(dims["num_layers"]):
            assert tensors[f"K.{l}"].shape == (t, dims["num_kv_heads"], dims["d_head"])
            assert tensors[f"V.{l}"].shape == (t, dims["num_kv_heads"], dims["d_head"])
            assert tensors[f"K.{l}"].dtype == np.float32
        assert tensors["hidden"].shape == (dims["num_layers"] + 1, t, dims["d_model"])
        assert tensors["logits"].shape == (t, dims["vocab_size"])
        assert tensors["token_logprobs"].shape == (t,)
        assert tensors["token_logprobs"][0] == 0.0
    assert (out / "export.manifest.json").exists()


def test_greedy_export_is_deterministic(checkpoint, prompts_file, tmp_path):
    m1 = export_traces(spec_for(checkpoint, prompts_file), tmp_path / "a")
    m2 = export_traces(spec_for(checkpoint, prompts_file), tmp_path / "b")
    for item in m1["items"]:
        meta1, _ = read_trace_file(tmp_path / "a" / item["file"])
        meta2, _ = read_trace_file(tmp_path / "b" / item["file"])
        assert meta1["token_ids"] == meta2["token_ids"]
        raw1 = (tmp_path / "a" / item["file"]).read_bytes()
        raw2 = (tmp_path / "b" / item["file"]).read_bytes()
        assert raw1 == raw2
    assert m2["errors"] == []


def test_capture_kinds_select_tensors(checkpoint, prompts_file, tmp_path):
    out = tmp_path / "kv-only"
    manifest = export_traces(spec_for(checkpoint, prompts_file, capture=("kv",)), out)
    _, tensors = read_trace_file(out / manifest["items"][0]["file"])
    assert all(name[:2] in ("K.", "V.") for name in tensors)
    out2 = tmp_path / "lp-only"
    manifest2 = export_traces(spec_for(checkpoint, prompts_file, capture=("logprobs",)), out2)
    _, tensors2 = read_trace_file(out2 / manifest2["items"][0]["file"])
    assert set(tensors2) == {"logits", "token_logprobs"}


def test_spec_rejects_bad_fields(checkpoint, prompts_file):
    with pytest.raises(ExportError, match="at least one capture"):
        spec_for(checkpoint, prompts_file, capture=())
    with pytest.raises(ExportError, match="unknown capture kind"):
        spec_for(checkpoint, prompts_file, capture=("kv", "attention"))
    with pytest.raises(ExportError, match="dtype"):
        spec_for(checkpoint, prompts_file, dtype="f16")
    with pytest.raises(ExportError, match="shard"):
        spec_for(checkpoint, prompts_file, shard_index=3, num_shards=2)


def test_think_positions_are_annotated(checkpoint, tmp_path):
    prompts = write_jsonl(
        tmp_path / "p.jsonl", [{"id": "t0", "text": "<think> 5 </think> What is 5 ?"}]
    )
    out = tmp_path / "out"
    export_traces(spec_for(checkpoint, prompts), out)
    meta, _ = read_trace_file(out / "t0.kvtrace")
    specials = meta["specials"]
    ids = meta["token_ids"]
    assert specials["think_token_id"] is not None
    assert all(ids[i] == specials["think_token_id"] for i in specials["think_positions"])
    assert 0 in specials["think_positions"]
    assert 2 in specials["end_think_positions"]
    assert specials["all_special_tokens"]["<think>"] == specials["think_token_id"]
    assert "</think>" in specials["all_special_tokens"]


def test_failed_prompt_is_recorded_not_fatal(checkpoint, prompts_file, tmp_path, monkeypatch):
    real = capture_mod.greedy_capture

    def sabotaged(model, prompt_ids, *args, **kwargs):
        if len(prompt_ids) % 2 == 1:
            raise RuntimeError("simulated out of memory")
        return real(model, prompt_ids, *args, **kwargs)

    from kvtrace_export import export as export_mod

    monkeypatch.setattr(export_mod, "greedy_capture", sabotaged)
    prompts = write_jsonl(
        tmp_path / "p.jsonl",
        [{"id": "ok", "text": "What is 3 plus 4 ?"}, {"id": "boom", "text": "What is 3 plus 4 5 ?"}],
    )
    out = tmp_path / "out"
    manifest = export_traces(spec_for(checkpoint, prompts), out)
    assert [item["id"] for item in manifest["items"]] == ["ok"]
    assert manifest["errors"] == [
        {"id": "boom", "error": "RuntimeError", "message": "simulated out of memory"}
    ]
    assert (out / "ok.kvtrace").exists() and not (out / "boom.kvtrace").exists()


def test_sharding_partitions_prompts(prompts_file):
    items = read_prompts(prompts_file)
    assert shard_items(items, 0, 2) == [items[0]]
    assert shard_items(items, 1, 2) == [items[1]]
    assert shard_items(items, 0, 1) == items


def test_prompt_file_validation(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    with pytest.raises(ExportError, match="not valid JSON"):
        read_prompts(bad)
    dup = write_jsonl(tmp_path / "dup.jsonl", [{"id": "a", "text": "x"}, {"id": "a", "text": "y"}])
    with pytest.raises(ExportError, match="unique"):
        read_prompts(dup)
    with pytest.raises(ExportError, match="cannot read"):
        read_prompts(tmp_path / "missing.jsonl")


def test_cli_traces_and_usage_error(checkpoint, prompts_file, tmp_path, capsys):
    out = tmp_path / "cli-out"
    code = cli_main(
        [
            "traces",
            "--model", checkpoint,
            "--prompts", prompts_file,
            "--out-dir", str(out),
            "--max-new-tokens", "6",
            "--capture", "kv,logprobs",
        ]
    )
    assert code == 0
    summary = json.loads(capsys.readouterr().out.strip())
    assert summary == {"items": 2, "errors": 0}
    assert sorted(os.listdir(out)) == ["export.manifest.json", "q0.kvtrace", "q1.kvtrace"]

    code = cli_main(
        [
            "traces",
            "--model", checkpoint,
            "--prompts", prompts_file,
            "--out-dir", str(out),
            "--capture", "attention",
        ]
    )
    assert code == 2
    assert "unknown capture kind" in capsys.readouterr().err
