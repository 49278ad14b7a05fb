"""Batch export of model runs to KVTRACE files, plus fast/slow labeled pairs.

export_traces turns a prompt list into one trace per prompt: per-layer K/V at
the model's native KV-head count, optional hidden states, optional logits and
realized-token logprobs, with the exact token ids and tokenizer specials
recorded in metadata. export_fastslow_pairs runs each question twice, once
with an empty think block and once with an open one, grades both answers
against gold, and writes pooled prompt features with a difficulty label.

One model instance per process, prompts processed sequentially; shard a big
prompt list across processes with (shard_index, num_shards).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .capture import greedy_capture, load_checkpoint, model_dims
from . import wire

CAPTURE_KV = "kv"
CAPTURE_HIDDEN = "hidden"
CAPTURE_LOGPROBS = "logprobs"
CAPTURE_KINDS = (CAPTURE_KV, CAPTURE_HIDDEN, CAPTURE_LOGPROBS)

THINK_TOKEN = "<think>"
END_THINK_TOKEN = "</think>"

# Prompt wrappers: fast answers after a pre-closed empty think block, slow
# opens the block and lets the model reason before closing it itself.
DEFAULT_FAST_WRAPPER = "{question}\n<think>\n</think>\n"
DEFAULT_SLOW_WRAPPER = "{question}\n<think>\n"

SHORT_FAST_LIMIT = 128

# Feature recipe for pair traces, in the pooling-spec notation the core
# toolkit uses: keys and values, heads concatenated (K block then V block),
# summed over the last 64 positions, averaged over layers, unnormalized.
PAIR_POOLING = "kv:concat:sumlast64:layers=all:nonorm"
_POOL_LAST_K = 64


class ExportError(Exception):
    """A spec or input file problem that prevents the export from starting."""


@dataclass
class ExportSpec:
    """What to run and what to keep.

    model is a hub name or a local checkpoint directory; prompts and labels
    are JSONL paths (see read_prompts / read_golds for the line shapes).
    """

    model: str
    prompts: str
    max_new_tokens: int = 64
    capture: tuple = CAPTURE_KINDS
    dtype: str = "f32"
    labels: str | None = None
    fast_wrapper: str = DEFAULT_FAST_WRAPPER
    slow_wrapper: str = DEFAULT_SLOW_WRAPPER
    stop_on_eos: bool = True
    shard_index: int = 0
    num_shards: int = 1
    device: str = "cpu"

    def __post_init__(self):
        self.capture = tuple(self.capture)
        if not self.capture:
            raise ExportError("select at least one capture kind")
        for kind in self.capture:
            if kind not in CAPTURE_KINDS:
                raise ExportError(f"unknown capture kind {kind!r}; choose from {CAPTURE_KINDS}")
        if self.dtype != "f32":
            raise ExportError(f"dtype policy {self.dtype!r} unsupported; activations are downcast to f32")
        if self.max_new_tokens < 0:
            raise ExportError("max_new_tokens must be >= 0")
        if self.num_shards < 1 or not 0 <= self.shard_index < self.num_shards:
            raise ExportError(f"bad shard {self.shard_index}/{self.num_shards}")
        for wrapper in (self.fast_wrapper, self.slow_wrapper):
            if "{question}" not in wrapper:
                raise ExportError("prompt wrappers must contain a {question} placeholder")


def read_prompts(path) -> list:
    """JSONL, one item per line: either a bare string or {"id": ..., "text": ...}.

    Missing ids become p0000-style positional ones.
    """
    items = []
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise ExportError(f"cannot read prompts file: {exc}") from exc
    for i, line in enumerate(lines):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ExportError(f"prompts line {i + 1} is not valid JSON: {exc}") from exc
        if isinstance(obj, str):
            items.append((f"p{i:04d}", obj))
        elif isinstance(obj, dict) and isinstance(obj.get("text"), str):
            items.append((str(obj.get("id", f"p{i:04d}")), obj["text"]))
        else:
            raise ExportError(f"prompts line {i + 1} must be a string or an object with text")
    if not items:
        raise ExportError("prompts file has no prompts")
    ids = [pid for pid, _ in items]
    if len(set(ids)) != len(ids):
        raise ExportError("prompt ids must be unique")
    return items


def read_golds(path) -> dict:
    """JSONL of {"id": ..., "gold": ...} lines mapping prompt ids to gold answers."""
    golds = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise ExportError(f"cannot read labels file: {exc}") from exc
    for i, line in enumerate(lines):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ExportError(f"labels line {i + 1} is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict) or "id" not in obj or "gold" not in obj:
            raise ExportError(f"labels line {i + 1} must be an object with id and gold")
        golds[str(obj["id"])] = str(obj["gold"])
    return golds


def shard_items(items, shard_index, num_shards):
    return [item for i, item in enumerate(items) if i % num_shards == shard_index]


def difficulty_label(fast_correct, slow_correct, fast_len) -> int:
    """Difficulty from fast/slow outcomes.

    Fast success is 0 when the fast answer was also short, 25 when it rambled
    past the short-fast limit; fast failure is 75 when slow thinking rescued
    the item and 100 when nothing did. The core toolkit derives its labels
    from the same table, and the pair tests cross-check the two.
    """
    if fast_correct:
        return 0 if fast_len < SHORT_FAST_LIMIT else 25
    return 75 if slow_correct else 100


def normalize_answer(text: str) -> str:
    return " ".join(text.split())


def extract_answer(full_text: str, generated_text: str) -> str:
    """Answer segment of a transcript: everything after the last closed think
    block, or the whole generation when the model never closed one."""
    if END_THINK_TOKEN in full_text:
        return full_text.rsplit(END_THINK_TOKEN, 1)[1].strip()
    return generated_text.strip()


def pool_prompt_features(keys, values, prompt_len, last_k=_POOL_LAST_K) -> np.ndarray:
    """PAIR_POOLING applied to the prompt slice of a captured cache.

    Mirrors the core toolkit's classifier pooling exactly: per layer, heads
    flatten in head order with the K block before the V block; layers average
    after flattening; the last min(k, t) positions sum. Float64 throughout.
    """
    per_layer = []
    for k, v in zip(keys, values):
        k = k[:prompt_len].astype(np.float64).reshape(prompt_len, -1)
        v = v[:prompt_len].astype(np.float64).reshape(prompt_len, -1)
        per_layer.append(np.concatenate([k, v], axis=1))
    stack = np.stack(per_layer).mean(axis=0)
    take = min(last_k, stack.shape[0])
    return stack[-take:, :].sum(axis=0)


def _specials_block(tokenizer) -> dict:
    vocab = tokenizer.get_vocab()
    return {
        "special_tokens": tokenizer.special_tokens_map,
        "all_special_tokens": {t: vocab.get(t) for t in tokenizer.all_special_tokens},
        "chat_template": getattr(tokenizer, "chat_template", None),
        "think_token_id": vocab.get(THINK_TOKEN),
        "end_think_token_id": vocab.get(END_THINK_TOKEN),
    }


def _positions(ids, token_id):
    if token_id is None:
        return []
    return [i for i, t in enumerate(ids) if t == token_id]


def _eos_id(spec: ExportSpec, tokenizer):
    if not spec.stop_on_eos:
        return None
    return tokenizer.eos_token_id


def _write_manifest(out_dir, name, manifest):
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _spec_echo(spec: ExportSpec) -> dict:
    return {
        "model": spec.model,
        "prompts": spec.prompts,
        "max_new_tokens": spec.max_new_tokens,
        "capture": list(spec.capture),
        "dtype": spec.dtype,
        "labels": spec.labels,
        "fast_wrapper": spec.fast_wrapper,
        "slow_wrapper": spec.slow_wrapper,
        "stop_on_eos": spec.stop_on_eos,
        "shard_index": spec.shard_index,
        "num_shards": spec.num_shards,
        "device": spec.device,
    }


def _load(spec: ExportSpec):
    try:
        model, tokenizer = load_checkpoint(spec.model, device=spec.device)
    except Exception as exc:
        raise ExportError(f"cannot load model {spec.model!r}: {exc}") from exc
    return model, tokenizer, model_dims(model)


def export_traces(spec: ExportSpec, out_dir) -> dict:
    """One KVTRACE per prompt. Per-prompt failures become error records in the
    manifest instead of aborting the batch."""
    items = shard_items(read_prompts(spec.prompts), spec.shard_index, spec.num_shards)
    os.makedirs(out_dir, exist_ok=True)
    model, tokenizer, dims = _load(spec)
    specials = _specials_block(tokenizer)
    want_kv = CAPTURE_KV in spec.capture
    want_hidden = CAPTURE_HIDDEN in spec.capture
    want_logits = CAPTURE_LOGPROBS in spec.capture
    eos = _eos_id(spec, tokenizer)

    exported, errors = [], []
    for pid, text in items:
        try:
            prompt_ids = tokenizer(text, add_special_tokens=False)["input_ids"]
            cap = greedy_capture(
                model,
                prompt_ids,
                spec.max_new_tokens,
                want_kv=want_kv,
                want_hidden=want_hidden,
                want_logits=want_logits,
                eos_token_id=eos,
            )
        except Exception as exc:  # noqa: BLE001 - per-prompt skip is the contract
            errors.append({"id": pid, "error": type(exc).__name__, "message": str(exc)})
            continue
        tensors = {}
        if want_kv:
            for l, (k, v) in enumerate(zip(cap.keys, cap.values)):
                tensors[f"K.{l}"] = k
                tensors[f"V.{l}"] = v
        if want_hidden:
            tensors["hidden"] = cap.hidden
        if want_logits:
            tensors["logits"] = cap.logits
            tensors["token_logprobs"] = cap.token_logprobs
        meta = {
            "kind": "model-export",
            "model": {"name": spec.model, **dims},
            "token_ids": cap.token_ids,
            "prompt_len": cap.prompt_len,
            "prompt_text": text,
            "generated_text": tokenizer.decode(cap.generated_ids),
            "specials": {
                **specials,
                "think_positions": _positions(cap.token_ids, specials["think_token_id"]),
                "end_think_positions": _positions(cap.token_ids, specials["end_think_token_id"]),
            },
            "export": {
                "capture": list(spec.capture),
                "dtype_policy": spec.dtype,
                "max_new_tokens": spec.max_new_tokens,
                "greedy": True,
                "stopped_on_eos": cap.stopped_on_eos,
                "shard": [spec.shard_index, spec.num_shards],
            },
        }
        fname = f"{pid}.kvtrace"
        wire.write_trace_file(os.path.join(out_dir, fname), meta, tensors)
        exported.append({"id": pid, "file": fname, "tokens": len(cap.token_ids)})

    manifest = {"command": "traces", "spec": _spec_echo(spec), "items": exported, "errors": errors}
    _write_manifest(out_dir, "export.manifest.json", manifest)
    return manifest


def export_fastslow_pairs(spec: ExportSpec, out_dir) -> dict:
    """Run both prompt variants per question, grade, label, and write features.

    Each item becomes <id>.pair.kvtrace holding the pooled prompt features
    plus the prompt slice of the fast-variant cache it was pooled from, with
    outcomes (fast_correct, slow_correct, fast_len, label_d) in metadata.
    Items that cannot be graded are flagged in the manifest, never dropped.
    """
    if spec.labels is None:
        raise ExportError("export_fastslow_pairs needs a labels file of gold answers")
    golds = read_golds(spec.labels)
    items = shard_items(read_prompts(spec.prompts), spec.shard_index, spec.num_shards)
    os.makedirs(out_dir, exist_ok=True)
    model, tokenizer, dims = _load(spec)
    specials = _specials_block(tokenizer)
    eos = _eos_id(spec, tokenizer)

    results, errors = [], []
    label_lines = []
    for pid, question in items:
        try:
            record = _run_pair(spec, model, tokenizer, dims, specials, eos, pid, question, golds, out_dir)
        except Exception as exc:  # noqa: BLE001 - per-item skip is the contract
            errors.append({"id": pid, "error": type(exc).__name__, "message": str(exc)})
            continue
        results.append(record)
        if record["label_d"] is not None:
            label_lines.append(f"{pid} {record['label_d']}")

    with open(os.path.join(out_dir, "difficulty_labels.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(label_lines) + ("\n" if label_lines else ""))
    manifest = {"command": "pairs", "spec": _spec_echo(spec), "items": results, "errors": errors}
    _write_manifest(out_dir, "pairs.manifest.json", manifest)
    return manifest


def _run_pair(spec, model, tokenizer, dims, specials, eos, pid, question, golds, out_dir):
    variants = {}
    for mode, wrapper in (("fast", spec.fast_wrapper), ("slow", spec.slow_wrapper)):
        text = wrapper.format(question=question)
        prompt_ids = tokenizer(text, add_special_tokens=False)["input_ids"]
        cap = greedy_capture(
            model,
            prompt_ids,
            spec.max_new_tokens,
            want_kv=(mode == "fast"),
            want_hidden=False,
            want_logits=False,
            eos_token_id=eos,
        )
        generated = tokenizer.decode(cap.generated_ids)
        full = tokenizer.decode(cap.token_ids)
        answer = extract_answer(full, generated)
        eos_text = tokenizer.eos_token or ""
        if eos_text and answer.endswith(eos_text):
            answer = answer[: -len(eos_text)].strip()
        variants[mode] = {
            "prompt_text": text,
            "cap": cap,
            "answer": answer,
        }

    fast, slow = variants["fast"], variants["slow"]
    fast_len = len(fast["cap"].token_ids) - fast["cap"].prompt_len
    gold = golds.get(pid)
    flagged = None
    fast_correct = slow_correct = None
    label = None
    if gold is None:
        flagged = "no gold answer for this id"
    else:
        fast_correct = normalize_answer(fast["answer"]) == normalize_answer(gold)
        slow_correct = normalize_answer(slow["answer"]) == normalize_answer(gold)
        label = difficulty_label(fast_correct, slow_correct, fast_len)

    cap = fast["cap"]
    prompt_len = cap.prompt_len
    features = pool_prompt_features(cap.keys, cap.values, prompt_len)
    tensors = {"features": features}
    for l, (k, v) in enumerate(zip(cap.keys, cap.values)):
        tensors[f"K.{l}"] = k[:prompt_len]
        tensors[f"V.{l}"] = v[:prompt_len]

    def variant_meta(mode):
        v = variants[mode]
        ids = v["cap"].token_ids
        return {
            "prompt_text": v["prompt_text"],
            "token_ids": ids,
            "prompt_len": v["cap"].prompt_len,
            "answer": v["answer"],
            "think_positions": _positions(ids, specials["think_token_id"]),
            "end_think_positions": _positions(ids, specials["end_think_token_id"]),
        }

    meta = {
        "kind": "fastslow-pair",
        "id": pid,
        "question": question,
        "gold": gold,
        "model": {"name": spec.model, **dims},
        "token_ids": cap.token_ids[:prompt_len],
        "specials": specials,
        "fast": variant_meta("fast"),
        "slow": variant_meta("slow"),
        "fast_correct": fast_correct,
        "slow_correct": slow_correct,
        "fast_len": fast_len,
        "label_d": label,
        "flagged": flagged,
        "pooling": PAIR_POOLING,
    }
    fname = f"{pid}.pair.kvtrace"
    wire.write_trace_file(os.path.join(out_dir, fname), meta, tensors)
    return {
        "id": pid,
        "file": fname,
        "fast_answer": fast["answer"],
        "slow_answer": slow["answer"],
        "fast_correct": fast_correct,
        "slow_correct": slow_correct,
        "fast_len": fast_len,
        "label_d": label,
        "flagged": flagged,
    }
