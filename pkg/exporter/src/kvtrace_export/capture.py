"""Stepwise greedy generation on a pretrained causal LM with activation capture.

The model is driven one token at a time through its own KV cache so every
tensor the trace needs falls out of the decode loop itself: per-layer keys
and values at the model's native KV-head count, hidden states gathered in
per-step chunks (never re-running the full sequence just to materialize
them), and the logits rows that realized-token logprobs derive from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class CaptureError(Exception):
    """A generation request this module cannot satisfy."""


@dataclass
class StepCapture:
    """Everything recorded while generating one sequence.

    token_ids covers prompt plus generated tokens, and every captured tensor
    covers all of token_ids: the final sampled token is fed through one extra
    forward pass so its cache entry, hidden column, and logits row exist too.
    """

    token_ids: list
    prompt_len: int
    keys: list | None
    values: list | None
    hidden: np.ndarray | None
    logits: np.ndarray | None
    token_logprobs: np.ndarray | None
    stopped_on_eos: bool

    @property
    def generated_ids(self):
        return self.token_ids[self.prompt_len :]


def load_checkpoint(model_id, device="cpu"):
    """Load model and tokenizer from a hub name or local checkpoint directory."""
    from transformers import AutoModelForCausalLM, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(model_id)
    model = AutoModelForCausalLM.from_pretrained(model_id)
    model.to(device)
    model.eval()
    return model, tokenizer


def model_dims(model) -> dict:
    cfg = model.config
    heads = cfg.num_attention_heads
    d_head = getattr(cfg, "head_dim", None) or cfg.hidden_size // heads
    return {
        "num_layers": cfg.num_hidden_layers,
        "num_heads": heads,
        "num_kv_heads": getattr(cfg, "num_key_value_heads", None) or heads,
        "d_model": cfg.hidden_size,
        "d_head": d_head,
        "vocab_size": cfg.vocab_size,
    }


def _cache_layer(past, index):
    layers = getattr(past, "layers", None)
    if layers is not None:
        return layers[index].keys, layers[index].values
    k, v = past[index]
    return k, v


def _f32(tensor) -> np.ndarray:
    return tensor.detach().to(torch.float32).cpu().numpy()


def greedy_capture(
    model,
    prompt_ids,
    max_new_tokens,
    want_kv=True,
    want_hidden=True,
    want_logits=True,
    eos_token_id=None,
) -> StepCapture:
    """Prefill the prompt, then decode greedily, capturing as it goes.

    Greedy means argmax with ties resolved to the lowest token id, so a given
    checkpoint and prompt always reproduce the same token_ids. eos_token_id
    of None disables early stopping.
    """
    ids = [int(t) for t in prompt_ids]
    if not ids:
        raise CaptureError("prompt must contain at least one token")
    if max_new_tokens < 0:
        raise CaptureError(f"max_new_tokens must be >= 0, got {max_new_tokens}")
    device = next(model.parameters()).device
    hidden_chunks = [] if want_hidden else None
    logits_chunks = [] if want_logits else None

    def absorb(out):
        if hidden_chunks is not None:
            hidden_chunks.append(np.stack([_f32(h[0]) for h in out.hidden_states]))
        if logits_chunks is not None:
            logits_chunks.append(_f32(out.logits[0]))

    with torch.inference_mode():
        out = model(
            torch.tensor([ids], dtype=torch.long, device=device),
            use_cache=True,
            output_hidden_states=want_hidden,
        )
        absorb(out)
        prompt_len = len(ids)
        stopped = False
        for _ in range(max_new_tokens):
            nxt = int(torch.argmax(out.logits[0, -1]).item())
            ids.append(nxt)
            out = model(
                torch.tensor([[nxt]], dtype=torch.long, device=device),
                past_key_values=out.past_key_values,
                use_cache=True,
                output_hidden_states=want_hidden,
            )
            absorb(out)
            if eos_token_id is not None and nxt == eos_token_id:
                stopped = True
                break

        keys = values = None
        if want_kv:
            keys, values = [], []
            for l in range(model.config.num_hidden_layers):
                k, v = _cache_layer(out.past_key_values, l)
                # stored layout is [t, H_kv, d_head]; the model keeps [H_kv, t, d_head]
                keys.append(np.ascontiguousarray(_f32(k[0]).transpose(1, 0, 2)))
                values.append(np.ascontiguousarray(_f32(v[0]).transpose(1, 0, 2)))

    hidden = np.concatenate(hidden_chunks, axis=1) if want_hidden else None
    logits = None
    token_logprobs = None
    if want_logits:
        logits = np.concatenate(logits_chunks, axis=0)
        token_logprobs = _realized_logprobs(logits, ids)
    return StepCapture(
        token_ids=ids,
        prompt_len=prompt_len,
        keys=keys,
        values=values,
        hidden=hidden,
        logits=logits,
        token_logprobs=token_logprobs,
        stopped_on_eos=stopped,
    )


def _realized_logprobs(logits: np.ndarray, ids) -> np.ndarray:
    """log P(token_i | tokens_<i) from the captured f32 logits, in float64.

    Position 0 has no predecessor and gets 0.0, matching the convention the
    trace reader side expects.
    """
    out = np.zeros(len(ids), dtype=np.float64)
    if len(ids) > 1:
        rows = logits[:-1].astype(np.float64)
        rows = rows - rows.max(axis=1, keepdims=True)
        lse = np.log(np.exp(rows).sum(axis=1))
        out[1:] = rows[np.arange(len(ids) - 1), np.asarray(ids[1:])] - lse
    return out
