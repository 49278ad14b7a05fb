"""Shared fixture: a tiny local checkpoint standing in for a hub download.

The sandbox has no route to the hub, so the 2-layer grouped-query test model
is synthesized once per session and saved with save_pretrained; the exporter
then loads it through the exact same from_pretrained path a hub name would
take. Weights are seeded, so every capture in the suite is reproducible.
"""

import os

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")
os.environ.setdefault("TRANSFORMERS_VERBOSITY", "error")

import json

import pytest
import torch
from tokenizers import Tokenizer
from tokenizers.models import WordLevel
from tokenizers.pre_tokenizers import WhitespaceSplit
from transformers import LlamaConfig, LlamaForCausalLM, PreTrainedTokenizerFast
from transformers.utils import logging as hf_logging

hf_logging.disable_progress_bar()

VOCAB_WORDS = (
    ["<pad>", "<eos>", "<unk>", "<think>", "</think>"]
    + [str(n) for n in range(30)]
    + ["What", "is", "plus", "minus", "times", "the", "answer", "equals", "?", "+", "-", "="]
)


def build_checkpoint(path, seed=7):
    vocab = {w: i for i, w in enumerate(VOCAB_WORDS)}
    tok = Tokenizer(WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = WhitespaceSplit()
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        pad_token="<pad>",
        eos_token="<eos>",
        unk_token="<unk>",
        additional_special_tokens=["<think>", "</think>"],
    )
    torch.manual_seed(seed)
    config = LlamaConfig(
        vocab_size=len(tokenizer),
        hidden_size=64,
        intermediate_size=128,
        num_hidden_layers=2,
        num_attention_heads=4,
        num_key_value_heads=2,
        max_position_embeddings=512,
        tie_word_embeddings=False,
        pad_token_id=0,
        eos_token_id=1,
        bos_token_id=None,
    )
    model = LlamaForCausalLM(config)
    model.eval()
    model.save_pretrained(path)
    tokenizer.save_pretrained(path)
    return path


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("checkpoint")
    return str(build_checkpoint(path))


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return str(path)


@pytest.fixture
def prompts_file(tmp_path):
    return write_jsonl(
        tmp_path / "prompts.jsonl",
        [
            {"id": "q0", "text": "What is 3 plus 4 ?"},
            {"id": "q1", "text": "What is 12 minus 5 ?"},
        ],
    )
