"""Command line front end: flags map one to one onto ExportSpec fields."""

from __future__ import annotations

import argparse
import json
import sys

from .export import (
    CAPTURE_KINDS,
    DEFAULT_FAST_WRAPPER,
    DEFAULT_SLOW_WRAPPER,
    ExportError,
    ExportSpec,
    export_fastslow_pairs,
    export_traces,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAILURE = 3


def _add_spec_flags(sub, pairs: bool):
    sub.add_argument("--model", required=True, help="hub name or local checkpoint directory")
    sub.add_argument("--prompts", required=True, help="JSONL prompt list (string or {id,text} per line)")
    sub.add_argument("--out-dir", required=True)
    sub.add_argument("--max-new-tokens", type=int, default=64)
    sub.add_argument(
        "--capture",
        default=",".join(CAPTURE_KINDS),
        help=f"comma list from {{{','.join(CAPTURE_KINDS)}}}",
    )
    sub.add_argument("--dtype", default="f32", help="storage policy; activations downcast to f32")
    sub.add_argument(
        "--labels",
        required=pairs,
        default=None,
        help='JSONL of {"id","gold"} gold answers' + ("" if pairs else " (unused by traces)"),
    )
    sub.add_argument("--fast-wrapper", default=DEFAULT_FAST_WRAPPER)
    sub.add_argument("--slow-wrapper", default=DEFAULT_SLOW_WRAPPER)
    sub.add_argument("--no-eos-stop", action="store_true", help="always generate max-new-tokens")
    sub.add_argument("--shard-index", type=int, default=0)
    sub.add_argument("--num-shards", type=int, default=1)
    sub.add_argument("--device", default="cpu")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kvtrace-export",
        description="Capture KV caches, hidden states, and logprobs from a causal LM into KVTRACE files",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    _add_spec_flags(subs.add_parser("traces", help="one trace per prompt"), pairs=False)
    _add_spec_flags(subs.add_parser("pairs", help="fast/slow labeled pairs"), pairs=True)
    return parser


def _spec_from_args(args) -> ExportSpec:
    capture = tuple(part.strip() for part in args.capture.split(",") if part.strip())
    return ExportSpec(
        model=args.model,
        prompts=args.prompts,
        max_new_tokens=args.max_new_tokens,
        capture=capture,
        dtype=args.dtype,
        labels=args.labels,
        fast_wrapper=args.fast_wrapper,
        slow_wrapper=args.slow_wrapper,
        stop_on_eos=not args.no_eos_stop,
        shard_index=args.shard_index,
        num_shards=args.num_shards,
        device=args.device,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        from transformers.utils import logging as hf_logging

        hf_logging.disable_progress_bar()
    except Exception:  # noqa: BLE001 - log hygiene only, never fatal
        pass
    try:
        spec = _spec_from_args(args)
    except ExportError as exc:
        print(f"kvtrace-export: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        run = export_pairs_or_traces(args.command, spec, args.out_dir)
    except ExportError as exc:
        print(f"kvtrace-export: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps({"items": len(run["items"]), "errors": len(run["errors"])}))
    return EXIT_OK


def export_pairs_or_traces(command, spec, out_dir):
    if command == "pairs":
        return export_fastslow_pairs(spec, out_dir)
    return export_traces(spec, out_dir)


if __name__ == "__main__":
    raise SystemExit(main())
