"""Operator surface: corpus generation, scoring, evaluation, training, switching.

Every artifact-producing subcommand writes a run manifest (command, argv, seeds,
config hash, output names, wall clock) next to its outputs, and all randomness
flows through explicit --seed flags, so a run can be replayed byte for byte from
its manifest. Report-style commands additionally render matplotlib figures next
to their delimited output when asked via --plot.

Exit codes: 0 success, 2 usage errors, 3 validation/config/domain errors,
4 I/O errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time

import numpy as np

from .coescore import (
    HIGHER_IS_CORRECT,
    LOWER_IS_CORRECT,
    METHOD_COE_C,
    METHOD_COE_R,
    METHOD_ENTROPY,
    METHOD_MAXPROB,
    METHOD_PPL,
    CoEWeights,
    format_score_line,
    kv_coe,
    parse_score_line,
    score_baseline,
)
from .difficulty import (
    ESTIMATOR_KIND,
    TrainConfig,
    estimator_from_tensors,
    estimator_tensors,
    fit_estimator,
)
from .errors import ConfigError, DomainError, KvrepError, TraceFormatError, UsageError
from .kvpool import (
    AXIS_LAYER,
    AXIS_TOKEN,
    PoolingSpec,
    POS_SUM_LAST,
    SOURCE_HIDDEN,
    SOURCE_KV,
    SOURCE_VALUES,
    evenly_spaced_layers,
    format_pooling_spec,
    parse_pooling_spec,
    pool_classifier_features,
)
from .metrics import ScoredSet, aupr, auroc, fpr_at_95_tpr, roc_points
from .minitx import ModelConfig, estimate_memory
from .switcher import (
    MODE_CLASSIFICATION,
    MODE_FAST,
    MODE_GENERATIVE,
    MODE_SLOW,
    grade_answer,
    run_controlled_generation,
    run_plain_mode,
)
from .toydata import build_switching_workload, coe_corpus, difficulty_corpus
from .traceio import (
    TraceFile,
    cache_from_trace,
    cache_to_trace,
    read_trace,
    record_from_trace,
    record_to_tensors,
    validate_trace,
    write_trace,
)

_BASELINES = (METHOD_MAXPROB, METHOD_PPL, METHOD_ENTROPY)


# ---------------------------------------------------------------- plumbing


def _resolve_out(arg) -> str:
    out = arg or os.environ.get("KVREP_OUT") or "kvrep-out"
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(out_dir: str, command: str, argv, seeds: dict, config: dict, outputs, started: float) -> str:
    cfg_text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    manifest = {
        "command": command,
        "argv": list(argv),
        "seeds": seeds,
        "config": json.loads(cfg_text),
        "config_hash": hashlib.sha256(cfg_text.encode("utf-8")).hexdigest(),
        "outputs": sorted(os.path.basename(p) for p in outputs),
        "wall_clock_s": round(time.time() - started, 3),
    }
    path = os.path.join(out_dir, f"{command.replace(' ', '-')}.manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _trace_paths(items) -> list:
    paths = []
    for item in items:
        if os.path.isdir(item):
            inner = sorted(
                os.path.join(item, name) for name in os.listdir(item) if name.endswith(".kvtrace")
            )
            if not inner:
                raise FileNotFoundError(f"no .kvtrace files in directory {item}")
            paths.extend(inner)
        elif os.path.exists(item):
            paths.append(item)
        else:
            raise FileNotFoundError(f"trace input {item} does not exist")
    return paths


def _trace_id(trace: TraceFile, path: str) -> str:
    tid = trace.meta.get("trace_id") if isinstance(trace.meta, dict) else None
    return tid if isinstance(tid, str) and tid else os.path.splitext(os.path.basename(path))[0]


def _exact_counts(n: int, fractions) -> list:
    """Largest-remainder apportionment so the histogram matches the mix exactly."""
    raw = [n * f for f in fractions]
    base = [int(x) for x in raw]
    left = n - sum(base)
    order = sorted(range(len(raw)), key=lambda i: raw[i] - base[i], reverse=True)
    for i in order[:left]:
        base[i] += 1
    return base


def _parse_fractions(text: str, expect: int) -> list:
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"malformed fraction list {text!r}") from exc
    if len(parts) != expect:
        raise UsageError(f"expected {expect} comma-separated fractions, got {len(parts)}")
    if any(p < 0 for p in parts) or abs(sum(parts) - 1.0) > 1e-6:
        raise UsageError(f"fractions must be nonnegative and sum to 1, got {text!r}")
    return parts


# ---------------------------------------------------------------- gen-toy


def cmd_gen_toy(args) -> int:
    started = time.time()
    if args.n_traces < 1:
        raise UsageError("gen-toy needs n >= 1 traces")
    out_dir = _resolve_out(args.out)
    outputs = []
    if args.corpus == "coe":
        frac = args.correct_fraction
        if not (0.0 <= frac <= 1.0):
            raise UsageError("--correct-fraction must be in [0, 1]")
        n_correct = _exact_counts(args.n_traces, [frac, 1.0 - frac])[0]
        traces = coe_corpus(n_correct, args.n_traces - n_correct, seed=args.seed)
        label_lines = []
        for t in traces:
            meta = {"trace_id": t.trace_id, "token_ids": t.tokens, "label_correct": t.correct}
            tf = cache_to_trace(t.cache, meta=meta, extra_tensors=record_to_tensors(t.record))
            path = os.path.join(out_dir, f"{t.trace_id}.kvtrace")
            write_trace(path, tf)
            outputs.append(path)
            label_lines.append(f"{t.trace_id} {1 if t.correct else 0}")
        labels_path = os.path.join(out_dir, "labels.txt")
        with open(labels_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(label_lines) + "\n")
        outputs.append(labels_path)
        config = {"corpus": "coe", "n": args.n_traces, "correct_fraction": frac}
    else:
        fractions = _parse_fractions(args.mix, 4)
        counts = dict(zip((0, 25, 75, 100), _exact_counts(args.n_traces, fractions)))
        traces = difficulty_corpus(counts, seed=args.seed)
        label_lines = []
        for t in traces:
            meta = {"trace_id": t.trace_id, "token_ids": t.tokens, "label_d": t.d}
            path = os.path.join(out_dir, f"{t.trace_id}.kvtrace")
            write_trace(path, cache_to_trace(t.cache, meta=meta))
            outputs.append(path)
            label_lines.append(f"{t.trace_id} {t.d}")
        labels_path = os.path.join(out_dir, "difficulty_labels.txt")
        with open(labels_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(label_lines) + "\n")
        outputs.append(labels_path)
        config = {"corpus": "difficulty", "n": args.n_traces, "mix": fractions}
    _write_manifest(out_dir, "gen-toy", args.argv, {"seed": args.seed}, config, outputs, started)
    print(f"wrote {len(outputs)} files to {out_dir}")
    return 0


# ---------------------------------------------------------------- coe


def _default_spec(axis: str) -> PoolingSpec:
    if axis == AXIS_LAYER:
        return PoolingSpec(source=SOURCE_HIDDEN, layer_agg="perlayer")
    return PoolingSpec(source=SOURCE_VALUES, position_agg="pertoken")


def cmd_coe(args) -> int:
    started = time.time()
    paths = _trace_paths(args.traces)
    weights = CoEWeights(alpha=args.alpha, beta=args.beta)
    out_path = args.out or os.path.join(_resolve_out(args.out_dir), "scores.txt")
    spec = parse_pooling_spec(args.pooling) if args.pooling else _default_spec(args.axis)
    lines = []
    for path in paths:
        trace = read_trace(path)
        tid = _trace_id(trace, path)
        if args.method in _BASELINES:
            score = score_baseline(args.method, record_from_trace(trace))
        else:
            if spec.source == SOURCE_HIDDEN:
                obj = record_from_trace(trace)
            else:
                obj = cache_from_trace(trace)
            score = kv_coe(obj, spec, method=args.method, axis=args.axis, weights=weights)
        lines.append(format_score_line(tid, score))
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    config = {
        "method": args.method,
        "axis": args.axis,
        "pooling": format_pooling_spec(spec),
        "alpha": args.alpha,
        "beta": args.beta,
        "n_traces": len(paths),
    }
    _write_manifest(os.path.dirname(out_path) or ".", "coe", args.argv, {}, config, [out_path], started)
    print(f"scored {len(paths)} traces -> {out_path}")
    return 0


# ---------------------------------------------------------------- eval


def _read_labels(path) -> dict:
    labels = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DomainError(f"{path}:{ln}: labels need `trace_id label`, got {line!r}")
            labels[parts[0]] = int(parts[1])
    if not labels:
        raise DomainError(f"labels file {path} is empty")
    return labels


def cmd_eval(args) -> int:
    started = time.time()
    labels = _read_labels(args.labels)
    groups: dict = {}
    with open(args.scores, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            tid, score = parse_score_line(line)
            key = (score.method, score.axis, score.orientation)
            groups.setdefault(key, []).append((tid, score.value))
    if not groups:
        raise DomainError(f"scores file {args.scores} is empty")
    out_path = args.out or os.path.join(_resolve_out(args.out_dir), "metrics.tsv")
    rows = []
    curves = {}
    for (method, axis, orientation), scored in sorted(groups.items()):
        missing = [tid for tid, _ in scored if tid not in labels]
        if missing:
            raise DomainError(f"labels file lacks entries for {missing[:3]} (+{max(0, len(missing)-3)} more)")
        values = np.array([v for _, v in scored], dtype=np.float64)
        flags = np.array([labels[tid] == 1 for tid, _ in scored], dtype=bool)
        oriented = values if orientation == HIGHER_IS_CORRECT else -values
        used = orientation
        s = ScoredSet(oriented, flags)
        a = auroc(s)
        if args.orient == "auto" and a < 0.5:
            oriented = -oriented
            used = LOWER_IS_CORRECT if orientation == HIGHER_IS_CORRECT else HIGHER_IS_CORRECT
            s = ScoredSet(oriented, flags)
            a = auroc(s)
        rows.append(
            {
                "method": method,
                "axis": axis,
                "orientation": used,
                "n": s.n,
                "n_pos": s.n_pos,
                "auroc": a,
                "fpr95": fpr_at_95_tpr(s),
                "aupr": aupr(s),
            }
        )
        curves[f"{method}/{axis}"] = roc_points(s)
    header = ["method", "axis", "orientation", "n", "n_pos", "auroc", "fpr95", "aupr"]
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write(
                "\t".join(
                    f"{row[h]:.6f}" if isinstance(row[h], float) else str(row[h]) for h in header
                )
                + "\n"
            )
    outputs = [out_path]
    if args.plot:
        from . import plots

        plots.save_roc_figure(curves, args.plot)
        outputs.append(args.plot)
    config = {"orient": args.orient, "scores": os.path.basename(args.scores)}
    _write_manifest(os.path.dirname(out_path) or ".", "eval", args.argv, {}, config, outputs, started)
    for row in rows:
        print(
            f"{row['method']}/{row['axis']}: auroc={row['auroc']:.4f} "
            f"fpr95={row['fpr95']:.4f} aupr={row['aupr']:.4f} ({row['orientation']})"
        )
    return 0


# ---------------------------------------------------------------- difficulty


def _classifier_spec(arg) -> PoolingSpec:
    spec = parse_pooling_spec(arg) if arg else PoolingSpec(source=SOURCE_KV, position_agg=POS_SUM_LAST, last_k=64)
    if not spec.is_vector or spec.normalize != "none":
        raise ConfigError(f"difficulty pooling must yield one unnormalized vector, got {format_pooling_spec(spec)}")
    return spec


def cmd_difficulty_train(args) -> int:
    started = time.time()
    spec = _classifier_spec(args.pooling)
    paths = _trace_paths(args.traces)
    feats, labels = [], []
    for path in paths:
        trace = read_trace(path)
        d = trace.meta.get("label_d")
        if d is None:
            raise DomainError(f"{path}: trace metadata lacks a difficulty label (label_d)")
        feats.append(pool_classifier_features(cache_from_trace(trace), spec))
        labels.append(float(d))
    cfg = TrainConfig(
        learning_rate=args.lr,
        momentum=args.momentum,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )
    estimator = fit_estimator(np.asarray(feats), np.asarray(labels), cfg)
    out_path = args.out or os.path.join(_resolve_out(args.out_dir), "difficulty-model.kvtrace")
    meta = {
        "kind": ESTIMATOR_KIND,
        "pooling": format_pooling_spec(spec),
        "d_in": estimator.d_in,
        "train": dataclasses.asdict(cfg),
        "n_train": len(feats),
    }
    write_trace(out_path, TraceFile(meta=meta, tensors=estimator_tensors(estimator)))
    _write_manifest(
        os.path.dirname(out_path) or ".",
        "difficulty-train",
        args.argv,
        {"seed": args.seed},
        meta,
        [out_path],
        started,
    )
    print(f"trained on {len(feats)} traces -> {out_path}")
    return 0


def cmd_difficulty_predict(args) -> int:
    started = time.time()
    model_trace = read_trace(args.model)
    if model_trace.meta.get("kind") != ESTIMATOR_KIND:
        raise DomainError(f"{args.model} is not a difficulty-estimator trace")
    estimator = estimator_from_tensors(model_trace.tensors)
    spec = parse_pooling_spec(args.pooling or model_trace.meta.get("pooling"))
    paths = _trace_paths(args.traces)
    out_path = args.out or os.path.join(_resolve_out(args.out_dir), "difficulty-predictions.tsv")
    lines = ["trace_id\td_hat"]
    for path in paths:
        trace = read_trace(path)
        d_hat = estimator.predict(pool_classifier_features(cache_from_trace(trace), spec))
        lines.append(f"{_trace_id(trace, path)}\t{d_hat:.4f}")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    config = {"model": os.path.basename(args.model), "pooling": format_pooling_spec(spec)}
    _write_manifest(os.path.dirname(out_path) or ".", "difficulty-predict", args.argv, {}, config, [out_path], started)
    print(f"predicted {len(paths)} traces -> {out_path}")
    return 0


# ---------------------------------------------------------------- switch run


def _episode_rows(wl, mode: str):
    """Run every episode under one policy; returns per-episode result dicts."""
    rows = []
    for ep in wl.episodes:
        if mode in (MODE_FAST, MODE_SLOW):
            tokens, transcript = run_plain_mode(wl.model, ep.prompt, mode, wl.cfg)
        else:
            cfg = dataclasses.replace(wl.cfg, mode=mode)
            tokens, transcript = run_controlled_generation(wl.model, wl.estimator, ep.prompt, cfg)
        generated = tokens[len(ep.prompt) :]
        rows.append(
            {
                "trace_id": ep.trace_id,
                "is_easy": ep.is_easy,
                "correct": grade_answer(generated, ep.gold, wl.cfg.stop_tokens),
                "tokens_generated": transcript.tokens_generated,
                "transcript": transcript,
            }
        )
    return rows


def _summary(rows, slow_rows) -> dict:
    acc = float(np.mean([r["correct"] for r in rows]))
    tokens = float(np.mean([r["tokens_generated"] for r in rows]))
    slow_tokens = float(np.mean([r["tokens_generated"] for r in slow_rows]))
    reduction = 0.0 if slow_tokens == 0 else 1.0 - tokens / slow_tokens
    return {"accuracy": acc, "mean_tokens": tokens, "reduction_vs_slow": reduction}


def cmd_switch_run(args) -> int:
    started = time.time()
    pooling = _classifier_spec(args.pooling)
    wl = build_switching_workload(
        n_easy=args.n_easy,
        n_hard=args.n_hard,
        seed=args.seed,
        pooling=pooling,
        tau=args.tau,
        tau_fast=args.tau_fast,
        tau_slow=args.tau_slow,
        checkpoint_every=args.checkpoint_every,
        max_new_tokens=args.max_new_tokens,
    )
    policies = {
        "always-fast": _episode_rows(wl, MODE_FAST),
        "always-slow": _episode_rows(wl, MODE_SLOW),
        f"kv-{args.mode}": _episode_rows(wl, args.mode),
    }
    out_dir = _resolve_out(args.out)
    transcripts_path = os.path.join(out_dir, "transcripts.txt")
    with open(transcripts_path, "w", encoding="utf-8") as fh:
        for row in policies[f"kv-{args.mode}"]:
            for ev in row["transcript"].events:
                score = "-" if ev.score is None else f"{ev.score:.4f}"
                fh.write(f"{row['trace_id']}\t{ev.token_index}\t{ev.action}\t{score}\n")
    results_path = os.path.join(out_dir, "results.tsv")
    with open(results_path, "w", encoding="utf-8") as fh:
        fh.write("policy\ttrace_id\tpopulation\tcorrect\ttokens_generated\n")
        for policy, rows in policies.items():
            for r in rows:
                pop = "easy" if r["is_easy"] else "hard"
                fh.write(f"{policy}\t{r['trace_id']}\t{pop}\t{int(r['correct'])}\t{r['tokens_generated']}\n")
    summary_path = os.path.join(out_dir, "summary.tsv")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("method\taccuracy\tmean_tokens\treduction_vs_slow\n")
        for policy, rows in policies.items():
            s = _summary(rows, policies["always-slow"])
            fh.write(f"{policy}\t{s['accuracy']:.4f}\t{s['mean_tokens']:.2f}\t{s['reduction_vs_slow']:.4f}\n")
            print(f"{policy}: accuracy={s['accuracy']:.3f} mean_tokens={s['mean_tokens']:.1f} reduction={s['reduction_vs_slow']:.1%}")
    config = {
        "n_easy": args.n_easy,
        "n_hard": args.n_hard,
        "tau": args.tau,
        "tau_fast": args.tau_fast,
        "tau_slow": args.tau_slow,
        "mode": args.mode,
        "pooling": format_pooling_spec(pooling),
        "checkpoint_every": args.checkpoint_every,
        "max_new_tokens": args.max_new_tokens,
        "oracle_report": wl.oracle_report,
    }
    _write_manifest(
        out_dir,
        "switch-run",
        args.argv,
        {"seed": args.seed},
        config,
        [transcripts_path, results_path, summary_path],
        started,
    )
    return 0


# ---------------------------------------------------------------- sweep


def _parse_grid(text: str, budget: int, model_layers: int) -> list:
    entries = []
    for part in text.split(","):
        try:
            layers, tokens = (int(x) for x in part.lower().split("x"))
        except ValueError as exc:
            raise UsageError(f"grid entries look like `8x32`, got {part!r}") from exc
        if layers * tokens != budget:
            raise ConfigError(f"grid entry {part!r}: {layers}*{tokens} != budget {budget}")
        if layers > model_layers:
            raise ConfigError(f"grid entry {part!r} wants {layers} layers but the model has {model_layers}")
        entries.append((layers, tokens))
    return entries


def cmd_sweep(args) -> int:
    started = time.time()
    entries = _parse_grid(args.grid, args.budget, args.model_layers)
    out_dir = _resolve_out(args.out)
    rows = []
    for layers, tokens in entries:
        pooling = PoolingSpec(
            source=SOURCE_KV,
            position_agg=POS_SUM_LAST,
            last_k=tokens,
            layers=evenly_spaced_layers(args.model_layers, layers),
        )
        wl = build_switching_workload(
            n_easy=args.n_easy,
            n_hard=args.n_hard,
            seed=args.seed,
            num_layers=args.model_layers,
            pooling=pooling,
        )
        slow_rows = _episode_rows(wl, MODE_SLOW)
        for mode, label in ((MODE_CLASSIFICATION, "kv-classification"), (MODE_GENERATIVE, "kv-generative")):
            s = _summary(_episode_rows(wl, mode), slow_rows)
            rows.append(
                {
                    "config": f"{layers}x{tokens}",
                    "method": label,
                    "accuracy": s["accuracy"],
                    "mean_tokens": s["mean_tokens"],
                }
            )
    table_path = os.path.join(out_dir, "sweep.tsv")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write("config\tmethod\taccuracy\tmean_tokens\n")
        for r in rows:
            fh.write(f"{r['config']}\t{r['method']}\t{r['accuracy']:.4f}\t{r['mean_tokens']:.2f}\n")
            print(f"{r['config']} {r['method']}: accuracy={r['accuracy']:.3f} tokens={r['mean_tokens']:.1f}")
    outputs = [table_path]
    if args.plot:
        from . import plots

        fig_path = os.path.join(out_dir, "sweep.png")
        plots.save_sweep_figure(rows, fig_path)
        outputs.append(fig_path)
    config = {"budget": args.budget, "grid": args.grid, "model_layers": args.model_layers,
              "n_easy": args.n_easy, "n_hard": args.n_hard}
    _write_manifest(out_dir, "sweep", args.argv, {"seed": args.seed}, config, outputs, started)
    return 0


# ---------------------------------------------------------------- mem-estimate


def cmd_mem_estimate(args) -> int:
    started = time.time()
    config = ModelConfig(
        num_layers=args.num_layers,
        num_heads=args.num_heads,
        num_kv_heads=args.num_kv_heads,
        d_model=args.d_model,
    )
    try:
        ctx_list = sorted({int(c) for c in args.ctx.split(",")})
    except ValueError as exc:
        raise UsageError(f"--ctx must be a comma-separated integer list, got {args.ctx!r}") from exc
    reports = [estimate_memory(config, ctx, args.dtype_bytes) for ctx in ctx_list]
    out_dir = _resolve_out(args.out)
    table_path = os.path.join(out_dir, "memory.tsv")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write("context_len\tkv_bytes\thidden_bytes\n")
        for r in reports:
            fh.write(f"{r.context_len}\t{r.kv_bytes}\t{r.hidden_bytes}\n")
    for r in reports:
        print(f"ctx={r.context_len}: kv={r.kv_bytes} hidden={r.hidden_bytes}")
    outputs = [table_path]
    if args.plot:
        from . import plots

        fig_path = os.path.join(out_dir, "memory.png")
        plots.save_memory_figure(reports, fig_path)
        outputs.append(fig_path)
    cfg = {
        "num_layers": args.num_layers,
        "num_heads": args.num_heads,
        "num_kv_heads": args.num_kv_heads,
        "d_model": args.d_model,
        "dtype_bytes": args.dtype_bytes,
        "ctx": ctx_list,
    }
    _write_manifest(out_dir, "mem-estimate", args.argv, {}, cfg, outputs, started)
    return 0


# ---------------------------------------------------------------- trace validate


def cmd_trace_validate(args) -> int:
    worst = 0
    for path in args.files:
        try:
            trace = read_trace(path)
        except TraceFormatError as exc:
            print(f"{path}: REJECTED ({type(exc).__name__}: {exc})")
            worst = max(worst, 3)
            continue
        violations = validate_trace(trace)
        if violations:
            worst = max(worst, 3)
            for v in violations:
                print(f"{path}: {v}")
        else:
            print(f"{path}: OK ({len(trace.tensors)} tensors)")
    return worst


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kvrep",
        description="KV-cache representations: toy transformer, trajectory confidence, fast/slow switching.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="generate labeled synthetic trace corpora")
    p.add_argument("-n", "--n-traces", type=int, required=True)
    p.add_argument("--corpus", choices=["coe", "difficulty"], default="coe")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--correct-fraction", type=float, default=0.5, help="coe corpus: fraction labeled correct")
    p.add_argument("--mix", default="0.25,0.25,0.25,0.25", help="difficulty corpus: fractions for d=0,25,75,100")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("coe", help="score traces with trajectory or baseline methods")
    p.add_argument("--traces", nargs="+", required=True)
    p.add_argument("--method", choices=[METHOD_COE_R, METHOD_COE_C, *_BASELINES], default=METHOD_COE_R)
    p.add_argument("--axis", choices=[AXIS_TOKEN, AXIS_LAYER], default=AXIS_TOKEN)
    p.add_argument("--pooling", default=None, help="pooling spec string; default fits the axis")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--out", default=None, help="scores file (default <out-dir>/scores.txt)")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_coe)

    p = sub.add_parser("eval", help="compute AUROC/FPR95/AUPR from scores + labels")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--orient", choices=["tagged", "auto"], default="tagged",
                   help="tagged: trust score orientation tags; auto: flip any method scoring below 0.5")
    p.add_argument("--out", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--plot", default=None, help="optional ROC figure path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("difficulty", help="difficulty estimator training and inference")
    dsub = p.add_subparsers(dest="difficulty_command", required=True)
    pt = dsub.add_parser("train", help="train the MLP on labeled traces")
    pt.add_argument("--traces", nargs="+", required=True)
    pt.add_argument("--pooling", default=None)
    pt.add_argument("--lr", type=float, default=1e-3)
    pt.add_argument("--momentum", type=float, default=0.9)
    pt.add_argument("--batch-size", type=int, default=32)
    pt.add_argument("--epochs", type=int, default=50)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--out", default=None)
    pt.add_argument("--out-dir", default=None)
    pt.set_defaults(func=cmd_difficulty_train)
    pp = dsub.add_parser("predict", help="score traces with a trained estimator")
    pp.add_argument("--model", required=True)
    pp.add_argument("--traces", nargs="+", required=True)
    pp.add_argument("--pooling", default=None, help="override the pooling recorded in the model trace")
    pp.add_argument("--out", default=None)
    pp.add_argument("--out-dir", default=None)
    pp.set_defaults(func=cmd_difficulty_predict)

    p = sub.add_parser("switch", help="fast/slow switching experiments")
    ssub = p.add_subparsers(dest="switch_command", required=True)
    pr = ssub.add_parser("run", help="run the controller on the synthetic workload")
    pr.add_argument("--n-easy", type=int, default=10)
    pr.add_argument("--n-hard", type=int, default=10)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--tau", type=float, default=50.0)
    pr.add_argument("--tau-fast", type=float, default=20.0)
    pr.add_argument("--tau-slow", type=float, default=80.0)
    pr.add_argument("--mode", choices=[MODE_CLASSIFICATION, MODE_GENERATIVE], default=MODE_GENERATIVE)
    pr.add_argument("--pooling", default=None)
    pr.add_argument("--checkpoint-every", type=int, default=64)
    pr.add_argument("--max-new-tokens", type=int, default=256)
    pr.add_argument("--out", default=None)
    pr.set_defaults(func=cmd_switch_run)

    p = sub.add_parser("sweep", help="layer x token budget sweep on the switching workload")
    p.add_argument("--budget", type=int, default=256)
    p.add_argument("--grid", default="8x32,4x64,2x128")
    p.add_argument("--model-layers", type=int, default=8)
    p.add_argument("--n-easy", type=int, default=6)
    p.add_argument("--n-hard", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("mem-estimate", help="closed-form cache/hidden memory accounting")
    p.add_argument("--num-layers", type=int, default=32)
    p.add_argument("--num-heads", type=int, default=32)
    p.add_argument("--num-kv-heads", type=int, default=8)
    p.add_argument("--d-model", type=int, default=4096)
    p.add_argument("--ctx", default="512,1024,2048,4096,8192,16384")
    p.add_argument("--dtype-bytes", type=int, default=4)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_mem_estimate)

    p = sub.add_parser("trace", help="trace container utilities")
    tsub = p.add_subparsers(dest="trace_command", required=True)
    pv = tsub.add_parser("validate", help="structural + semantic validation of trace files")
    pv.add_argument("files", nargs="+")
    pv.set_defaults(func=cmd_trace_validate)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except KvrepError as exc:
        print(f"validation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
