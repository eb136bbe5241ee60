"""Command-line front end: calibrate, schedule, simulate, analyze, cost.

Exit codes: 0 success, 1 configuration error, 2 infeasible calibration,
3 I/O failure, 4 file-schema mismatch. All commands are deterministic given
config and seeds; re-running overwrites outputs byte-identically.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path


from .config import ExperimentConfig, load_config_file
from .errors import Infeasible, InvalidInput, SchemaError
from .harness import (
    AttentionRecord,
    IntraPlan,
    make_intra_plan,
    run_with_injected_attention,
    run_with_pruning,
)
from .importance import Selector
from .metrics import PairKind, cosine_distribution, cost_model, retention_per_modality, top20_recall
from .numerics import Rng, pca2
from .schedule import (
    PruneScheduleConfig,
    ScheduleKind,
    calibrate_p_final,
    mean_retention,
    prune_ratio,
    retention_trace,
)
from .sequence import Modality
from . import tensorio

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2
EXIT_IO = 3
EXIT_SCHEMA = 4


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise InvalidInput(f"--set expects key.path=value, got {text!r}")
    path, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def _load_experiment(args) -> ExperimentConfig:
    document = load_config_file(args.config) if args.config else None
    overrides = dict(_parse_override(s) for s in (args.set or []))
    if getattr(args, "selector", None):
        overrides["selector"] = args.selector
    return ExperimentConfig.resolve(document, overrides)


# ---------------------------------------------------------------- calibrate


def cmd_calibrate(args) -> int:
    if not (0.0 < args.target < args.r0):
        raise InvalidInput("target must lie strictly between 0 and r0")
    partial = PruneScheduleConfig(
        p_init=0.0,
        p_final=0.0,
        t_mid=args.t_mid,
        beta=args.beta,
        layers=args.layers,
        kind=ScheduleKind.SIGMOID,
    )
    closed, refined = calibrate_p_final(args.target, args.r0, partial)
    achieved = mean_retention(replace(partial, p_final=refined), args.r0)
    print(f"closed_form_p_final={closed:.6f}")
    print(f"bisection_p_final={refined:.6f}")
    print(f"achieved_mean={achieved:.6f}")
    return EXIT_OK


# ----------------------------------------------------------------- schedule


def cmd_schedule(args) -> int:
    if args.config:
        cfg = ExperimentConfig.resolve(load_config_file(args.config))
        sched = cfg.schedule_config()
        header_digest = cfg.digest
    else:
        sched = PruneScheduleConfig(
            p_init=args.p_init,
            p_final=args.p_final,
            t_mid=args.t_mid,
            beta=args.beta,
            layers=args.layers,
            kind=ScheduleKind(args.kind),
        )
        params = {
            "kind": sched.kind.value, "p_init": sched.p_init, "p_final": sched.p_final,
            "t_mid": sched.t_mid, "beta": sched.beta, "layers": sched.layers, "r0": args.r0,
        }
        header_digest = hashlib.sha256(
            json.dumps(params, sort_keys=True).encode("utf-8")
        ).hexdigest()[:16]
    trace = retention_trace(sched, args.r0)
    lines = [f"# config_digest={header_digest}", "layer,prune_ratio,retention"]
    for l, r in enumerate(trace.values):
        lines.append(f"{l},{prune_ratio(l, sched):.9f},{r:.9f}")
    lines.append(f"# mean_retention={trace.mean:.9f}")
    out = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(out, encoding="utf-8")
    else:
        sys.stdout.write(out)
    return EXIT_OK


# ----------------------------------------------------------------- simulate


def _build_intra_plan(cfg: ExperimentConfig, seq) -> IntraPlan | None:
    intra = cfg.raw["intra"]
    if not intra["enabled"]:
        return None
    return make_intra_plan(
        seq,
        audio_keep=intra["audio_keep"],
        video_prune_rate=intra["video_prune_rate"],
        frames_per_chunk=intra["frames_per_chunk"],
        seed=cfg.raw["sequence"]["seed"],
    )


def _load_attention_dir(path: Path, layers: int) -> list[AttentionRecord]:
    records = []
    for layer in range(layers):
        tensor_path = path / f"layer_{layer:04d}.omtn"
        ids_path = path / f"layer_{layer:04d}.ids"
        if not tensor_path.exists() or not ids_path.exists():
            raise InvalidInput(f"missing attention files for layer {layer} in {path}")
        values = tensorio.read_tensor(tensor_path)
        if values.ndim != 2:
            raise SchemaError(f"{tensor_path}: expected a rank-2 tensor")
        ids = tensorio.read_ids(ids_path)
        if len(ids) != values.shape[1]:
            raise SchemaError(f"{ids_path}: {len(ids)} ids for {values.shape[1]} columns")
        records.append(AttentionRecord(layer=layer, col_ids=ids, values=values))
    return records


def _simulate_one(raw_config: dict, out_dir: str, dump_attention: bool, inject_dir: str | None) -> str:
    cfg = ExperimentConfig.resolve(raw_config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    seq = cfg.build_sequence()
    sched = cfg.schedule_config()
    tds = cfg.tds_config()
    intra = _build_intra_plan(cfg, seq)
    selector_seed = None  # derived from the model seed inside the harness

    attention_out: list | None = [] if dump_attention else None
    if inject_dir is not None:
        records = _load_attention_dir(Path(inject_dir), cfg.raw["model"]["layers"])
        trace = run_with_injected_attention(
            seq, records, sched, tds, cfg.selector, intra,
            selector_seed=selector_seed, replay_seed=cfg.raw["model"]["seed"],
        )
    else:
        model = cfg.build_model()
        trace = run_with_pruning(
            seq, model, sched, tds, cfg.selector, intra,
            selector_seed=selector_seed, attention_out=attention_out,
        )

    digest = cfg.digest
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump({"config_digest": digest, "config": cfg.raw}, fh, sort_keys=True, indent=2)
        fh.write("\n")

    tensorio.write_trace_jsonl(out / "trace.jsonl", trace, digest)

    audio, video = retention_per_modality(trace)
    lines = [f"# config_digest={digest}", "layer,audio_retention,video_retention"]
    lines += [f"{l},{a:.9f},{v:.9f}" for l, (a, v) in enumerate(zip(audio, video))]
    (out / "retention.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    with open(out / "tokens.jsonl", "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config_digest": digest}, sort_keys=True) + "\n")
        for rec in seq.to_records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    tensorio.write_tensor(out / "embeddings.omtn", seq.embeddings)

    if attention_out is not None:
        attn_dir = out / "attention"
        attn_dir.mkdir(exist_ok=True)
        for rec in attention_out:
            tensorio.write_tensor(attn_dir / f"layer_{rec.layer:04d}.omtn", rec.values)
            tensorio.write_ids(attn_dir / f"layer_{rec.layer:04d}.ids", rec.col_ids)
        with open(attn_dir / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(
                {"config_digest": digest, "layers": len(attention_out)},
                fh,
                sort_keys=True,
                indent=2,
            )
            fh.write("\n")
    return trace.digest


def cmd_simulate(args) -> int:
    cfg = _load_experiment(args)
    out = Path(args.out)
    if args.runs == 1:
        digest = _simulate_one(cfg.raw, str(out), args.dump_attention, args.inject)
        print(f"config_digest={cfg.digest}")
        print(f"trace_digest={digest}")
        return EXIT_OK

    run_configs = []
    for i in range(args.runs):
        raw = json.loads(cfg.canonical_json())
        raw["sequence"]["seed"] = cfg.raw["sequence"]["seed"] + i
        raw["model"]["seed"] = cfg.raw["model"]["seed"] + i
        run_configs.append(raw)
    run_dirs = [str(out / f"run_{i:04d}") for i in range(args.runs)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            digests = list(
                pool.map(
                    _simulate_one,
                    run_configs,
                    run_dirs,
                    [args.dump_attention] * args.runs,
                    [args.inject] * args.runs,
                )
            )
    else:
        digests = [
            _simulate_one(raw, d, args.dump_attention, args.inject)
            for raw, d in zip(run_configs, run_dirs)
        ]
    for i, digest in enumerate(digests):
        print(f"run_{i:04d} trace_digest={digest}")
    return EXIT_OK


# ------------------------------------------------------------------ analyze


def _analyze_recall(args) -> str:
    values = tensorio.read_tensor(args.attention)
    recall = top20_recall(values, per_row=args.per_row)
    return json.dumps(
        {"metric": "recall", "entries": int(values.size), "per_row": args.per_row, "recall": recall},
        sort_keys=True,
    ) + "\n"


def _analyze_retention(args) -> str:
    trace, summary = tensorio.read_trace_jsonl(args.trace)
    audio, video = retention_per_modality(trace)
    lines = [f"# config_digest={summary.get('config_digest', 'none')}", "layer,audio_retention,video_retention"]
    lines += [f"{l},{a:.9f},{v:.9f}" for l, (a, v) in enumerate(zip(audio, video))]
    return "\n".join(lines) + "\n"


def _read_token_modalities(path) -> list[Modality]:
    modalities = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "modality" in obj:
                try:
                    modalities.append(Modality(obj["modality"]))
                except ValueError:
                    raise SchemaError(f"{path}: unknown modality {obj['modality']!r}") from None
            elif "config_digest" not in obj:
                raise SchemaError(f"{path}: token record without a modality")
    return modalities


def _analyze_cosine(args) -> str:
    emb = tensorio.read_tensor(args.embeddings)
    modalities = _read_token_modalities(args.tokens)
    if len(modalities) != emb.shape[0]:
        raise SchemaError(
            f"{args.tokens}: {len(modalities)} tokens for {emb.shape[0]} embedding rows"
        )
    hist = cosine_distribution(
        emb, modalities, PairKind(args.pair), sample_cap=args.cap, rng=Rng(args.seed)
    )
    edges = hist.bin_edges
    lines = [f"# pair_kind={args.pair} pairs_used={hist.pairs_used}", "bin_lo,bin_hi,count"]
    lines += [
        f"{edges[i]:.2f},{edges[i + 1]:.2f},{c}" for i, c in enumerate(hist.counts)
    ]
    return "\n".join(lines) + "\n"


def _analyze_pca(args) -> str:
    emb = tensorio.read_tensor(args.embeddings)
    projection, (ev1, ev2) = pca2(emb)
    lines = [f"# eigenvalues={ev1:.9f},{ev2:.9f}", "axis1,axis2"]
    lines += [f"{row[0]:.9f},{row[1]:.9f}" for row in projection]
    return "\n".join(lines) + "\n"


def cmd_analyze(args) -> int:
    handlers = {
        "recall": _analyze_recall,
        "retention": _analyze_retention,
        "cosine": _analyze_cosine,
        "pca": _analyze_pca,
    }
    required = {
        "recall": ["attention"],
        "retention": ["trace"],
        "cosine": ["embeddings", "tokens"],
        "pca": ["embeddings"],
    }
    for name in required[args.metric]:
        if getattr(args, name) is None:
            raise SchemaError(f"--metric {args.metric} requires --{name}")
    out = handlers[args.metric](args)
    if args.out:
        Path(args.out).write_text(out, encoding="utf-8")
    else:
        sys.stdout.write(out)
    return EXIT_OK


# --------------------------------------------------------------------- cost


def cmd_cost(args) -> int:
    trace, summary = tensorio.read_trace_jsonl(args.trace)
    report = cost_model(trace, d=args.d, bytes_per_element=args.bytes)
    obj = report.to_json_obj()
    obj["config_digest"] = summary.get("config_digest", "none")
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avprune",
        description="Layer-wise audiovisual token pruning: schedules, simulation, diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="solve p_final for a target mean retention")
    cal.add_argument("--target", type=float, required=True)
    cal.add_argument("--r0", type=float, required=True)
    cal.add_argument("--layers", type=int, required=True)
    cal.add_argument("--beta", type=float, default=20.0)
    cal.add_argument("--t-mid", dest="t_mid", type=float, default=0.5)
    cal.set_defaults(func=cmd_calibrate)

    sch = sub.add_parser("schedule", help="tabulate (layer, p_l, r_l) as CSV")
    sch.add_argument("--config")
    sch.add_argument("--kind", choices=[k.value for k in ScheduleKind], default="sigmoid")
    sch.add_argument("--p-init", dest="p_init", type=float, default=0.0)
    sch.add_argument("--p-final", dest="p_final", type=float, default=0.2)
    sch.add_argument("--t-mid", dest="t_mid", type=float, default=0.5)
    sch.add_argument("--beta", type=float, default=20.0)
    sch.add_argument("--layers", type=int, default=28)
    sch.add_argument("--r0", type=float, default=0.45)
    sch.add_argument("--out")
    sch.set_defaults(func=cmd_schedule)

    sim = sub.add_parser("simulate", help="run the pruning harness and write artifacts")
    sim.add_argument("--config")
    sim.add_argument("--set", action="append", metavar="KEY.PATH=VALUE")
    sim.add_argument("--selector", choices=[s.value for s in Selector])
    sim.add_argument("--out", required=True)
    sim.add_argument("--dump-attention", action="store_true")
    sim.add_argument("--inject", metavar="DIR", help="replay dumped attention instead of the forward pass")
    sim.add_argument("--runs", type=int, default=1)
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="diagnostics over dumped artifacts")
    ana.add_argument("--metric", choices=["recall", "retention", "cosine", "pca"], required=True)
    ana.add_argument("--trace")
    ana.add_argument("--attention")
    ana.add_argument("--embeddings")
    ana.add_argument("--tokens")
    ana.add_argument("--pair", choices=[p.value for p in PairKind], default="AV")
    ana.add_argument("--cap", type=int, default=100_000)
    ana.add_argument("--seed", type=int, default=0)
    ana.add_argument("--per-row", dest="per_row", action="store_true")
    ana.add_argument("--out")
    ana.set_defaults(func=cmd_analyze)

    cost = sub.add_parser("cost", help="analytic FLOPs/KV-memory report for a trace")
    cost.add_argument("--trace", required=True)
    cost.add_argument("--d", type=int, required=True)
    cost.add_argument("--bytes", type=int, choices=[2, 4], default=2)
    cost.add_argument("--out")
    cost.set_defaults(func=cmd_cost)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    schema_exit = {"analyze", "cost"}
    try:
        return args.func(args)
    except Infeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA if args.command in schema_exit else EXIT_IO


def entrypoint():  # console-script shim
    raise SystemExit(main())
