"""Command-line front end: synth / sample / train / eval / ablate / verbalize / report.

Every command takes an optional JSON config (--config) plus flag overrides
(flags win) and writes a manifest next to its outputs. See README for a full
walkthrough of the synthetic end-to-end flow.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from . import data as D
from . import metrics as M
from . import scoring as S
from .config import ConfigError, RunConfig, write_manifest
from .data import DataError, KShotConfig, RelationSchema, SyntheticConfig
from .scoring import DecodeCounter, ScoreMode, ScoringConfig
from .templates import TemplateConfig, TemplateError, TemplateVariant, VerbalizerMode
from .training import load_checkpoint, save_checkpoint, train
from .vocab import Vocab, build_vocab

_MODE_ALIASES = {
    "shared-greedy": "shared_greedy",
    "teacher-forced": "teacher_forced",
    "likelihood": "likelihood",
}


def _fail(msg: str) -> "None":
    print(f"error: {msg}", file=sys.stderr)
    raise SystemExit(2)


def _load_config(args) -> RunConfig:
    try:
        return RunConfig.load(getattr(args, "config", None))
    except ConfigError as exc:
        _fail(str(exc))


def _schema_for(args, cfg: RunConfig, schema_path: str) -> RelationSchema:
    schema = RelationSchema.load(schema_path)
    handmade_path = getattr(args, "handmade", None)
    if handmade_path:
        schema = schema.with_handmade(D.load_handmade(handmade_path, schema))
    elif cfg.verbalizer() is VerbalizerMode.HANDMADE:
        _fail("handmade verbalizer selected but no --handmade table given")
    return schema


# --- synth --------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    cfg = cfg.override(
        "synth",
        num_relations=args.num_relations,
        num_types=args.num_types,
        instances_per_relation=args.instances_per_relation,
        noise_rate=args.noise_rate,
        vocab_size=args.vocab_size,
        split_fraction=args.split_fraction,
    )
    s = cfg.synth
    syn_cfg = SyntheticConfig(
        num_relations=s.num_relations,
        num_types=s.num_types,
        instances_per_relation=s.instances_per_relation,
        noise_rate=s.noise_rate,
        vocab_size=s.vocab_size,
    )
    instances, schema = D.generate_synthetic(syn_cfg, args.seed)
    train_split, test_split = D.stratified_split(instances, s.split_fraction, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    D.save_dataset(instances, out / "corpus.json")
    D.save_dataset(train_split, out / "train.json")
    D.save_dataset(test_split, out / "test.json")
    schema.save(out / "schema.json")
    D.save_handmade(D.synthetic_handmade(schema), out / "handmade.tsv")
    write_manifest(out, "synth", cfg, args.seed)
    print(
        f"synth: {len(instances)} instances over {len(schema.entries)} relations "
        f"-> {out} (train {len(train_split)}, test {len(test_split)})"
    )
    return 0


# --- sample -------------------------------------------------------------------


def cmd_sample(args) -> int:
    cfg = _load_config(args).override("kshot", k=args.k)
    schema = RelationSchema.load(args.schema)
    corpus = D.load_dataset(args.corpus, schema)
    kshot = KShotConfig(k=cfg.kshot.k, seeds=cfg.kshot.seeds)
    train_split, dev_split = D.kshot_sample(corpus, kshot, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    D.save_dataset(train_split, out / "train.json")
    D.save_dataset(dev_split, out / "dev.json")
    write_manifest(out, "sample", cfg, args.seed)
    print(f"sample: k={kshot.k} seed={args.seed} -> train {len(train_split)}, dev {len(dev_split)}")
    return 0


# --- train --------------------------------------------------------------------


def _template_overrides(args, cfg: RunConfig) -> RunConfig:
    return cfg.override(
        "template",
        variant=getattr(args, "variant", None),
        n=getattr(args, "n", None),
        sentinel_style=getattr(args, "sentinel_style", None),
        verbalizer_mode=getattr(args, "verbalizer", None),
    )


def cmd_train(args) -> int:
    cfg = _load_config(args)
    cfg = _template_overrides(args, cfg)
    cfg = cfg.override("model", architecture=args.arch)
    cfg = cfg.override(
        "train", epochs=args.epochs, batch_size=args.batch_size, eval_every=args.eval_every
    )
    cfg = cfg.override("optimizer", lr_model=args.lr_model, lr_prompt=args.lr_prompt)
    schema = _schema_for(args, cfg, args.schema)
    train_insts = D.load_dataset(args.train, schema)
    dev_insts = D.load_dataset(args.dev, schema) if args.dev else None
    vocab = build_vocab(train_insts, schema)
    params, stats = train(
        train_insts,
        dev_insts,
        schema,
        vocab,
        cfg.template_cfg(),
        cfg.model_cfg(),
        cfg.optim_cfg(),
        cfg.train_cfg(),
        cfg.verbalizer(),
        args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    save_checkpoint(
        out / "checkpoint.npz",
        params,
        vocab_ref="vocab.txt",
        extra={"template": cfg.to_dict()["template"], "seed": args.seed},
    )
    (out / "train_stats.json").write_text(
        json.dumps(stats.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    write_manifest(out, "train", cfg, args.seed)
    final_loss = stats.epoch_losses[-1] if stats.epoch_losses else float("nan")
    print(
        f"train: {cfg.train.epochs} epochs on {len(train_insts)} instances, "
        f"final loss {final_loss:.4f} -> {out}"
    )
    return 0


# --- eval ---------------------------------------------------------------------


def _scoring_config(cfg: RunConfig, template_cfg: TemplateConfig, mode_name: str, guided: bool) -> ScoringConfig:
    return ScoringConfig(
        template=template_cfg,
        verbalizer=cfg.verbalizer(),
        mode=ScoreMode(mode_name) if mode_name != "likelihood" else ScoreMode.SHARED_GREEDY,
        guided=guided,
    )


def run_eval(
    instances,
    params,
    schema,
    vocab,
    cfg: RunConfig,
    mode_name: str = "shared_greedy",
    guided: bool = True,
    compat=None,
    buckets: dict[str, list[int]] | None = None,
):
    """Shared eval core; returns (report, outcomes, counter, seconds)."""
    template_cfg = cfg.template_cfg()
    scoring_cfg = _scoring_config(cfg, template_cfg, mode_name, guided)
    counter = DecodeCounter()
    started = time.perf_counter()
    outcomes = S.predict_many(
        instances,
        params,
        schema,
        vocab,
        scoring_cfg,
        compat=compat,
        counter=counter,
        likelihood=mode_name == "likelihood",
    )
    elapsed = time.perf_counter() - started
    preds = [o.predicted for o in outcomes]
    golds = [inst.relation for inst in instances]
    precision, recall, f1 = M.micro_f1(preds, golds, negative=schema.negative_label)
    report = M.EvalReport(precision, recall, f1, len(instances))
    if buckets:
        report.per_bucket = M.frequency_report(preds, golds, buckets, negative=schema.negative_label)
    return report, outcomes, counter, elapsed


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    params, meta = load_checkpoint(args.checkpoint)
    stored = meta.get("extra", {}).get("template")
    if stored and args.config is None:
        cfg = cfg.override("template", **stored)
    cfg = _template_overrides(args, cfg)
    mode_name = _MODE_ALIASES.get(args.mode, args.mode)
    guided = not args.no_guide and cfg.scoring.guided
    use_filter = not args.no_type_filter and cfg.scoring.type_filter
    schema = _schema_for(args, cfg, args.schema)
    vocab = Vocab.load(args.vocab)
    if len(vocab) != params.vocab_size:
        _fail(
            f"vocabulary size {len(vocab)} does not match checkpoint ({params.vocab_size})"
        )
    instances = D.load_dataset(args.data, schema)
    compat = None
    if use_filter:
        if not args.compat_from:
            _fail("type filtering needs --compat-from TRAIN_CORPUS (or pass --no-type-filter)")
        compat = D.build_type_compat(D.load_dataset(args.compat_from, schema))
    buckets = None
    if args.buckets_from:
        counts = D.train_label_counts(D.load_dataset(args.buckets_from, schema))
        high, mid, low = D.bucket_by_frequency(
            counts, instances, negative=schema.negative_label
        )
        uid_to_index = {id(inst): i for i, inst in enumerate(instances)}
        buckets = {
            name: [uid_to_index[id(inst)] for inst in subset]
            for name, subset in (("high", high), ("mid", mid), ("low", low))
        }
    report, outcomes, counter, elapsed = run_eval(
        instances, params, schema, vocab, cfg, mode_name, guided, compat, buckets
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    S.write_predictions(out / "predictions.jsonl", instances, outcomes)
    payload = report.to_dict()
    payload.update(
        {
            "mode": mode_name,
            "guided": guided,
            "type_filter": use_filter,
            "encoder_passes": counter.encoder_passes,
            "decoder_passes": counter.decoder_passes,
            "seconds": elapsed,
        }
    )
    (out / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    with (out / "metrics.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "precision", "recall", "micro_f1", "n", "seconds"])
        writer.writerow(
            [mode_name, f"{report.precision:.6f}", f"{report.recall:.6f}", f"{report.f1:.6f}", report.n_instances, f"{elapsed:.3f}"]
        )
    write_manifest(out, "eval", cfg, None)
    print(
        f"eval[{mode_name}]: P={report.precision:.4f} R={report.recall:.4f} "
        f"F1={report.f1:.4f} on {report.n_instances} instances "
        f"({counter.decoder_passes} decoder passes, {elapsed:.1f}s)"
    )
    return 0


# --- ablate -------------------------------------------------------------------

ABLATION_VARIANTS = [v.value for v in TemplateVariant]


def run_ablation(
    cfg: RunConfig,
    seeds: list[int],
    variants: list[str],
    verbalizers: list[str],
    use_filter: bool,
    out_dir: Path | None = None,
    quiet: bool = False,
) -> list[dict]:
    """Train/eval each (variant, FULL) and (default variant, verbalizer) per seed."""
    rows: list[dict] = []
    jobs: list[tuple[str, str]] = [(v, "full") for v in variants]
    jobs += [(cfg.template.variant, m) for m in verbalizers if m != "full"]
    for seed in seeds:
        s = cfg.synth
        syn_cfg = SyntheticConfig(
            num_relations=s.num_relations,
            num_types=s.num_types,
            instances_per_relation=s.instances_per_relation,
            noise_rate=s.noise_rate,
            vocab_size=s.vocab_size,
        )
        instances, schema = D.generate_synthetic(syn_cfg, seed)
        train_split, test_split = D.stratified_split(instances, s.split_fraction, seed)
        compat = D.build_type_compat(train_split) if use_filter else None
        vocab = build_vocab(train_split, schema)
        for variant, verbalizer in jobs:
            job_cfg = cfg.override("template", variant=variant, verbalizer_mode=verbalizer)
            started = time.perf_counter()
            params, _stats = train(
                train_split,
                None,
                schema,
                vocab,
                job_cfg.template_cfg(),
                job_cfg.model_cfg(),
                job_cfg.optim_cfg(),
                job_cfg.train_cfg(),
                job_cfg.verbalizer(),
                seed,
            )
            train_secs = time.perf_counter() - started
            report, _, counter, eval_secs = run_eval(
                test_split, params, schema, vocab, job_cfg,
                mode_name=job_cfg.scoring.mode, guided=job_cfg.scoring.guided,
                compat=compat,
            )
            row = {
                "seed": seed,
                "variant": variant,
                "verbalizer": verbalizer,
                "precision": report.precision,
                "recall": report.recall,
                "micro_f1": report.f1,
                "train_seconds": round(train_secs, 3),
                "eval_seconds": round(eval_secs, 3),
                "decoder_passes": counter.decoder_passes,
            }
            rows.append(row)
            if not quiet:
                print(
                    f"ablate seed={seed} variant={variant} verbalizer={verbalizer} "
                    f"F1={report.f1:.4f}"
                )
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        summary = {}
        for variant, verbalizer in jobs:
            scores = [
                r["micro_f1"]
                for r in rows
                if r["variant"] == variant and r["verbalizer"] == verbalizer
            ]
            mean, std = M.aggregate(scores)
            summary[f"{variant}/{verbalizer}"] = {"mean_f1": mean, "std_f1": std}
        (out_dir / "ablation_summary.json").write_text(
            json.dumps(summary, indent=2) + "\n", encoding="utf-8"
        )
    return rows


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    cfg = cfg.override("train", epochs=args.epochs)
    cfg = cfg.override(
        "synth",
        num_relations=args.num_relations,
        instances_per_relation=args.instances_per_relation,
        noise_rate=args.noise_rate,
    )
    seeds = [int(x) for x in args.seeds.split(",")] if args.seeds else list(cfg.kshot.seeds)
    variants = args.variants.split(",") if args.variants else ABLATION_VARIANTS
    for v in variants:
        if v not in ABLATION_VARIANTS:
            _fail(f"unknown template variant {v!r}; choose from {ABLATION_VARIANTS}")
    verbalizers = args.verbalizers.split(",") if args.verbalizers else [m.value for m in VerbalizerMode]
    out = Path(args.out)
    run_ablation(cfg, seeds, variants, verbalizers, use_filter=args.type_filter, out_dir=out)
    write_manifest(out, "ablate", cfg, None)
    print(f"ablate: wrote {out / 'ablation.csv'}")
    return 0


# --- verbalize / report -------------------------------------------------------


def cmd_verbalize(args) -> int:
    print(" ".join(D.verbalize(args.label)))
    return 0


def cmd_report(args) -> int:
    runs = [Path(p) for p in args.runs]
    rows = []
    for run in runs:
        metrics_path = run / "metrics.json"
        if not metrics_path.exists():
            _fail(f"{run} has no metrics.json")
        payload = json.loads(metrics_path.read_text(encoding="utf-8"))
        rows.append({"run": str(run), "micro_f1": payload["micro_f1"],
                     "precision": payload["precision"], "recall": payload["recall"]})
    mean, std = M.aggregate([r["micro_f1"] for r in rows])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "report.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["run", "precision", "recall", "micro_f1"])
        writer.writeheader()
        writer.writerows(rows)
        writer.writerow({"run": "aggregate(mean)", "precision": "", "recall": "", "micro_f1": mean})
        writer.writerow({"run": "aggregate(std)", "precision": "", "recall": "", "micro_f1": std})
    (out / "report.json").write_text(
        json.dumps({"runs": rows, "mean_f1": mean, "std_f1": std}, indent=2) + "\n",
        encoding="utf-8",
    )
    print(f"report: mean F1 {mean:.4f} (+/- {std:.4f}) over {len(rows)} runs -> {out}")
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relfill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="JSON run config; flags override it")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic corpus plus train/test split")
    common(p)
    p.add_argument("--seed", type=int, default=13)
    p.add_argument("--num-relations", type=int, default=None)
    p.add_argument("--num-types", type=int, default=None)
    p.add_argument("--instances-per-relation", type=int, default=None)
    p.add_argument("--noise-rate", type=float, default=None)
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--split-fraction", type=float, default=None)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("sample", help="deterministic K-shot train/dev split")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("train", help="train the infilling model")
    common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--dev", default=None)
    p.add_argument("--schema", required=True)
    p.add_argument("--handmade", default=None)
    p.add_argument("--seed", type=int, default=13)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--lr-model", type=float, default=None)
    p.add_argument("--lr-prompt", type=float, default=None)
    p.add_argument("--variant", choices=ABLATION_VARIANTS, default=None)
    p.add_argument("--verbalizer", choices=[m.value for m in VerbalizerMode], default=None)
    p.add_argument("--n", type=int, default=None, help="continuous tokens per slot")
    p.add_argument("--sentinel-style", choices=["distinct", "uniform_mask"], default=None)
    p.add_argument("--arch", choices=["enc_dec", "single_stack"], default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a corpus with a trained checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--handmade", default=None)
    p.add_argument("--compat-from", default=None, help="train corpus for the type filter")
    p.add_argument("--buckets-from", default=None, help="train corpus for frequency buckets")
    p.add_argument(
        "--mode",
        choices=["shared-greedy", "teacher-forced", "likelihood"],
        default="shared-greedy",
    )
    p.add_argument("--no-guide", action="store_true", help="ablate entity-guided decoding")
    p.add_argument("--no-type-filter", action="store_true")
    p.add_argument("--variant", choices=ABLATION_VARIANTS, default=None)
    p.add_argument("--verbalizer", choices=[m.value for m in VerbalizerMode], default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--sentinel-style", choices=["distinct", "uniform_mask"], default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="synthetic template/verbalizer ablation sweep")
    common(p)
    p.add_argument("--seeds", default=None, help="comma-separated, default 13,21,42,87,100")
    p.add_argument("--variants", default=None, help="comma-separated template variants")
    p.add_argument("--verbalizers", default=None, help="comma-separated verbalizer modes")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--num-relations", type=int, default=None)
    p.add_argument("--instances-per-relation", type=int, default=None)
    p.add_argument("--noise-rate", type=float, default=None)
    p.add_argument("--type-filter", action="store_true",
                   help="apply the type filter (off by default: synthetic type pairs identify relations)")
    p.add_argument("--no-type-filter", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("verbalize", help="print the verbalization of a label")
    p.add_argument("--label", required=True)
    p.set_defaults(fn=cmd_verbalize)

    p = sub.add_parser("report", help="aggregate metrics.json files across runs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (DataError, TemplateError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
