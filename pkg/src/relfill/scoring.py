"""Entity-guided decoding, relation scoring, type filtering, and prediction.

Two probability scoring modes are provided. SHARED_GREEDY (the default) runs
one greedy pass from the decoder seed and reads every candidate's per-step
token probabilities off the shared pass, so its decoder cost per instance is
independent of the size of the relation inventory. TEACHER_FORCED conditions
step j of candidate r on r's own previous tokens and costs one decoder pass
per candidate, as does the sequence-log-likelihood baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .data import Instance, RelationSchema, TypeCompatMap
from .model import EncoderStates, ModelParams, decode_all_steps, decode_step, encode
from .templates import (
    ScoringPrefix,
    TemplateConfig,
    VerbalizerMode,
    build_source,
    build_target_for,
    relation_segment,
    scoring_prefix,
)
from .vocab import Vocab


class ScoringError(Exception):
    pass


class ScoreMode(str, Enum):
    SHARED_GREEDY = "shared_greedy"
    TEACHER_FORCED = "teacher_forced"


@dataclass(frozen=True)
class ScoringConfig:
    template: TemplateConfig
    verbalizer: VerbalizerMode = VerbalizerMode.FULL
    mode: ScoreMode = ScoreMode.SHARED_GREEDY
    guided: bool = True
    max_preamble_steps: int = 32  # cap when the ablation generates its own preamble


@dataclass
class DecodeCounter:
    """Instrumentation: forward passes through each stack."""

    encoder_passes: int = 0
    decoder_passes: int = 0


@dataclass
class ScoreTable:
    """Per-relation scores with the per-step probabilities they came from."""

    scores: dict[str, float]
    step_probs: dict[str, tuple[float, ...]]
    filtered: set[str] = field(default_factory=set)
    kind: str = "probability"
    mode: str = ScoreMode.SHARED_GREEDY.value
    guided: bool = True


@dataclass
class PredictOutcome:
    predicted: str
    table: ScoreTable
    type_filtered: bool
    fallback_unfiltered: bool = False


def _resolve_prefix(
    params: ModelParams,
    enc: EncoderStates,
    spec: ScoringPrefix,
    max_steps: int,
    counter: DecodeCounter | None,
) -> list[int]:
    """Materialize the decoder seed, greedily generating it when unguided."""
    prefix = list(spec.ids)
    remaining = spec.generate_delims
    steps = 0
    while remaining > 0 and steps < max_steps:
        dist = decode_step(params, enc, prefix)
        if counter is not None:
            counter.decoder_passes += 1
        tok = int(np.argmax(dist))
        prefix.append(tok)
        steps += 1
        if tok == spec.delimiter_id:
            remaining -= 1
    return prefix


def _candidate_segments(
    schema: RelationSchema, mode: VerbalizerMode, vocab: Vocab
) -> dict[str, list[int]]:
    return {e.label: relation_segment(e, mode, vocab) for e in schema.entries}


def entity_guided_score(
    inst: Instance,
    params: ModelParams,
    schema: RelationSchema,
    vocab: Vocab,
    cfg: ScoringConfig,
    counter: DecodeCounter | None = None,
    enc: EncoderStates | None = None,
) -> ScoreTable:
    """Length-normalized mean of per-step candidate token probabilities."""
    if enc is None:
        enc = encode(params, build_source(inst, cfg.template, vocab))
        if counter is not None:
            counter.encoder_passes += 1
    spec = scoring_prefix(inst, cfg.template, vocab, cfg.guided)
    prefix = _resolve_prefix(params, enc, spec, cfg.max_preamble_steps, counter)
    segments = _candidate_segments(schema, cfg.verbalizer, vocab)

    step_probs: dict[str, tuple[float, ...]] = {}
    if cfg.mode is ScoreMode.TEACHER_FORCED:
        for label, seg in segments.items():
            dists = decode_all_steps(params, enc, prefix + seg[:-1])
            if counter is not None:
                counter.decoder_passes += 1
            base = len(prefix) - 1
            step_probs[label] = tuple(float(dists[base + j][seg[j]]) for j in range(len(seg)))
    else:
        max_len = max(len(seg) for seg in segments.values())
        cur = list(prefix)
        dists = []
        for _ in range(max_len):
            dist = decode_step(params, enc, cur)
            if counter is not None:
                counter.decoder_passes += 1
            dists.append(dist)
            cur.append(int(np.argmax(dist)))
        for label, seg in segments.items():
            step_probs[label] = tuple(float(dists[j][seg[j]]) for j in range(len(seg)))

    scores = {label: sum(p) / len(p) for label, p in step_probs.items()}
    return ScoreTable(
        scores=scores,
        step_probs=step_probs,
        kind="probability",
        mode=cfg.mode.value,
        guided=cfg.guided,
    )


def apply_type_filter(
    table: ScoreTable,
    compat: TypeCompatMap,
    inst: Instance,
    schema: RelationSchema,
) -> ScoreTable:
    """Discard relations whose admissible type pairs exclude the instance's pair.

    The negative label is never filtered, and filtering is skipped entirely
    when the instance's pair was never seen with any relation (nothing useful
    could survive).
    """
    pair = inst.type_pair
    witnessed = any(pair in pairs for pairs in compat.values())
    if not witnessed:
        return table
    filtered = set(table.filtered)
    for entry in schema.entries:
        if entry.label == schema.negative_label:
            continue
        pairs = compat.get(entry.label)
        if pairs and pair not in pairs:
            filtered.add(entry.label)
    return ScoreTable(
        scores=table.scores,
        step_probs=table.step_probs,
        filtered=filtered,
        kind=table.kind,
        mode=table.mode,
        guided=table.guided,
    )


def _argmax_label(table: ScoreTable, schema: RelationSchema, ignore_filter: bool = False) -> str | None:
    best = None
    best_score = None
    for entry in schema.entries:  # schema order makes ties deterministic
        if not ignore_filter and entry.label in table.filtered:
            continue
        s = table.scores[entry.label]
        if best_score is None or s > best_score:
            best, best_score = entry.label, s
    return best


def predict(
    inst: Instance,
    params: ModelParams,
    schema: RelationSchema,
    vocab: Vocab,
    cfg: ScoringConfig,
    compat: TypeCompatMap | None = None,
    counter: DecodeCounter | None = None,
) -> PredictOutcome:
    """Score, optionally type-filter, and take the highest-scoring relation."""
    table = entity_guided_score(inst, params, schema, vocab, cfg, counter)
    if compat is not None:
        table = apply_type_filter(table, compat, inst, schema)
    chosen = _argmax_label(table, schema)
    fallback = False
    if chosen is None:
        chosen = _argmax_label(table, schema, ignore_filter=True)
        fallback = True
    if chosen is None:
        raise ScoringError("no candidate relations to score")
    return PredictOutcome(
        predicted=chosen,
        table=table,
        type_filtered=compat is not None,
        fallback_unfiltered=fallback,
    )


def likelihood_predict(
    inst: Instance,
    params: ModelParams,
    schema: RelationSchema,
    vocab: Vocab,
    cfg: ScoringConfig,
    compat: TypeCompatMap | None = None,
    counter: DecodeCounter | None = None,
) -> PredictOutcome:
    """Baseline: score each candidate by its full target-sequence log-likelihood.

    The whole target (type tokens included) is scored rather than given, so
    this costs one decoder pass per relation.
    """
    enc = encode(params, build_source(inst, cfg.template, vocab))
    if counter is not None:
        counter.encoder_passes += 1
    scores: dict[str, float] = {}
    step_probs: dict[str, tuple[float, ...]] = {}
    for entry in schema.entries:
        target = build_target_for(inst, entry.label, cfg.template, cfg.verbalizer, schema, vocab)
        token_ids = [vocab.bos_id, *target.ids[:-1]]
        dists = decode_all_steps(params, enc, token_ids)
        if counter is not None:
            counter.decoder_passes += 1
        probs = tuple(float(dists[k][target.ids[k]]) for k in range(len(target.ids)))
        step_probs[entry.label] = probs
        scores[entry.label] = float(np.sum(np.log(probs)))
    table = ScoreTable(
        scores=scores,
        step_probs=step_probs,
        kind="log_likelihood",
        mode="likelihood",
        guided=False,
    )
    if compat is not None:
        table = apply_type_filter(table, compat, inst, schema)
    chosen = _argmax_label(table, schema)
    fallback = False
    if chosen is None:
        chosen = _argmax_label(table, schema, ignore_filter=True)
        fallback = True
    return PredictOutcome(
        predicted=chosen,
        table=table,
        type_filtered=compat is not None,
        fallback_unfiltered=fallback,
    )


def predict_many(
    instances: list[Instance],
    params: ModelParams,
    schema: RelationSchema,
    vocab: Vocab,
    cfg: ScoringConfig,
    compat: TypeCompatMap | None = None,
    counter: DecodeCounter | None = None,
    likelihood: bool = False,
) -> list[PredictOutcome]:
    fn = likelihood_predict if likelihood else predict
    return [fn(inst, params, schema, vocab, cfg, compat, counter) for inst in instances]


def write_predictions(
    path: str | Path, instances: list[Instance], outcomes: list[PredictOutcome]
) -> None:
    """One JSON record per instance: gold, prediction, scores, filter, flags."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for inst, out in zip(instances, outcomes):
            rec = {
                "uid": inst.uid,
                "gold": inst.relation,
                "predicted": out.predicted,
                "scores": out.table.scores,
                "filtered": sorted(out.table.filtered),
                "flags": {
                    "kind": out.table.kind,
                    "mode": out.table.mode,
                    "guided": out.table.guided,
                    "type_filtered": out.type_filtered,
                    "fallback_unfiltered": out.fallback_unfiltered,
                },
            }
            fh.write(json.dumps(rec) + "\n")
